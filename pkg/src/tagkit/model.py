"""Desk-scale multi-label classifier: strided encoder + multi-head attention pooling.

Two variants share one parameter/checkpoint machinery:

- "attention": two strided affine+tanh stages reduce (time, freq) input to a
  short frame sequence; per head, an attention branch (sigmoid, normalized to
  sum to 1 over time per class) weights a classification branch, the weighted
  sums are combined through softmax gates, and a final sigmoid yields
  per-class probabilities.
- "linear": temporal mean pooling of the raw input followed by one affine
  map; pre-sigmoid logits are exactly linear in the parameters, which is
  what makes weight averaging commute with logit averaging.

All math is float64 and gradients are written out by hand; grad_check
compares them against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import MaskParams, apply_mask, mixup
from .corpus import MultiLabelCorpus
from .metrics import EvalReport, evaluate
from .rng import stream, stream_seed
from .sampler import AugmentConfig, make_weights, plan_epoch


class ModelError(Exception):
    pass


class DivergenceError(ModelError):
    """Training hit a non-finite loss or gradient."""


class CheckpointError(ModelError):
    pass


class InitMismatchError(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    time_frames: int
    freq_bins: int
    variant: str = "attention"
    num_heads: int = 4
    embed_dim: int = 64  # encoder output width D
    hidden_dim: int = 32  # stage-1 width
    time_strides: tuple[int, int] = (8, 4)

    def __post_init__(self):
        if self.num_classes < 1:
            raise ModelError("num_classes must be >= 1")
        if self.variant not in ("attention", "linear"):
            raise ModelError(f"unknown variant {self.variant!r}")
        if self.variant == "attention":
            if self.num_heads < 1:
                raise ModelError("num_heads must be >= 1")
            s1, s2 = self.time_strides
            if s1 < 1 or s2 < 1 or self.time_frames % (s1 * s2) != 0:
                raise ModelError(
                    f"time_frames {self.time_frames} not divisible by strides {self.time_strides}"
                )

    @property
    def encoded_frames(self) -> int:
        s1, s2 = self.time_strides
        return self.time_frames // (s1 * s2)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Model:
    """Parameter container plus forward/backward for one config."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        expected = {name for name, _ in self.param_manifest(config)}
        if set(params) != expected:
            raise ModelError(f"params {sorted(params)} != expected {sorted(expected)}")
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    @staticmethod
    def param_manifest(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
        c = config.num_classes
        if config.variant == "linear":
            return [("w", (config.freq_bins, c)), ("b", (c,))]
        s1, s2 = config.time_strides
        d1, d = config.hidden_dim, config.embed_dim
        h = config.num_heads
        return [
            ("enc1_w", (s1 * config.freq_bins, d1)),
            ("enc1_b", (d1,)),
            ("enc2_w", (s2 * d1, d)),
            ("enc2_b", (d,)),
            ("att_w", (h, d, c)),
            ("att_b", (h, c)),
            ("cls_w", (h, d, c)),
            ("cls_b", (h, c)),
            ("head_gates", (h,)),
        ]

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "Model":
        """Fresh parameters: weights ~ N(0, 1/fan_in), biases and gates zero."""
        params = {}
        for name, shape in cls.param_manifest(config):
            if name.endswith("_b") or name in ("b", "head_gates"):
                params[name] = np.zeros(shape)
            else:
                fan_in = shape[0] if len(shape) == 2 else shape[1]
                params[name] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)
        return cls(config, params)

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- forward ---------------------------------------------------------

    def _encode(self, x: np.ndarray):
        """(B, T, F) -> (B, T', D) through the two strided affine+tanh stages."""
        p = self.params
        s1, s2 = self.config.time_strides
        bsz, t, f = x.shape
        r1 = x.reshape(bsz, t // s1, s1 * f)
        h1 = np.tanh(r1 @ p["enc1_w"] + p["enc1_b"])
        r2 = h1.reshape(bsz, t // (s1 * s2), s2 * h1.shape[2])
        h2 = np.tanh(r2 @ p["enc2_w"] + p["enc2_b"])
        return r1, h1, r2, h2

    def _forward_full(self, x: np.ndarray) -> dict:
        """Forward pass keeping every intermediate needed by the backward pass."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.shape[1:] != (self.config.time_frames, self.config.freq_bins):
            raise ModelError(
                f"input shape {x.shape[1:]} != configured "
                f"{(self.config.time_frames, self.config.freq_bins)}"
            )
        p = self.params
        if self.config.variant == "linear":
            pooled = x.mean(axis=1)  # (B, F)
            logits = pooled @ p["w"] + p["b"]
            cache = {"pooled": pooled, "logits": logits, "att_norm": None}
        else:
            r1, h1, r2, h = self._encode(x)
            att_logit = np.einsum("btd,hdc->bhtc", h, p["att_w"]) + p["att_b"][None, :, None, :]
            att = _sigmoid(att_logit)
            att_sum = att.sum(axis=2, keepdims=True)  # (B, H, 1, C)
            att_norm = att / att_sum
            cls = np.einsum("btd,hdc->bhtc", h, p["cls_w"]) + p["cls_b"][None, :, None, :]
            head_out = (att_norm * cls).sum(axis=2)  # (B, H, C)
            g = p["head_gates"]
            gamma = np.exp(g - g.max())
            gamma /= gamma.sum()
            logits = np.einsum("bhc,h->bc", head_out, gamma)
            cache = {
                "r1": r1, "h1": h1, "r2": r2, "h": h,
                "att": att, "att_sum": att_sum, "att_norm": att_norm,
                "cls": cls, "head_out": head_out, "gamma": gamma,
                "logits": logits,
            }
        cache["squeeze"] = squeeze
        if not np.all(np.isfinite(cache["logits"])):
            raise DivergenceError("non-finite activations in forward pass")
        return cache

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Per-class probabilities plus the normalized attention maps (B, H, T', C).

        Accepts one (time, freq) matrix or a batch; the linear variant has
        no attention maps and returns None for them.
        """
        cache = self._forward_full(x)
        probs = _sigmoid(cache["logits"])
        att = cache["att_norm"]
        if cache["squeeze"]:
            probs = probs[0]
            att = None if att is None else att[0]
        return probs, att

    def forward_logits(self, x: np.ndarray) -> np.ndarray:
        cache = self._forward_full(x)
        return cache["logits"][0] if cache["squeeze"] else cache["logits"]

    def predict(self, features: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """(N, T, F) -> (N, C) probability matrix, batched."""
        out = []
        for lo in range(0, len(features), batch_size):
            probs, _ = self.forward(features[lo : lo + batch_size])
            out.append(probs)
        return np.concatenate(out, axis=0)

    # -- backward --------------------------------------------------------

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """Mean logit-space BCE over the batch and its exact parameter gradients."""
        cache = self._forward_full(x)
        z = cache["logits"]
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[None]
        bsz, c = z.shape
        # softplus(z) - y*z is BCE expressed on the logit; exact gradient, no clamping.
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        dz = (_sigmoid(z) - y) / (bsz * c)
        p = self.params
        grads: dict[str, np.ndarray] = {}

        if self.config.variant == "linear":
            grads["w"] = cache["pooled"].T @ dz
            grads["b"] = dz.sum(axis=0)
        else:
            gamma, head_out = cache["gamma"], cache["head_out"]
            dgamma = np.einsum("bc,bhc->h", dz, head_out)
            grads["head_gates"] = gamma * (dgamma - float(gamma @ dgamma))
            dhead = dz[:, None, :] * gamma[None, :, None]  # (B, H, C)

            att_norm, cls = cache["att_norm"], cache["cls"]
            dcls = dhead[:, :, None, :] * att_norm  # (B, H, T, C)
            datt_norm = dhead[:, :, None, :] * cls
            inner = (datt_norm * att_norm).sum(axis=2, keepdims=True)
            datt = (datt_norm - inner) / cache["att_sum"]
            att = cache["att"]
            datt_logit = datt * att * (1.0 - att)

            h = cache["h"]
            grads["att_w"] = np.einsum("btd,bhtc->hdc", h, datt_logit)
            grads["att_b"] = datt_logit.sum(axis=(0, 2))
            grads["cls_w"] = np.einsum("btd,bhtc->hdc", h, dcls)
            grads["cls_b"] = dcls.sum(axis=(0, 2))
            dh = np.einsum("bhtc,hdc->btd", datt_logit, p["att_w"])
            dh += np.einsum("bhtc,hdc->btd", dcls, p["cls_w"])

            h1, r1, r2 = cache["h1"], cache["r1"], cache["r2"]
            dz2 = dh * (1.0 - h * h)
            grads["enc2_w"] = r2.reshape(-1, r2.shape[2]).T @ dz2.reshape(-1, dz2.shape[2])
            grads["enc2_b"] = dz2.sum(axis=(0, 1))
            dr2 = dz2 @ p["enc2_w"].T
            dh1 = dr2.reshape(h1.shape)
            dz1 = dh1 * (1.0 - h1 * h1)
            grads["enc1_w"] = r1.reshape(-1, r1.shape[2]).T @ dz1.reshape(-1, dz1.shape[2])
            grads["enc1_b"] = dz1.sum(axis=(0, 1))

        if not math.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergenceError("non-finite loss or gradient")
        return loss, grads

    # -- parameter vector ------------------------------------------------

    def params_vector(self) -> "ParameterVector":
        manifest = tuple((name, tuple(self.params[name].shape)) for name, _ in
                         self.param_manifest(self.config))
        flat = np.concatenate([self.params[name].ravel() for name, _ in manifest])
        return ParameterVector(values=flat.copy(), manifest=manifest)

    def load_vector(self, vec: "ParameterVector") -> None:
        own = self.params_vector().manifest
        if vec.manifest != own:
            raise CheckpointError("parameter manifest mismatch")
        self.params = vec.to_dict()

    @classmethod
    def from_vector(cls, config: ModelConfig, vec: "ParameterVector") -> "Model":
        model = cls.init(config, np.random.default_rng(0))
        model.load_vector(vec)
        return model


def loss(scores: np.ndarray, targets: np.ndarray, eps: float = 1e-12) -> float:
    """Probability-space BCE: mean over classes of -[y log p + (1-y) log(1-p)].

    Scores are clamped to [eps, 1-eps]; targets may be soft (mixup labels).
    """
    p = np.clip(np.asarray(scores, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(targets, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


@dataclass
class ParameterVector:
    """Flat float64 parameter vector plus the (name, shape) manifest that partitions it."""

    values: np.ndarray
    manifest: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.manifest = tuple((str(n), tuple(int(d) for d in s)) for n, s in self.manifest)
        total = sum(int(np.prod(s)) for _, s in self.manifest)
        if total != self.values.size:
            raise CheckpointError(
                f"manifest covers {total} values, vector has {self.values.size}"
            )
        if not np.all(np.isfinite(self.values)):
            raise CheckpointError("non-finite parameter values")

    def to_dict(self) -> dict[str, np.ndarray]:
        out, off = {}, 0
        for name, shape in self.manifest:
            size = int(np.prod(shape))
            out[name] = self.values[off : off + size].reshape(shape).copy()
            off += size
        return out

    def save(self, path: str | Path) -> None:
        lines = ["TAGKIT-CKPT 1"]
        for name, shape in self.manifest:
            lines.append("tensor " + name + " " + " ".join(str(d) for d in shape))
        header = ("\n".join(lines) + "\nEND\n").encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.values.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ParameterVector":
        data = Path(path).read_bytes()
        marker = b"\nEND\n"
        pos = data.find(marker)
        if pos < 0 or not data.startswith(b"TAGKIT-CKPT 1"):
            raise CheckpointError(f"not a checkpoint file: {path}")
        manifest = []
        for line in data[:pos].decode("ascii").splitlines()[1:]:
            parts = line.split()
            if parts[0] != "tensor" or len(parts) < 3:
                raise CheckpointError(f"bad manifest line: {line!r}")
            manifest.append((parts[1], tuple(int(d) for d in parts[2:])))
        payload = np.frombuffer(data[pos + len(marker) :], dtype="<f8")
        return cls(values=payload.astype(np.float64), manifest=tuple(manifest))


def load_external_init(
    config: ModelConfig, path: str | Path, rng: np.random.Generator
) -> tuple[Model, list[str], list[str]]:
    """Initialize a model from an externally produced parameter file.

    Tensors whose name and shape match the config are loaded; the rest
    (e.g. a classifier head sized for different classes, or a first layer
    with different input width) are freshly initialized. Returns the model
    plus the lists of loaded and re-initialized tensor names; raises if
    nothing overlaps.
    """
    external = ParameterVector.load(path).to_dict()
    model = Model.init(config, rng)
    loaded, reinit = [], []
    for name, _ in Model.param_manifest(config):
        if name in external and external[name].shape == model.params[name].shape:
            model.params[name] = external[name].astype(np.float64)
            loaded.append(name)
        else:
            reinit.append(name)
    if not loaded:
        raise InitMismatchError(f"no compatible tensors in {path}")
    return model, loaded, reinit


# -- schedules and training -----------------------------------------------


@dataclass(frozen=True)
class LRSchedule:
    """Linear warmup over the first iterations, then halving every few epochs.

    decay_start_epoch is 35 for balanced-regime runs and 10 for full-regime
    runs; after it, the rate is cut by decay_factor every decay_period epochs.
    """

    base_lr: float = 1e-3
    warmup_iters: int = 1000
    decay_start_epoch: int = 35
    decay_period: int = 5
    decay_factor: float = 0.5

    def lr(self, iteration: int, epoch: int) -> float:
        """Learning rate at a 1-based global iteration within a 1-based epoch."""
        warm = min(1.0, iteration / self.warmup_iters) if self.warmup_iters > 0 else 1.0
        steps = 0
        if epoch > self.decay_start_epoch:
            steps = math.ceil((epoch - self.decay_start_epoch) / self.decay_period)
        return self.base_lr * warm * self.decay_factor**steps

    def averaging_start_epoch(self, epochs: int) -> int:
        """First epoch whose rate is at most a quarter of the base rate."""
        for e in range(1, epochs + 1):
            if self.lr(max(self.warmup_iters, 1), e) <= self.base_lr / 4.0 + 1e-18:
                return e
        return epochs


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 100
    schedule: LRSchedule = field(default_factory=LRSchedule)
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    report_last_k: int = 5

    def __post_init__(self):
        if self.epochs < 1:
            raise ModelError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ModelError("batch_size must be >= 1")


@dataclass
class TrainResult:
    checkpoints: list[ParameterVector]
    log_rows: list[dict]  # epoch, iteration, lr, loss, eval_map
    eval_reports: list[EvalReport]
    final_model: Model

    def headline_map(self, last_k: int = 5) -> float:
        """Mean eval mAP over the last k epochs (the run's headline number)."""
        if not self.eval_reports:
            raise ModelError("run was trained without an eval corpus")
        tail = self.eval_reports[-last_k:]
        return float(np.mean([r.map for r in tail]))


def _assemble_batch(
    corpus: MultiLabelCorpus,
    labels: np.ndarray,
    plan,
    index: np.ndarray,
    mask_value: float,
):
    xs, ys = [], []
    for n in index:
        i = int(plan.primary[n])
        x = corpus.samples[i].features
        y = labels[i].astype(np.float64)
        if plan.is_mixup[n]:
            j = int(plan.partner[n])
            x, y = mixup(x, y, corpus.samples[j].features, labels[j].astype(np.float64),
                         float(plan.mix_lambda[n]))
        x = apply_mask(
            x,
            MaskParams(
                freq_off=int(plan.freq_off[n]),
                freq_len=int(plan.freq_len[n]),
                time_off=int(plan.time_off[n]),
                time_len=int(plan.time_len[n]),
            ),
            mask_value,
        )
        xs.append(x)
        ys.append(y)
    return np.stack(xs), np.stack(ys)


def train(
    corpus: MultiLabelCorpus,
    model_config: ModelConfig,
    augment_config: AugmentConfig,
    train_config: TrainConfig,
    eval_corpus: MultiLabelCorpus | None = None,
    init_model: Model | None = None,
) -> TrainResult:
    """Run the full recipe: per-epoch sampling plans, augmentation, Adam, checkpoints.

    Deterministic for a fixed seed: corpus synthesis, plan drawing, and
    parameter init each use their own named stream of the master seed.
    """
    seed = train_config.seed
    labels = corpus.label_matrix()
    weights = make_weights(corpus.class_table, labels)
    model = init_model if init_model is not None else Model.init(model_config, stream(seed, "init"))

    adam_m = {k: np.zeros_like(v) for k, v in model.params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in model.params.items()}
    sched = train_config.schedule
    b1, b2, eps = train_config.adam_beta1, train_config.adam_beta2, train_config.adam_eps

    eval_feats = eval_corpus.feature_tensor() if eval_corpus is not None else None
    eval_labels = eval_corpus.label_matrix() if eval_corpus is not None else None

    checkpoints: list[ParameterVector] = []
    log_rows: list[dict] = []
    eval_reports: list[EvalReport] = []
    step = 0
    for epoch in range(1, train_config.epochs + 1):
        plan = plan_epoch(
            weights, augment_config, corpus.feature_shape, stream_seed(seed, "sampler", epoch)
        )
        for lo in range(0, len(plan), train_config.batch_size):
            index = np.arange(lo, min(lo + train_config.batch_size, len(plan)))
            x, y = _assemble_batch(corpus, labels, plan, index, augment_config.mask_value)
            step += 1
            lr = sched.lr(step, epoch)
            try:
                batch_loss, grads = model.loss_and_grads(x, y)
            except DivergenceError as err:
                raise DivergenceError(
                    f"diverged at epoch {epoch}, iteration {step}: {err}"
                ) from err
            for name, g in grads.items():
                adam_m[name] = b1 * adam_m[name] + (1 - b1) * g
                adam_v[name] = b2 * adam_v[name] + (1 - b2) * g * g
                m_hat = adam_m[name] / (1 - b1**step)
                v_hat = adam_v[name] / (1 - b2**step)
                model.params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
            if not all(np.all(np.isfinite(v)) for v in model.params.values()):
                raise DivergenceError(
                    f"non-finite parameters at epoch {epoch}, iteration {step} "
                    f"(lr {lr:g}, loss {batch_loss:g})"
                )
            log_rows.append(
                {"epoch": epoch, "iteration": step, "lr": lr, "loss": batch_loss}
            )
        checkpoints.append(model.params_vector())
        if eval_feats is not None:
            report = evaluate(model.predict(eval_feats), eval_labels)
            eval_reports.append(report)
            log_rows[-1] = dict(log_rows[-1], eval_map=report.map)
    return TrainResult(
        checkpoints=checkpoints,
        log_rows=log_rows,
        eval_reports=eval_reports,
        final_model=model,
    )


def grad_check(model: Model, x: np.ndarray, y: np.ndarray, step: float = 1e-5) -> float:
    """Max deviation between analytic and central-finite-difference gradients.

    The deviation is scaled by the gradient's largest magnitude, so the
    returned number is a relative error of the gradient field as a whole.
    Intended for small configs (<= 10^4 parameters).
    """
    if model.num_params() > 10_000:
        raise ModelError("grad_check is for models with <= 10^4 parameters")
    _, grads = model.loss_and_grads(x, y)
    analytic = np.concatenate([grads[name].ravel() for name, _ in
                               Model.param_manifest(model.config)])
    numeric = np.empty_like(analytic)
    pos = 0
    for name, _ in Model.param_manifest(model.config):
        tensor = model.params[name]
        flat = tensor.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            lp, _ = model.loss_and_grads(x, y)
            flat[idx] = orig - step
            lm, _ = model.loss_and_grads(x, y)
            flat[idx] = orig
            numeric[pos] = (lp - lm) / (2 * step)
            pos += 1
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)
