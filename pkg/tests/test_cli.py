"""End-to-end CLI pipelines on tiny synthetic corpora."""

import json

import numpy as np
import pytest

from tagkit.cli import (
    ConfigError,
    apply_toggle,
    config_hash,
    load_config,
    main,
    merge_config,
    run_aggregate,
    run_enhance,
    run_train,
)
from tagkit.corpus import read_corpus
from tagkit.ontology import write_ontology, Ontology


def tiny_config(out_dir, seed=0, epochs=3):
    return merge_config({
        "seed": seed,
        "output_dir": str(out_dir),
        "corpus": {"synth": {
            "num_classes": 4, "num_samples": 48, "imbalance_ratio": 6,
            "seed": 41, "feature_shape": [16, 8], "planted_signal_strength": 2.0,
        }},
        "eval_corpus": {"synth": {
            "num_classes": 4, "num_samples": 32, "imbalance_ratio": 1,
            "seed": 42, "feature_shape": [16, 8], "planted_signal_strength": 2.0,
        }},
        "model": {"variant": "attention", "num_heads": 2, "embed_dim": 8,
                  "hidden_dim": 6, "time_strides": [2, 2]},
        "augment": {"freq_mask_max": 2, "time_mask_max": 4, "mixup_rate": 0.3},
        "train": {"epochs": epochs, "batch_size": 16, "base_lr": 5e-3,
                  "warmup_iters": 10, "decay_start_epoch": 2, "decay_period": 1},
    })


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="bogus"):
            merge_config({"bogus": 1, "corpus": {"synth": {"num_classes": 2,
                                                            "num_samples": 4}}})

    def test_missing_corpus_rejected(self):
        with pytest.raises(ConfigError, match="corpus"):
            merge_config({"seed": 1})

    def test_missing_path_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            merge_config({"corpus": {"path": str(tmp_path / "nope")}})

    def test_hash_stable_under_key_order(self):
        a = {"seed": 1, "corpus": {"synth": {"num_classes": 2, "num_samples": 4}}}
        b = {"corpus": {"synth": {"num_samples": 4, "num_classes": 2}}, "seed": 1}
        assert config_hash(merge_config(a)) == config_hash(merge_config(b))

    def test_load_config_reports_json_position(self, tmp_path):
        bad = tmp_path / "c.json"
        bad.write_text('{"seed": }')
        with pytest.raises(ConfigError, match="line"):
            load_config(bad)


class TestRunTrain:
    def test_run_directory_contents(self, tmp_path):
        config = tiny_config(tmp_path / "run", epochs=5)
        run_dir = run_train(config)
        assert sorted(p.name for p in (run_dir / "checkpoints").iterdir()) == [
            f"epoch_{e:03d}.ckpt" for e in range(1, 6)
        ]
        assert len(list((run_dir / "eval").glob("epoch_*.json"))) == 5
        assert (run_dir / "weight_avg.ckpt").is_file()
        assert (run_dir / "eval" / "checkpoint_ensemble.json").is_file()
        assert (run_dir / "train_log.csv").is_file()
        summary = json.loads((run_dir / "summary.json").read_text())
        for key in ("headline_map", "weight_avg_map", "ensemble_map", "config_hash"):
            assert key in summary
        assert not (run_dir / "lock").exists()

    def test_same_seed_same_headline(self, tmp_path):
        a = run_train(tiny_config(tmp_path / "a", seed=3))
        b = run_train(tiny_config(tmp_path / "b", seed=3))
        sa = json.loads((a / "summary.json").read_text())
        sb = json.loads((b / "summary.json").read_text())
        assert sa["headline_map"] == sb["headline_map"]
        assert sa["per_epoch_map"] == sb["per_epoch_map"]

    def test_lock_prevents_concurrent_ownership(self, tmp_path):
        config = tiny_config(tmp_path / "run")
        (tmp_path / "run").mkdir()
        (tmp_path / "run" / "lock").write_text("999\n")
        with pytest.raises(ConfigError, match="lock"):
            run_train(config)

    def test_eval_command_reproduces_logged_map(self, tmp_path, capsys):
        config = tiny_config(tmp_path / "run")
        run_dir = run_train(config)
        last = json.loads((run_dir / "eval" / "epoch_003.json").read_text())
        code = main(["eval", "--run", str(run_dir), "--checkpoint", "epoch_003",
                     "--out", str(tmp_path / "r.json")])
        assert code == 0
        again = json.loads((tmp_path / "r.json").read_text())
        assert again["map"] == last["map"]


class TestCliCommands:
    def test_synth_then_coverage(self, tmp_path, capsys):
        corpus_dir = tmp_path / "corpus"
        assert main(["synth", "--classes", "5", "--samples", "60", "--ratio", "10",
                     "--time-frames", "16", "--freq-bins", "8",
                     "--out", str(corpus_dir)]) == 0
        corpus = read_corpus(corpus_dir)
        assert len(corpus) == 60
        out_csv = tmp_path / "coverage.csv"
        assert main(["coverage", "--corpus", str(corpus_dir), "--epochs", "3",
                     "--out", str(out_csv)]) == 0
        rows = out_csv.read_text().splitlines()
        assert rows[0] == "epoch,unseen_fraction"
        assert len(rows) == 4

    def test_train_command_exit_codes(self, tmp_path):
        config_file = tmp_path / "c.json"
        config_file.write_text(json.dumps({
            "corpus": {"synth": {"num_classes": 4, "num_samples": 32, "seed": 1,
                                 "feature_shape": [8, 4]}},
            "model": {"variant": "linear"},
            "augment": {"freq_mask_max": 2, "time_mask_max": 2},
            "train": {"epochs": 1, "batch_size": 8, "warmup_iters": 5},
            "output_dir": str(tmp_path / "run"),
        }))
        assert main(["train", "--config", str(config_file)]) == 0
        assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2

    def test_numerical_failure_exit_code(self, tmp_path):
        config_file = tmp_path / "c.json"
        config_file.write_text(json.dumps({
            "corpus": {"synth": {"num_classes": 4, "num_samples": 32, "seed": 1,
                                 "feature_shape": [8, 4]}},
            "model": {"variant": "linear"},
            "augment": {"freq_mask_max": 2, "time_mask_max": 2},
            "train": {"epochs": 1, "batch_size": 8, "base_lr": 1e308,
                      "warmup_iters": 0},
            "output_dir": str(tmp_path / "run"),
        }))
        assert main(["train", "--config", str(config_file)]) == 3


class TestAblation:
    def test_no_toggles_single_row(self, tmp_path):
        config = tiny_config(tmp_path / "base", epochs=2)
        assert main_ablate(config, "", 1, tmp_path / "abl") == 1

    def test_row_count_matches_toggles(self, tmp_path):
        config = tiny_config(tmp_path / "base", epochs=2)
        n = main_ablate(config, "mixup,masking,balanced", 1, tmp_path / "abl")
        assert n == 4

    def test_full_row_recomputable_from_run_logs(self, tmp_path):
        config = tiny_config(tmp_path / "base", epochs=2)
        from tagkit.cli import run_ablation

        rows = run_ablation(config, ["mixup"], 2, tmp_path / "abl")
        full = next(r for r in rows if r["variant"] == "full")
        headlines = []
        for seed_dir in sorted((tmp_path / "abl" / "full").iterdir()):
            summary = json.loads((seed_dir / "summary.json").read_text())
            headlines.append(summary["ensemble_map"])
        assert full["map_mean"] == pytest.approx(np.mean(headlines))
        assert full["map_sd"] == pytest.approx(np.std(headlines))

    def test_toggle_transforms(self, tmp_path):
        config = tiny_config(tmp_path / "x")
        assert apply_toggle(config, "mixup")["augment"]["mixup_rate"] == 0.0
        assert apply_toggle(config, "masking")["augment"]["freq_mask_max"] == 0
        assert apply_toggle(config, "balanced")["augment"]["balanced"] is False
        with pytest.raises(ConfigError):
            apply_toggle(config, "nonsense")


def main_ablate(config, toggles, seeds, out):
    from tagkit.cli import run_ablation

    rows = run_ablation(config, [t for t in toggles.split(",") if t], seeds, out)
    assert (out / "ablation.csv").is_file()
    return len(rows)


class TestEnhancePipeline:
    @pytest.fixture()
    def teacher_setup(self, tmp_path):
        config = tiny_config(tmp_path / "teacher", epochs=3)
        run_dir = run_train(config)
        names = [f"class{k:03d}" for k in range(4)]
        onto_path = tmp_path / "onto.txt"
        write_ontology(Ontology.from_edges(4, [(0, 1), (0, 2), (1, 3)]), onto_path, names)
        return run_dir, onto_path, tmp_path

    def test_policy_chain_labels_added_nondecreasing(self, teacher_setup):
        run_dir, onto_path, tmp_path = teacher_setup
        results = run_enhance(run_dir, onto_path, ["p25", "p10", "p5"], "both",
                              tmp_path / "enh")
        added = [results[p]["train_labels_added"] for p in ("p25", "p10", "p5")]
        assert added[0] <= added[1] <= added[2]

    def test_both_mode_is_union_of_types(self, teacher_setup):
        run_dir, onto_path, tmp_path = teacher_setup
        out = {}
        for mode in ("type1", "type2", "both"):
            run_enhance(run_dir, onto_path, ["mean"], mode, tmp_path / f"enh_{mode}")
            label_file = tmp_path / f"enh_{mode}" / f"train_labels_mean_{mode}.txt"
            out[mode] = label_file.read_text()
        union = {}
        for mode in ("type1", "type2"):
            for line in out[mode].splitlines():
                sid, _, tags = line.partition("\t")
                union.setdefault(sid, set()).update(t for t in tags.split(",") if t)
        for line in out["both"].splitlines():
            sid, _, tags = line.partition("\t")
            assert set(t for t in tags.split(",") if t) == union[sid]

    def test_enhanced_labels_are_drop_in_for_training(self, teacher_setup, tmp_path):
        run_dir, onto_path, _ = teacher_setup
        enh_dir = tmp_path / "enh2"
        run_enhance(run_dir, onto_path, ["mean"], "both", enh_dir)
        config = tiny_config(tmp_path / "student", epochs=1)
        config["corpus"]["labels"] = str(enh_dir / "train_labels_mean_both.txt")
        student_dir = run_train(config)
        assert (student_dir / "summary.json").is_file()

    def test_enhance_config_requires_ontology(self, tmp_path):
        raw = {
            "corpus": {"synth": {"num_classes": 4, "num_samples": 16,
                                 "feature_shape": [8, 4]}},
            "enhance": {"teacher_run": str(tmp_path)},
        }
        with pytest.raises(ConfigError, match="ontology"):
            merge_config(raw)

    def test_enhance_config_retrains_on_repaired_labels(self, teacher_setup, tmp_path):
        run_dir, onto_path, _ = teacher_setup
        config = tiny_config(tmp_path / "student2", epochs=1)
        config["enhance"] = {"teacher_run": str(run_dir), "ontology": str(onto_path),
                             "policy": "p10", "mode": "both"}
        student = run_train(config)
        assert (student / "enhance_audit.csv").is_file()
        assert (student / "summary.json").is_file()

    def test_missing_teacher_checkpoint(self, tmp_path):
        (tmp_path / "empty_run").mkdir()
        (tmp_path / "empty_run" / "config.json").write_text(json.dumps(
            tiny_config(tmp_path / "empty_run")))
        (tmp_path / "empty_run" / "checkpoints").mkdir()
        onto = tmp_path / "o.txt"
        onto.write_text("class000 class001\n")
        with pytest.raises(ConfigError, match="checkpoint"):
            run_enhance(tmp_path / "empty_run", onto, ["mean"], "both", tmp_path / "e")


class TestAggregateCommand:
    def test_committee_of_one_matches_member(self, tmp_path):
        run_dir = run_train(tiny_config(tmp_path / "solo", epochs=2))
        manifest = tmp_path / "committee.txt"
        manifest.write_text(f"{run_dir}\n")
        comparison = run_aggregate(manifest, tmp_path / "agg")
        assert comparison["num_members"] == 1
        assert comparison["ensemble_map"] == pytest.approx(comparison["best_map"])
        assert (tmp_path / "agg" / "start_epoch_sweep.csv").is_file()

    def test_multi_seed_committee_structure(self, tmp_path):
        dirs = [run_train(tiny_config(tmp_path / f"m{s}", seed=s, epochs=2))
                for s in range(3)]
        manifest = tmp_path / "committee.txt"
        manifest.write_text("\n".join(str(d) for d in dirs) + "\n")
        comparison = run_aggregate(manifest, tmp_path / "agg")
        assert comparison["num_members"] == 3
        assert comparison["best_map"] >= comparison["avg_map"]
        rows = (tmp_path / "agg" / "comparison.csv").read_text().splitlines()
        assert rows[0] == "num_members,avg_map,best_map,ensemble_map"
