import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from robust_recourse.pipeline import ExperimentConfig, run, tune_epsilon


def tiny_config(**overrides):
    base = dict(
        dataset={"synthetic": {"n": 160, "seed": 5}},
        model={"lam": 1e-3},
        epsilon_grid_relative=[0.05, 0.2],
        epsilon_targets_relative=[0.1],
        methods=["data-supported"],
        evaluators=[{"kind": "retrain", "size": 2}],
        folds={"fold_count": 2, "val_fraction": 0.2},
        seed=0,
        time_budget=60.0,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestTuneEpsilon:
    def test_singleton_grid(self):
        eps, _ = tune_epsilon([0.01], lambda e: (1.0, 0.5, 1.0))
        assert eps == 0.01

    def test_smaller_of_two_perfect(self):
        eps, _ = tune_epsilon([0.01, 0.05], lambda e: (1.0, 1.0, e * 10))
        assert eps == 0.01

    def test_jump_at_threshold(self):
        # robustness flips 0 -> 1 once epsilon reaches 0.05
        def score(e):
            return (1.0, 1.0 if e >= 0.05 else 0.0, e * 10)
        eps, trace = tune_epsilon([0.01, 0.05, 0.1], score)
        assert eps == 0.05
        assert len(trace) == 2              # early exit at the perfect score

    def test_falls_back_to_best_seen(self):
        def score(e):
            return (0.5, 0.2, 1.0)
        eps, _ = tune_epsilon([0.01, 0.05], score)
        assert eps == 0.01                  # ties keep the smaller epsilon


class TestRun:
    def test_cell_cardinality(self, tmp_path):
        cfg = tiny_config(folds={"fold_count": 2, "val_fraction": 0.2})
        summary, partial = run(cfg, tmp_path)
        assert not partial
        # folds x methods x evaluators x targets = 2 * 1 * 1 * 1
        assert len(summary["cells"]) == 2
        for cell in summary["cells"]:
            assert cell["status"] == "ok"
            assert cell["config_hash"] == cfg.content_hash()

    def test_rerun_is_deterministic(self, tmp_path):
        cfg = tiny_config()
        s1, _ = run(cfg, tmp_path / "a")
        s2, _ = run(cfg, tmp_path / "b")
        for c1, c2 in zip(s1["cells"], s2["cells"]):
            assert c1["validity"] == c2["validity"]
            assert c1["robustness"] == c2["robustness"]
            assert c1["mean_l2"] == c2["mean_l2"]
            assert c1["epsilon"] == c2["epsilon"]

    def test_resume_skips_finished_cells(self, tmp_path):
        cfg = tiny_config()
        run(cfg, tmp_path)
        cells_file = tmp_path / f"cells_{cfg.content_hash()}.jsonl"
        n_lines = len(cells_file.read_text().splitlines())
        summary, _ = run(cfg, tmp_path, resume=True)
        n_after = len(cells_file.read_text().splitlines())
        assert n_after == n_lines           # nothing re-executed
        assert summary["cells"] == []

    def test_budget_flags_partial(self, tmp_path):
        cfg = tiny_config(time_budget=1e-9)
        summary, partial = run(cfg, tmp_path)
        assert partial
        assert all(c["status"] == "budget_exceeded" for c in summary["cells"])

    def test_outputs_written(self, tmp_path):
        cfg = tiny_config()
        run(cfg, tmp_path)
        h = cfg.content_hash()
        assert (tmp_path / f"results_{h}.json").exists()
        csv_text = (tmp_path / f"results_{h}.csv").read_text()
        assert csv_text.startswith("key,fold,method")

    def test_certificate_robustness_is_one_for_boundary_evaluator(self, tmp_path):
        cfg = tiny_config(
            evaluators=[{"kind": "ellipsoid-boundary", "size": 200}])
        summary, _ = run(cfg, tmp_path)
        for cell in summary["cells"]:
            # tuned epsilon >= target here, so certified CEs must sweep the
            # boundary ensemble
            assert cell["robustness"] == 1.0

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            ExperimentConfig(dataset={"synthetic": {}})
        with pytest.raises(ValueError):
            ExperimentConfig(dataset={"synthetic": {}}, epsilon_grid=[0.1],
                             epsilon_targets=[0.1], methods=[])


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "robust_recourse.cli", *args],
            capture_output=True, text=True)

    def test_run_and_exit_codes(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(dict(
            dataset={"synthetic": {"n": 120, "seed": 1}},
            epsilon_grid_relative=[0.1],
            epsilon_targets_relative=[0.1],
            methods=["data-supported"],
            evaluators=[{"kind": "retrain", "size": 2}],
            folds={"fold_count": 2, "val_fraction": 0.2})))
        res = self.run_cli("run", "--config", str(cfg_path),
                           "--out", str(tmp_path / "out"))
        assert res.returncode == 0, res.stderr
        assert "cells:" in res.stdout

    def test_certify_round_trip(self, tmp_path):
        from robust_recourse.ellipsoid import from_parts
        ell = from_parts(np.array([2.0, 0.0]), np.eye(2), epsilon=0.5)
        ell_path = tmp_path / "ell.json"
        ell_path.write_text(ell.to_json())
        point_path = tmp_path / "pt.json"
        point_path.write_text(json.dumps({"x": [1.0, 0.0]}))
        res = self.run_cli("certify", "--ellipsoid", str(ell_path),
                           "--point", str(point_path), "--t", "0.5")
        assert res.returncode == 0, res.stderr
        out = json.loads(res.stdout)
        assert out["robust"] is True
        assert out["robust_logit"] == pytest.approx(1.0)

    def test_certify_augments_raw_feature_vector(self, tmp_path):
        from robust_recourse.ellipsoid import from_parts
        ell = from_parts(np.array([1.0, 0.0]), np.eye(2), epsilon=0.02)
        ell_path = tmp_path / "ell.json"
        ell_path.write_text(ell.to_json())
        res = self.run_cli("certify", "--ellipsoid", str(ell_path),
                           "--point", "[1.0]", "--t", "0.0")
        assert res.returncode == 0, res.stderr
        assert json.loads(res.stdout)["robust"] is True

    def test_ensemble_manifest(self, tmp_path):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({
            "kind": "dropout", "size": 4, "epsilon_target_relative": 0.1,
            "dataset": {"synthetic": {"n": 120, "seed": 2}}}))
        out_path = tmp_path / "manifest.json"
        res = self.run_cli("ensemble", "--spec", str(spec_path),
                           "--out", str(out_path))
        assert res.returncode == 0, res.stderr
        manifest = json.loads(out_path.read_text())
        assert manifest["kind"] == "dropout"
        assert manifest["verification"]["sound"]
        assert manifest["admitted"] >= 1

    def test_bad_config_exits_one(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        res = self.run_cli("run", "--config", str(bad), "--out", str(tmp_path))
        assert res.returncode == 1
