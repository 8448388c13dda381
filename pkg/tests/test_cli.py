import json

import pytest

from ddro.cli import main
from ddro.config import ConfigError, load_config, parse_config, with_overrides


def write(path, doc):
    path.write_text(json.dumps(doc))
    return path


BASE = {"schema_version": "ddro-run/1", "radius": 1.5, "dataset": {"path": "out/dataset.csv"}}


@pytest.fixture
def cfg_path(tmp_path):
    doc = dict(BASE, gen_data={"samples_per_point": 4, "design_levels": 2},
               experiment={"seeds": [0], "sample_sizes": [4], "radii": [1.0, 2.0], "eval_mc_n": 2000,
                           "truth_resolution": 11},
               coverage={"sample_size": 4, "probes": [[0.5, 0.5, 0.5]], "bias_n": 100},
               evaluate={"x": [0.9, 0.9, 0.9], "mc_n": 2000})
    return write(tmp_path / "run.json", doc)


class TestConfig:
    def test_defaults(self, tmp_path):
        cfg = parse_config(BASE, tmp_path)
        assert cfg.problem.T == 3 and cfg.solver.mode == "pricing"
        assert cfg.dataset.path == str((tmp_path / "out/dataset.csv").resolve())

    def test_radius_xor(self):
        with pytest.raises(ConfigError, match="exactly one of 'radius' and 'radius_params'"):
            parse_config({"schema_version": "ddro-run/1"})
        with pytest.raises(ConfigError, match="exactly one"):
            parse_config({"schema_version": "ddro-run/1", "radius": 1.0, "radius_params": {"beta": 0.1}})

    def test_field_paths(self):
        with pytest.raises(ConfigError, match=r"problem\.T"):
            parse_config(dict(BASE, problem={"T": 0}))
        with pytest.raises(ConfigError, match=r"solver\.tolerance"):
            parse_config(dict(BASE, solver={"tolerance": 1e-6}))

    def test_schema_version(self):
        with pytest.raises(ConfigError, match="schema_version"):
            parse_config(dict(BASE, schema_version="ddro-run/0"))

    def test_design_shape(self):
        with pytest.raises(ConfigError, match=r"gen_data\.design\[0\]"):
            parse_config(dict(BASE, gen_data={"design": [[0.5, 0.5]]}))

    def test_pricing_needs_nn(self):
        with pytest.raises(ConfigError, match="nearest-neighbor"):
            parse_config(dict(BASE, scheme={"kind": "inverse-distance", "lipschitz_c1": 1.0}))

    def test_bad_json(self, tmp_path):
        (tmp_path / "x.json").write_text("{")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(tmp_path / "x.json")

    def test_seed_override(self, tmp_path):
        cfg = with_overrides(parse_config(BASE, tmp_path), seed=9, parallel=2)
        assert cfg.seed == 9 and cfg.experiment.seeds == [9] and cfg.parallel == 2

    def test_digest_stable(self, tmp_path):
        assert parse_config(BASE, tmp_path).digest() == parse_config(dict(BASE), tmp_path).digest()


class TestCommands:
    def test_pipeline(self, cfg_path, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["gen-data", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert "wrote 32 rows" in capsys.readouterr().out
        assert len((out / "dataset.csv").read_text().splitlines()) == 33
        meta = json.loads((out / "dataset.csv.meta.json").read_text())
        assert meta["config"]["seed"] == 0 and meta["content_hash"].startswith("sha256:")
        assert main(["solve", "--config", str(cfg_path), "--out", str(out)]) == 0
        sol = json.loads((out / "solution.json").read_text())
        assert sol["config"]["radius"] == 1.5 and "J_hat" in sol["result"]["solution"]
        assert main(["evaluate", "--config", str(cfg_path), "--out", str(out)]) == 0
        ev = json.loads((out / "evaluation.json").read_text())
        assert ev["result"]["worst_case"] <= ev["result"]["nominal"]

    def test_calibrate(self, tmp_path):
        doc = {"schema_version": "ddro-run/1", "radius_params": {"beta": 0.1},
               "dataset": {"path": "dataset.csv"}, "gen_data": {"samples_per_point": 15}}
        cfg = write(tmp_path / "c.json", doc)
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        assert main(["calibrate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "calibration.json").read_text())["result"]
        assert rep["covering_method"] == "grid" and rep["params"]["beta"] == 0.1
        assert rep["c1_user_asserted"] is False
        assert rep["radius"] == pytest.approx(rep["covering_radius"] + rep["sample_term"] ** (1 / 3))

    def test_calibrate_flags_shepard_c1(self, tmp_path):
        doc = {"schema_version": "ddro-run/1", "radius_params": {"beta": 0.1}, "dataset": {"path": "dataset.csv"},
               "gen_data": {"samples_per_point": 3, "design_levels": 2},
               "scheme": {"kind": "inverse-distance", "lipschitz_c1": 0.5}, "solver": {"mode": "cutting-surface"}}
        cfg = write(tmp_path / "c.json", doc)
        main(["gen-data", "--config", str(cfg), "--out", str(tmp_path)])
        assert main(["calibrate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "calibration.json").read_text())["result"]
        assert rep["c1_user_asserted"] is True and rep["params"]["c1"] == 0.5

    def test_calibrate_needs_params(self, cfg_path, tmp_path):
        out = tmp_path / "out"
        main(["gen-data", "--config", str(cfg_path), "--out", str(out)])
        assert main(["calibrate", "--config", str(cfg_path), "--out", str(out)]) == 2

    def test_missing_dataset_is_config_error(self, cfg_path, tmp_path, capsys):
        assert main(["solve", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 2
        assert "dataset.path" in capsys.readouterr().err

    def test_invalid_config_exit_2(self, tmp_path):
        bad = write(tmp_path / "bad.json", {"schema_version": "ddro-run/1", "radius": -1})
        assert main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 2

    def test_solver_error_exit_3(self, cfg_path, tmp_path):
        out = tmp_path / "out"
        main(["gen-data", "--config", str(cfg_path), "--out", str(out)])
        doc = json.loads(cfg_path.read_text())
        doc["solver"] = {"mode": "cutting-surface", "max_iter": 1}
        cfg = write(tmp_path / "cs.json", doc)
        assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 3

    def test_experiment_byte_identical(self, cfg_path, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["experiment", "--config", str(cfg_path), "--out", str(a)]) == 0
        # rerun from the emitted config
        assert main(["experiment", "--config", str(a / "resolved_config.json"), "--out", str(b)]) == 0
        for name in ("experiment.csv", "experiment.md", "experiment.json", "experiment.csv.meta.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_partial_failure_exit_4(self, cfg_path, tmp_path, monkeypatch):
        import ddro.harness as harness

        monkeypatch.setattr(harness, "solve_pricing", lambda inst: (_ for _ in ()).throw(RuntimeError("x")))
        assert main(["experiment", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 4

    def test_coverage(self, cfg_path, tmp_path):
        assert main(["coverage", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "coverage.json").read_text())
        assert 0 <= doc["result"]["coverage"] <= 1 and doc["content_hash"].startswith("sha256:")

    def test_gen_data_seed_determinism(self, cfg_path, tmp_path):
        for d in ("a", "b"):
            main(["gen-data", "--config", str(cfg_path), "--out", str(tmp_path / d), "--seed", "5"])
        assert (tmp_path / "a/dataset.csv").read_bytes() == (tmp_path / "b/dataset.csv").read_bytes()
        main(["gen-data", "--config", str(cfg_path), "--out", str(tmp_path / "c"), "--seed", "6"])
        assert (tmp_path / "a/dataset.csv").read_bytes() != (tmp_path / "c/dataset.csv").read_bytes()
