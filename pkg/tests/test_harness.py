import json
from pathlib import Path

import numpy as np
import pytest

from gp2depth.depthcore import Grid2D, read_pfm, write_pfm
from gp2depth.harness import DEFAULTS, ConfigError, load_config, main
from gp2depth.harness.ablation import csv_to_rows, shape_checks, uts_count
from gp2depth.harness.config import apply_override, validate

TINY = ["--set", "scene.height=16", "--set", "scene.width=16", "--set", "data.n_train=6",
        "--set", "data.n_test=3", "--set", "train.steps=20", "--set", "train.pixels_per_scene=64"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    lines = out.strip().splitlines()
    assert len(lines) == 1, "every command prints exactly one JSON line"
    return code, json.loads(lines[0])


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", *TINY, "--out", str(out)]) == 0
    return out


class TestConfig:
    def test_defaults_validate(self):
        cfg = load_config()
        assert cfg == DEFAULTS
        assert (cfg["data"]["n_train"], cfg["data"]["n_test"]) == (200, 50)
        assert (cfg["scene"]["height"], cfg["scene"]["width"]) == (64, 64)
        assert cfg["ablation"]["ratios"] == [0.05, 0.1, 0.2, 0.5, 1.0]
        assert cfg["ablation"]["seeds"] == [0, 1, 2]

    def test_override_types(self):
        cfg = apply_override(DEFAULTS, "train.lr=0.5")
        assert cfg["train"]["lr"] == 0.5
        cfg = apply_override(cfg, "ablation.ratios=[0.5, 1.0]")
        assert cfg["ablation"]["ratios"] == [0.5, 1.0]
        assert DEFAULTS["train"]["lr"] == 0.01

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="train.nope"):
            load_config(overrides=["train.nope=1"])

    def test_schema_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            load_config(overrides=["data.uts_ratio=0"])
        with pytest.raises(ConfigError):
            load_config(overrides=["ablation.schemes=[\"GP3\"]"])

    def test_file_then_overrides_then_seed(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 4, "train": {"steps": 7, "lr": 0.2}}))
        cfg = load_config(path, ["train.steps=9"], seed=11)
        assert (cfg["seed"], cfg["train"]["steps"], cfg["train"]["lr"]) == (11, 9, 0.2)

    def test_bad_override_syntax(self):
        with pytest.raises(ConfigError):
            apply_override(DEFAULTS, "train.lr")


class TestGenData:
    def test_manifest(self, data_dir):
        m = json.loads((data_dir / "manifest.json").read_text())
        validate(m, "manifest")
        assert (m["n_train"], m["n_test"], m["n_uts"], m["n_utss"]) == (6, 3, 3, 3)
        classes = [e["cls"] for e in m["scenes"] if e["split"] == "train"]
        assert classes == ["UTS"] * 3 + ["UTSS"] * 3
        assert all(e["cls"] == "ABSOLUTE" for e in m["scenes"] if e["split"] == "test")
        assert len({e["seed"] for e in m["scenes"]}) == 9

    def test_ratio_split_arithmetic(self, tmp_path, capsys):
        code, s = run(capsys, "gen-data", "--set", "scene.height=16", "--set", "scene.width=16",
                      "--set", "data.n_train=20", "--set", "data.n_test=1", "--set", "data.uts_ratio=0.1",
                      "--out", tmp_path)
        assert code == 0 and (s["n_uts"], s["n_utss"]) == (2, 18)

    @pytest.mark.parametrize("ratio,n,expected", [(0.1, 200, 20), (0.05, 200, 10), (0.2, 200, 40), (0.5, 200, 100),
                                                  (1.0, 200, 200), (0.01, 50, 1), (0.3, 10, 3), (0.15, 10, 1)])
    def test_uts_count(self, ratio, n, expected):
        assert uts_count(ratio, n) == expected

    def test_byte_identical_rerun(self, tmp_path, data_dir):
        assert main(["gen-data", *TINY, "--out", str(tmp_path)]) == 0
        assert tree_bytes(tmp_path) == tree_bytes(data_dir)

    def test_seed_changes_data(self, tmp_path, data_dir):
        assert main(["gen-data", *TINY, "--seed", "1", "--out", str(tmp_path)]) == 0
        a = (tmp_path / "train/0000/gt_depth.pfm").read_bytes()
        assert a != (data_dir / "train/0000/gt_depth.pfm").read_bytes()

    def test_unwritable_directory(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code, s = run(capsys, "gen-data", *TINY, "--out", blocker / "sub")
        assert code == 2 and "error" in s


class TestTrainEval:
    def test_train_then_eval(self, tmp_path, data_dir, capsys):
        code, s = run(capsys, "train", *TINY, "--data", data_dir, "--out", tmp_path / "a")
        assert code == 0
        validate(s, "train")
        assert s["parameter_count"] == 1985
        log_lines = (tmp_path / "a" / "train_log.csv").read_text().splitlines()
        assert log_lines[0] == "step,loss,uts_fraction" and len(log_lines) == 21
        code, e = run(capsys, "eval", *TINY, "--data", data_dir, "--model", tmp_path / "a" / "model.json")
        assert code == 0
        validate(e, "eval")
        assert e["scenes"] == 3 and 0 <= e["mean"]["delta_error"] <= 1

    def test_train_is_byte_deterministic(self, tmp_path, data_dir):
        for name in ("a", "b"):
            assert main(["train", *TINY, "--data", str(data_dir), "--out", str(tmp_path / name)]) == 0
        assert tree_bytes(tmp_path / "a") == {k: v.replace(b"/b/", b"/a/") for k, v in tree_bytes(tmp_path / "b").items()}

    def test_missing_data(self, tmp_path, capsys):
        code, s = run(capsys, "train", "--data", tmp_path / "none")
        assert code == 2 and "gen-data" in s["error"]

    def test_missing_checkpoint(self, tmp_path, data_dir, capsys):
        code, _ = run(capsys, "eval", "--data", data_dir, "--model", tmp_path / "none.json")
        assert code == 2


def test_gradcheck_command(capsys):
    code, s = run(capsys, "gradcheck", "--set", "gradcheck.points=3")
    assert code == 0
    validate(s, "gradcheck")
    assert s["passed"] and all(v < 1e-4 for v in s["max_rel_error"].values())


def test_gradcheck_reports_violation(capsys):
    # truncation error of central differences alone exceeds this tolerance
    code, s = run(capsys, "gradcheck", "--set", "gradcheck.points=1", "--set", "gradcheck.tolerance=1e-15")
    assert code == 1 and not s["passed"]


class TestGeomDemo:
    def test_scale_only_is_distortion_free(self, tmp_path, capsys):
        code, s = run(capsys, "geom-demo", "--set", "geometry.c2=0", "--set", "geometry.c1=3", "--out", tmp_path)
        assert code == 0 and s["violations"] == [] and s["scale_only"]
        assert all(r["distortion"] <= 1e-12 for r in s["depth_ratio"])
        assert s["angle"]["distortion"] <= 1e-12

    def test_shift_distorts_depth_ratios_and_writes_loci(self, tmp_path, capsys):
        code, s = run(capsys, "geom-demo", "--out", tmp_path)
        assert code == 0
        validate(s, "geometry")
        assert all(r["distortion"] > 0 for r in s["depth_ratio"])
        for entry in s["loci"]:
            text = (tmp_path / entry["transformed_ply"]).read_text()
            assert f"element vertex {DEFAULTS['geometry']['samples']}" in text
        # constant-depth image line stays a 3-D line under the transform
        assert s["loci"][0]["residual_transformed"] < 1e-12
        assert (tmp_path / "geometry.json").is_file()


class TestMaskStereo:
    @pytest.mark.parametrize("case,verdict", [("consistent", "accepted"), ("constant", "rejected: range"),
                                              ("discrepancy", "rejected: validity")])
    def test_cases(self, tmp_path, capsys, case, verdict):
        code, s = run(capsys, "mask-stereo", "--case", case, "--out", tmp_path)
        assert code == 0 and s["verdict"] == verdict
        validate(s, "stereo")
        mask, _ = read_pfm((tmp_path / "mask.pfm").read_bytes())
        assert mask.values.mean() == pytest.approx(s["valid_fraction"])

    def test_pfm_inputs(self, tmp_path, capsys):
        d = Grid2D(np.full((8, 40), 5.0))
        (tmp_path / "l.pfm").write_bytes(write_pfm(d))
        (tmp_path / "r.pfm").write_bytes(write_pfm(d))
        code, s = run(capsys, "mask-stereo", "--left", tmp_path / "l.pfm", "--right", tmp_path / "r.pfm",
                      "--out", tmp_path / "o")
        assert code == 0 and s["verdict"] == "rejected: range"
        assert s["valid_fraction"] == pytest.approx(35 / 40)

    def test_needs_inputs(self, capsys):
        code, _ = run(capsys, "mask-stereo")
        assert code == 2

    def test_corrupt_pfm(self, tmp_path, capsys):
        (tmp_path / "bad.pfm").write_bytes(b"junk")
        code, _ = run(capsys, "mask-stereo", "--left", tmp_path / "bad.pfm", "--right", tmp_path / "bad.pfm")
        assert code == 2


ABLATE_ARGS = [*TINY, "--set", "ablation.ratios=[0.5,1.0]", "--set", "ablation.seeds=[0,1]"]


@pytest.fixture(scope="module")
def result(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("ablate")
    assert main(["ablate", *ABLATE_ARGS, "--data", str(data_dir), "--out", str(out)]) == 0
    return out, json.loads((out / "ablation.json").read_text())


class TestAblate:

    def test_every_cell_once(self, result):
        _, r = result
        validate(r, "ablation")
        keys = [(row["scheme"], row["uts_ratio"], row["seed"]) for row in r["rows"]]
        assert sorted(keys) == sorted((s, q, k) for s in ("GP2", "UTS_ONLY") for q in (0.5, 1.0) for k in (0, 1))
        assert len(set(keys)) == len(keys)
        assert [(row["scheme"], row["seed"]) for row in r["control"]] == [("UTSS_ONLY", 0), ("UTSS_ONLY", 1)]

    def test_schemes_coincide_at_full_ratio(self, result):
        _, r = result
        full = {(row["scheme"], row["seed"]): row for row in r["rows"] if row["uts_ratio"] == 1.0}
        for seed in (0, 1):
            a, b = dict(full[("GP2", seed)]), dict(full[("UTS_ONLY", seed)])
            a.pop("scheme"), b.pop("scheme")
            assert a == b

    def test_csv_matches_json(self, result):
        out, r = result
        rows = csv_to_rows((out / "ablation.csv").read_text())
        assert rows == r["rows"]
        assert csv_to_rows((out / "ablation_control.csv").read_text()) == r["control"]

    def test_parallel_matches_serial(self, result, tmp_path, data_dir):
        out, _ = result
        assert main(["ablate", *ABLATE_ARGS, "--jobs", "2", "--data", str(data_dir), "--out", str(tmp_path)]) == 0
        for name in ("ablation.csv", "ablation_control.csv", "ablation.json"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()

    def test_missing_data(self, tmp_path, capsys):
        code, _ = run(capsys, "ablate", "--data", tmp_path)
        assert code == 2


class TestShapeChecks:
    def _summary(self, values):
        return [{"scheme": s, "uts_ratio": q, "delta_error": d, "shift_indicator": sh}
                for (s, q), (d, sh) in values.items()]

    def test_all_pass(self):
        c = shape_checks(self._summary({("GP2", 1.0): (0.30, 0.05), ("GP2", 0.1): (0.31, 0.05),
                                        ("GP2", 0.05): (0.32, 0.05), ("UTS_ONLY", 1.0): (0.30, 0.05),
                                        ("UTS_ONLY", 0.05): (0.40, 0.09), ("UTSS_ONLY", 0.0): (0.6, 0.2)}))
        assert {k: v["passed"] for k, v in c.items()} == {"gp2_flat": True, "uts_only_degrades": True,
                                                          "gp2_shift_correct": True}

    def test_failures(self):
        c = shape_checks(self._summary({("GP2", 1.0): (0.20, 0.05), ("GP2", 0.1): (0.30, 0.15),
                                        ("GP2", 0.05): (0.40, 0.05), ("UTS_ONLY", 1.0): (0.20, 0.05),
                                        ("UTS_ONLY", 0.05): (0.25, 0.09), ("UTSS_ONLY", 0.0): (0.6, 0.2)}))
        assert not any(v["passed"] for v in c.values())

    def test_missing_cells_skip_checks(self):
        assert shape_checks(self._summary({("GP2", 1.0): (0.2, 0.1)})) == {}
