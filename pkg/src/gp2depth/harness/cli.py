"""Command line entry point: ``gp2depth <command> [--seed N] [--out DIR] [--config FILE] [--set k=v]``.

Every command prints one JSON summary on stdout. Exit status is 0 on success,
1 when a checked invariant is violated and 2 for usage, config or data errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..alignment import DegenerateError
from ..depthcore import CameraIntrinsics, Grid2D, PfmError, Unit, read_pfm, write_pfm, write_ply_ascii
from ..geometry import DisparityAffine, LineParam, angle_distortion, affine_depth_locus, collinearity_residual, \
    depth_ratio_distortion, transform_points, vertex_angle
from ..losses import NonGenericPointError
from ..metrics import MetricReport, evaluate_uts
from ..model import DivergenceError, ToyRegressor, TrainConfig, forward, load_checkpoint, model_gradcheck, \
    save_checkpoint, train
from ..rng import derive_seed
from ..synthdata import MixtureSpec, SceneConfig, generate_scene, lr_consistency_mask, make_uts, make_utss, \
    stereo_verdict
from ..synthdata.storage import dump_json
from .ablation import csv_to_rows, rows_to_csv, run_ablation
from .config import ConfigError, load_config, validate
from .data import DataError, generate_dataset, load_split

log = logging.getLogger("gp2depth")

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


class InvariantViolation(RuntimeError):
    def __init__(self, summary: dict, message: str):
        super().__init__(message)
        self.summary = summary


def camera(cfg: dict) -> CameraIntrinsics:
    s = cfg["scene"]
    return CameraIntrinsics.centered(s["width"], s["height"], cfg["camera"]["focal"])


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    return out


# -- commands ------------------------------------------------------------------

def cmd_gen_data(cfg, args) -> dict:
    out = _out_dir(args, "data")
    m = generate_dataset(cfg, out)
    return {"command": "gen-data", "seed": m["seed"], "n_train": m["n_train"], "n_test": m["n_test"],
            "n_uts": m["n_uts"], "n_utss": m["n_utss"], "height": cfg["scene"]["height"],
            "width": cfg["scene"]["width"], "manifest": str(out / "manifest.json")}


def _train_mixture(scenes) -> MixtureSpec:
    groups: dict[str, list] = {}
    for s in scenes:
        groups.setdefault(s.cls.value, []).append(s)
    return MixtureSpec([(name, groups[name]) for name in sorted(groups)])


def cmd_train(cfg, args) -> dict:
    scenes = load_split(args.data, "train")
    out = _out_dir(args, "run")
    tcfg = TrainConfig(**cfg["train"], seed=cfg["seed"])
    try:
        model, history = train(_train_mixture(scenes), tcfg)
    except (DivergenceError, DegenerateError) as exc:
        raise InvariantViolation({"command": "train", "status": "diverged", "error": str(exc)}, str(exc)) from None
    save_checkpoint(model, out / "model.json")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("step", "loss", "uts_fraction"))
    for step, loss, frac in history.rows():
        w.writerow((step, repr(float(loss)), repr(float(frac))))
    (out / "train_log.csv").write_text(buf.getvalue())
    summary = {"command": "train", "seed": cfg["seed"], "train": tcfg.to_dict(), "steps": tcfg.steps,
               "final_loss": float(np.mean(history.loss[-100:])), "trailing_trend": history.trailing_trend(100),
               "uts_fraction": float(np.mean(history.uts_fraction)), "parameter_count": int(model.params.size),
               "checkpoint": str(out / "model.json"), "log": str(out / "train_log.csv")}
    dump_json(summary, out / "train.json")
    return summary


def cmd_eval(cfg, args) -> dict:
    try:
        model = load_checkpoint(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load checkpoint {args.model}: {exc}") from None
    scenes = load_split(args.data, args.split)
    cam = camera(cfg)
    reports = [evaluate_uts(forward(model, s), s.gt_depth, s.mask, cam) for s in scenes]
    summary = {"command": "eval", "split": args.split, "scenes": len(scenes),
               "mean": MetricReport.mean(reports).to_json(),
               "per_scene": [{"seed": s.seed, **r.to_json()} for s, r in zip(scenes, reports)]}
    if args.out:
        dump_json(summary, _out_dir(args, "eval") / "metrics.json")
    return summary


def gradcheck_report(cfg: dict) -> dict:
    g = cfg["gradcheck"]
    scfg = SceneConfig.from_dict({**cfg["scene"], "height": g["height"], "width": g["width"]})
    worst = {"uts": 0.0, "utss": 0.0, "mixture": 0.0}
    for i in range(g["points"]):
        base = generate_scene(scfg, derive_seed(cfg["seed"], "gradcheck", i))
        model = ToyRegressor.initialized(derive_seed(cfg["seed"], "gradcheck-init", i))
        uts, utss = make_uts(base, base.seed), make_utss(base, base.seed)
        mixed = uts if i % 2 == 0 else utss
        for kind, scene in (("uts", uts), ("utss", utss), ("mixture", mixed)):
            err = model_gradcheck(model, scene, kind, n_params=g["n_params"], h=g["h"], seed=derive_seed(i, kind))
            worst[kind] = max(worst[kind], err)
    passed = all(v < g["tolerance"] for v in worst.values())
    return {"command": "gradcheck", "seed": cfg["seed"], "points": g["points"], "n_params": g["n_params"],
            "h": g["h"], "tolerance": g["tolerance"], "max_rel_error": worst, "passed": passed}


def cmd_gradcheck(cfg, args) -> dict:
    try:
        summary = gradcheck_report(cfg)
    except NonGenericPointError as exc:
        raise InvariantViolation({"command": "gradcheck", "error": str(exc)}, str(exc)) from None
    if args.out:
        dump_json(summary, _out_dir(args, "gradcheck") / "gradcheck.json")
    if not summary["passed"]:
        raise InvariantViolation(summary, "gradient check exceeded tolerance")
    return summary


def geometry_report(cfg: dict, out: Path | None) -> dict:
    g = cfg["geometry"]
    t = DisparityAffine(g["c1"], g["c2"])
    identity = DisparityAffine(1.0, 0.0)
    cam = CameraIntrinsics(g["focal"], g["focal"], 0.0, 0.0)
    scale_only = g["c2"] == 0
    violations = []

    ratios = []
    for z1, z2 in g["depth_pairs"]:
        d = depth_ratio_distortion(z1, z2, t)
        ratios.append({"z1": z1, "z2": z2, "distortion": d})
        if scale_only and d > 1e-12:
            violations.append(f"depth ratio distortion {d:.3g} at ({z1}, {z2}) with C2=0")

    p, q, r = (np.array(v, dtype=np.float64) for v in g["corner"])
    before = vertex_angle(p - q, r - q)
    moved = transform_points(np.stack([p, q, r]), t, cam)
    angle = {"corner": g["corner"], "before": before, "after": vertex_angle(moved[0] - moved[1], moved[2] - moved[1]),
             "distortion": angle_distortion(p, q, r, t, cam)}
    if scale_only and angle["distortion"] > 1e-12:
        violations.append(f"angle distortion {angle['distortion']:.3g} with C2=0")

    xs = np.linspace(0.0, g["extent"], g["samples"])
    samples = np.stack([xs, 0.5 * xs], axis=1)
    loci = []
    for i, (a, b, c) in enumerate(g["lines"]):
        line = LineParam(a, b, c)
        original = affine_depth_locus(line, identity, cam, samples)
        moved_locus = affine_depth_locus(line, t, cam, samples)
        entry = {"line": [a, b, c], "residual_original": collinearity_residual(original),
                 "residual_transformed": collinearity_residual(moved_locus),
                 "original_ply": f"locus_{i}_original.ply", "transformed_ply": f"locus_{i}_transformed.ply"}
        if scale_only:
            expected = entry["residual_original"] / g["c1"]
            if abs(entry["residual_transformed"] - expected) > 1e-9 * max(1.0, expected):
                violations.append(f"locus {i}: scale-only residual {entry['residual_transformed']:.6g} != {expected:.6g}")
        if out is not None:
            (out / entry["original_ply"]).write_bytes(write_ply_ascii(original))
            (out / entry["transformed_ply"]).write_bytes(write_ply_ascii(moved_locus))
        loci.append(entry)
    return {"command": "geom-demo", "transform": {"c1": g["c1"], "c2": g["c2"]}, "depth_ratio": ratios,
            "angle": angle, "loci": loci, "scale_only": scale_only, "violations": violations}


def cmd_geom_demo(cfg, args) -> dict:
    out = _out_dir(args, "geometry")
    summary = geometry_report(cfg, out)
    dump_json(summary, out / "geometry.json")
    if summary["violations"]:
        raise InvariantViolation(summary, "; ".join(summary["violations"]))
    return summary


STEREO_CASES = ("consistent", "constant", "discrepancy")


def stereo_case(name: str, height: int = 32, width: int = 160) -> tuple[Grid2D, Grid2D]:
    """Example pairs: a row-slanted self-consistent plane, a constant-5 pair and a 5-vs-20 pair."""
    if name == "consistent":
        d = np.repeat(np.linspace(2.0, 30.0, height)[:, None], width, axis=1)
        return Grid2D(d, Unit.DIMENSIONLESS), Grid2D(d, Unit.DIMENSIONLESS)
    if name == "constant":
        d = np.full((height, width), 5.0)
        return Grid2D(d, Unit.DIMENSIONLESS), Grid2D(d, Unit.DIMENSIONLESS)
    if name == "discrepancy":
        return (Grid2D(np.full((height, width), 5.0), Unit.DIMENSIONLESS),
                Grid2D(np.full((height, width), 20.0), Unit.DIMENSIONLESS))
    raise ValueError(f"unknown stereo case {name!r}; choose from {', '.join(STEREO_CASES)}")


def cmd_mask_stereo(cfg, args) -> dict:
    s = cfg["stereo"]
    if args.case:
        left, right = stereo_case(args.case)
        source = f"case:{args.case}"
    elif args.left and args.right:
        try:
            left, _ = read_pfm(Path(args.left).read_bytes(), Unit.DIMENSIONLESS)
            right, _ = read_pfm(Path(args.right).read_bytes(), Unit.DIMENSIONLESS)
        except OSError as exc:
            raise DataError(f"cannot read disparity file: {exc}") from None
        source = f"{args.left},{args.right}"
    else:
        raise ConfigError("mask-stereo needs --left and --right PFM files, or --case")
    mask = lr_consistency_mask(left, right, s["max_discrepancy"])
    verdict = stereo_verdict(left, mask, s["min_valid_fraction"], s["min_range"])
    valid = left.values[mask.bits]
    out = _out_dir(args, "stereo")
    (out / "mask.pfm").write_bytes(write_pfm(Grid2D(mask.bits.astype(np.float64))))
    if args.case:
        (out / "left.pfm").write_bytes(write_pfm(left))
        (out / "right.pfm").write_bytes(write_pfm(right))
    h, w = left.values.shape
    summary = {"command": "mask-stereo", "source": source, "height": h, "width": w,
               "valid_fraction": mask.fraction, "disparity_range": float(np.ptp(valid)) if valid.size else None,
               "verdict": verdict, "accepted": verdict == "accepted", "mask": str(out / "mask.pfm")}
    dump_json(summary, out / "stereo.json")
    return summary


def cmd_ablate(cfg, args) -> dict:
    out = _out_dir(args, "ablation")
    result = run_ablation(cfg, args.data, camera(cfg))
    (out / "ablation.csv").write_text(rows_to_csv(result["rows"]))
    (out / "ablation_control.csv").write_text(rows_to_csv(result["control"]))
    for name in ("ablation.csv", "ablation_control.csv"):
        for row in csv_to_rows((out / name).read_text()):
            validate(row, "ablation_row")
    dump_json(result, out / "ablation.json")
    return {k: result[k] for k in ("command", "seed", "n_train", "n_test", "summary", "checks")} | {
        "csv": str(out / "ablation.csv"), "control_csv": str(out / "ablation_control.csv"),
        "json": str(out / "ablation.json")}


COMMANDS = {
    "gen-data": (cmd_gen_data, "gen_data", "generate train/test scenes and a manifest"),
    "train": (cmd_train, "train", "train the toy regressor on a generated train split"),
    "eval": (cmd_eval, "eval", "evaluate a checkpoint with scale-aligned metrics"),
    "ablate": (cmd_ablate, None, "UTS-ratio ablation, GP2 against UTS-only"),
    "gradcheck": (cmd_gradcheck, "gradcheck", "finite-difference check of model gradients"),
    "geom-demo": (cmd_geom_demo, "geometry", "distortion tables and PLY loci for a disparity transform"),
    "mask-stereo": (cmd_mask_stereo, "stereo", "left-right consistency mask and frame verdict"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gp2depth", description="Geometry-preserving depth toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key by dotted path (repeatable)")
        if name in ("train", "eval", "ablate"):
            p.add_argument("--data", required=True, help="directory written by gen-data")
        if name == "eval":
            p.add_argument("--model", required=True, help="checkpoint written by train")
            p.add_argument("--split", default="test", choices=("train", "test"))
        if name == "ablate":
            p.add_argument("--jobs", type=int, default=None, help="parallel training processes")
        if name == "mask-stereo":
            p.add_argument("--left", help="left disparity PFM")
            p.add_argument("--right", help="right disparity PFM")
            p.add_argument("--case", choices=STEREO_CASES, help="use a built-in example pair")
    return parser


def _emit(summary: dict) -> None:
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    fn, schema_name, _ = COMMANDS[args.command]
    try:
        overrides = list(args.overrides)
        if getattr(args, "jobs", None) is not None:
            overrides.append(f"ablation.jobs={args.jobs}")
        cfg = load_config(args.config, overrides, args.seed)
        summary = fn(cfg, args)
        if schema_name is not None:
            validate(summary, schema_name)
    except InvariantViolation as exc:
        log.error("%s", exc)
        _emit(exc.summary)
        return EXIT_VIOLATION
    except (ConfigError, DataError, PfmError, ValueError) as exc:
        _emit({"command": args.command, "error": str(exc)})
        return EXIT_USAGE
    _emit(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
