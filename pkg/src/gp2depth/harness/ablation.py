"""UTS-ratio ablation: GP2 mixtures against UTS-only training at equal step budgets."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..alignment import DegenerateError
from ..depthcore import CameraIntrinsics
from ..metrics import MetricReport, evaluate_uts
from ..model import DivergenceError, TrainConfig, forward, train
from ..synthdata import MixtureSpec, make_uts, make_utss
from .data import load_split

ROW_FIELDS = ("uts_ratio", "scheme", "seed", "status", "delta_error", "rel", "cloud_rmse",
              "shift_indicator", "final_loss")
SCHEME_ORDER = {"GP2": 0, "UTS_ONLY": 1, "UTSS_ONLY": 2}
# relative tolerance of the GP2 flatness check
FLAT_TOLERANCE = 0.25


def uts_count(ratio: float, n: int) -> int:
    """Number of UTS scenes for a ratio: floor(ratio * n), at least one."""
    return max(1, math.floor(ratio * n + 1e-9))


@dataclass(frozen=True)
class Cell:
    scheme: str
    ratio: float
    seed: int

    def sort_key(self):
        return (SCHEME_ORDER[self.scheme], self.ratio, self.seed)


def build_mixture(scheme: str, ratio: float, scenes) -> tuple[tuple, MixtureSpec]:
    """Mixture for a cell plus a signature; equal signatures mean identical training data."""
    n = len(scenes)
    if scheme == "UTSS_ONLY":
        return ("utss", 0, n), MixtureSpec([("utss", [make_utss(s, s.seed) for s in scenes])])
    k = uts_count(ratio, n)
    uts = [make_uts(s, s.seed) for s in scenes[:k]]
    if scheme == "UTS_ONLY" or k == n:
        return ("uts", k, 0), MixtureSpec([("uts", uts)])
    if scheme != "GP2":
        raise ValueError(f"unknown scheme {scheme!r}")
    utss = [make_utss(s, s.seed) for s in scenes[k:]]
    return ("gp2", k, n - k), MixtureSpec([("uts", uts), ("utss", utss)])


def evaluate_model(model, scenes, cam: CameraIntrinsics) -> MetricReport:
    return MetricReport.mean(evaluate_uts(forward(model, s), s.gt_depth, s.mask, cam) for s in scenes)


def run_cell(cell: Cell, train_scenes, test_scenes, train_cfg: dict, cam: CameraIntrinsics) -> dict:
    _, mixture = build_mixture(cell.scheme, cell.ratio, train_scenes)
    row = {"uts_ratio": cell.ratio, "scheme": cell.scheme, "seed": cell.seed}
    try:
        model, log = train(mixture, TrainConfig(**train_cfg, seed=cell.seed))
        report = evaluate_model(model, test_scenes, cam)
    except (DivergenceError, DegenerateError):
        row.update(status="diverged", delta_error=None, rel=None, cloud_rmse=None,
                   shift_indicator=None, final_loss=None)
        return row
    row.update(status="ok", **report.to_json(), final_loss=float(np.mean(log.loss[-100:])))
    return row


# worker state for process pools: each worker loads the data once
_WORKER: dict = {}


def _init_worker(data_dir, train_cfg, cam):
    _WORKER.update(train=load_split(data_dir, "train", absolute=True), test=load_split(data_dir, "test"),
                   train_cfg=train_cfg, cam=cam)


def _run_in_worker(cell: Cell) -> dict:
    w = _WORKER
    return run_cell(cell, w["train"], w["test"], w["train_cfg"], w["cam"])


def requested_cells(cfg: dict) -> list[Cell]:
    ab = cfg["ablation"]
    cells = [Cell(s, float(r), int(seed)) for s in ab["schemes"] for r in ab["ratios"] for seed in ab["seeds"]]
    if ab["control"]:
        cells += [Cell("UTSS_ONLY", 0.0, int(seed)) for seed in ab["seeds"]]
    return sorted(cells, key=Cell.sort_key)


def run_ablation(cfg: dict, data_dir, cam: CameraIntrinsics) -> dict:
    """Run every requested cell; cells sharing training data and seed are trained once."""
    train_scenes = load_split(data_dir, "train", absolute=True)
    test_scenes = load_split(data_dir, "test")
    train_cfg = dict(cfg["train"])
    cells = requested_cells(cfg)
    unique: dict[tuple, Cell] = {}
    alias: dict[Cell, tuple] = {}
    for cell in cells:
        sig, _ = build_mixture(cell.scheme, cell.ratio, train_scenes)
        key = (sig, cell.seed)
        unique.setdefault(key, cell)
        alias[cell] = key
    todo = list(unique.items())
    jobs = int(cfg["ablation"]["jobs"])
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(str(data_dir), train_cfg, cam)) as pool:
            results = list(pool.map(_run_in_worker, [c for _, c in todo]))
    else:
        results = [run_cell(c, train_scenes, test_scenes, train_cfg, cam) for _, c in todo]
    by_key = {key: res for (key, _), res in zip(todo, results)}
    rows = []
    for cell in cells:
        row = dict(by_key[alias[cell]])
        row.update(uts_ratio=cell.ratio, scheme=cell.scheme, seed=cell.seed)
        rows.append(row)
    main = [r for r in rows if r["scheme"] != "UTSS_ONLY"]
    control = [r for r in rows if r["scheme"] == "UTSS_ONLY"]
    summary = summarize(rows)
    return {"command": "ablate", "seed": cfg["seed"], "train": train_cfg, "n_train": len(train_scenes),
            "n_test": len(test_scenes), "rows": main, "control": control, "summary": summary,
            "checks": shape_checks(summary)}


def summarize(rows) -> list[dict]:
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((SCHEME_ORDER[r["scheme"]], r["uts_ratio"], r["scheme"]), []).append(r)
    out = []
    for (_, ratio, scheme), rs in sorted(groups.items()):
        ok = [r for r in rs if r["status"] == "ok"]

        def mean(field):
            return float(np.mean([r[field] for r in ok])) if ok else None

        out.append({"uts_ratio": ratio, "scheme": scheme, "runs": len(rs), "diverged": len(rs) - len(ok),
                    "delta_error": mean("delta_error"), "rel": mean("rel"),
                    "shift_indicator": mean("shift_indicator")})
    return out


def shape_checks(summary) -> dict:
    """Qualitative shape of the ratio curve; a check is omitted when its cells were not run."""
    table = {(s["scheme"], s["uts_ratio"]): s for s in summary}

    def get(scheme, ratio, field):
        s = table.get((scheme, ratio))
        return None if s is None else s[field]

    checks = {}
    full, tenth = get("GP2", 1.0, "delta_error"), get("GP2", 0.1, "delta_error")
    if full is not None and tenth is not None:
        rel = abs(tenth - full) / full
        checks["gp2_flat"] = {"passed": rel <= FLAT_TOLERANCE,
                              "detail": f"|GP2@0.1 - GP2@1.0| / GP2@1.0 = {rel:.4f} (limit {FLAT_TOLERANCE})"}
    vals = [get("UTS_ONLY", 0.05, "delta_error"), get("UTS_ONLY", 1.0, "delta_error"),
            get("GP2", 0.05, "delta_error"), full]
    if None not in vals:
        uts_gap, gp2_gap = vals[0] - vals[1], vals[2] - vals[3]
        checks["uts_only_degrades"] = {"passed": uts_gap >= gp2_gap,
                                       "detail": f"UTS_ONLY gap {uts_gap:.4f} vs GP2 gap {gp2_gap:.4f} (0.05 vs 1.0)"}
    shift, ctrl = get("GP2", 0.1, "shift_indicator"), get("UTSS_ONLY", 0.0, "shift_indicator")
    if shift is not None and ctrl is not None:
        checks["gp2_shift_correct"] = {"passed": shift < 0.5 * ctrl,
                                       "detail": f"GP2@0.1 shift {shift:.4f} vs UTSS-only control {ctrl:.4f}"}
    return checks


def _cell(value) -> str:
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROW_FIELDS)
    for r in rows:
        writer.writerow([_cell(r[f]) for f in ROW_FIELDS])
    return buf.getvalue()


def csv_to_rows(text: str) -> list[dict]:
    """Parse an ablation CSV back into typed rows (for schema validation)."""
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {}
        for k, v in rec.items():
            if k in ("scheme", "status"):
                row[k] = v
            elif k == "seed":
                row[k] = int(v)
            else:
                row[k] = float(v) if v != "" else None
        rows.append(row)
    return rows
