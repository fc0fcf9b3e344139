"""Resumable, deterministic parameter sweeps over a rectangle of two parameters.

Layout of a job directory::

    job.json               job description (written once, checked on resume)
    manifest.jsonl         one line per finished cell: <json>\\t<crc32>
    results.partial.jsonl  one record per finished cell, in completion order
    results.jsonl          final store, sorted by cell id
    results.csv            flat projection for plotting

A line whose checksum does not match (for instance a line cut short by an
interrupted write) is ignored, so the affected cell is simply run again.
"""

from __future__ import annotations

import json
import math
import multiprocessing as mp
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .family import load_family

TASKS = ("census", "pd", "strip")
OUT_ENV = "UNFOLDING_ATLAS_OUT"


# ---------------------------------------------------------------------------
# byte-stable JSON


def _num(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    s = f"{v:.17g}"
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def dumps17(obj) -> str:
    """JSON with sorted keys and every float written with 17 significant digits."""
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(f"{json.dumps(k)}:{dumps17(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(dumps17(v) for v in obj) + "]"
    if isinstance(obj, complex):
        return dumps17([obj.real, obj.imag])
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _crc(text: str) -> str:
    return f"{zlib.crc32(text.encode()) & 0xFFFFFFFF:08x}"


def _checked_lines(path: Path):
    """Yield parsed objects of lines whose checksum verifies."""
    if not path.exists():
        return
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.endswith("\n"):
                continue
            body, sep, crc = line[:-1].rpartition("\t")
            if not sep or _crc(body) != crc:
                continue
            try:
                yield body, json.loads(body)
            except json.JSONDecodeError:
                continue


# ---------------------------------------------------------------------------
# jobs


@dataclass
class SweepJob:
    job_id: str
    family: dict
    axes: tuple = ("a", "b")
    rect: tuple = (-2.0, 0.5, -0.5, 0.5)
    shape: tuple = (10, 10)
    task: str = "census"
    out_dir: str = "sweep_out"
    seed: int = 0
    base: dict = field(default_factory=dict)
    task_kw: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        self.axes = tuple(self.axes)
        self.rect = tuple(float(v) for v in self.rect)
        self.shape = tuple(int(v) for v in self.shape)
        if len(self.axes) != 2 or len(self.rect) != 4 or len(self.shape) != 2:
            raise ValueError("axes, rect and shape must describe a 2-d grid")
        if min(self.shape) < 0:
            raise ValueError("grid shape must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepJob":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def path(self) -> Path:
        return Path(self.out_dir)

    def cells(self) -> list:
        """(cell_id, x, y) at cell centres, row-major in y then x."""
        nx, ny = self.shape
        x0, x1, y0, y1 = self.rect
        out = []
        for j in range(ny):
            for i in range(nx):
                x = x0 + (i + 0.5) * (x1 - x0) / nx
                y = y0 + (j + 0.5) * (y1 - y0) / ny
                out.append((j * nx + i, x, y))
        return out

    def completed(self) -> set:
        """Cell ids whose manifest line and result line both verify."""
        done_manifest = {obj["cell"]: obj["crc"] for _, obj in
                         _checked_lines(self.path / "manifest.jsonl")}
        done = set()
        for body, obj in _checked_lines(self.path / "results.partial.jsonl"):
            cid = obj.get("cell")
            if done_manifest.get(cid) == _crc(body):
                done.add(cid)
        return done


# ---------------------------------------------------------------------------
# cell tasks (pure functions of job and cell)


def _param_vector(family, job: SweepJob, x: float, y: float) -> np.ndarray:
    pv = np.zeros(len(family.param_names))
    for k, v in job.base.items():
        pv[family.param_names.index(k)] = float(v)
    pv[family.param_names.index(job.axes[0])] = x
    pv[family.param_names.index(job.axes[1])] = y
    return pv


def _task_census(family, pv, job, cell_id):
    from .attractors import basin_census, seed_grid

    kw = job.task_kw
    seeds = seed_grid(kw.get("seed_rect", (-2.5, 2.5, -2.5, 2.5)), kw.get("nx", 8), kw.get("ny", 8))
    jitter = float(kw.get("jitter", 0.0))
    if jitter:
        rng = np.random.default_rng([int(job.seed), int(cell_id)])
        seeds = seeds + jitter * rng.uniform(-1.0, 1.0, seeds.shape)
    recs, info = basin_census(family, pv, seeds, transient=kw.get("transient", 2000),
                              window=kw.get("window", 512),
                              classify_kw={"lyap_n": kw.get("lyap_n", 2000), "ce_n": 100,
                                           "ce_samples": 2})
    return {"records": [r.to_dict() for r in recs], "escape_fraction": info["escape_fraction"],
            "n_attractors": len(recs)}


def _task_pd(family, pv, job, cell_id):
    from .cascade import cascade_in_slice

    kw = job.task_kw
    direction = np.zeros_like(pv)
    direction[family.param_names.index(kw.get("slice_param", job.axes[0]))] = 1.0
    rec = cascade_in_slice(family, pv, direction, tuple(kw.get("bracket", (0.0, -1.0))),
                           K_depth=kw.get("K", 4), period=kw.get("period", 1),
                           seed=kw.get("seed_point"))
    return {"beta_inf": rec.beta_inf, "delta_est": rec.delta_est, "K_achieved": rec.K_achieved,
            "flips": rec.flip_params}


def _task_strip(family, pv, job, cell_id):
    from .strip import _Normalizer, model_transit, strong_sink

    kw = job.task_kw
    n = int(kw.get("n", 4))
    tr = model_transit(family)
    t, a = float(pv[tr.t_index]), float(pv[tr.a_index])
    sa, orb, _ = strong_sink(family, n, t, tr)
    d = _Normalizer(family, tr, n, t)(a, orb[0])
    lo, hi = kw.get("nu_range", (-3.5, 0.5))
    return {"sa": sa, "nu": d.nu, "eps_sup": d.eps_sup, "inside": bool(lo <= d.nu <= hi)}


_TASK_FN = {"census": _task_census, "pd": _task_pd, "strip": _task_strip}


def run_cell(job_dict: dict, cell) -> dict:
    """Evaluate one cell; failures become records with a diagnostic."""
    job = SweepJob.from_dict(job_dict)
    cid, x, y = cell
    rec = {"cell": int(cid), "params": {job.axes[0]: float(x), job.axes[1]: float(y)},
           "task": job.task}
    try:
        family = load_family(job.family)
        pv = _param_vector(family, job, float(x), float(y))
        rec["status"] = "ok"
        rec["result"] = _TASK_FN[job.task](family, pv, job, cid)
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
        rec["status"] = "failed"
        rec["error"] = f"{type(exc).__name__}: {exc}"
    return rec


# ---------------------------------------------------------------------------
# driver


def _check_job_file(job: SweepJob):
    p = job.path / "job.json"
    text = dumps17(job.to_dict()) + "\n"
    if p.exists():
        if p.read_text() != text:
            raise ValueError(f"{p} describes a different job; use a fresh output directory")
    else:
        p.write_text(text)


def _pool(workers: int):
    methods = mp.get_all_start_methods()
    ctx = mp.get_context("fork" if "fork" in methods else "spawn")
    return ProcessPoolExecutor(max_workers=workers, mp_context=ctx)


def run_sweep(job: SweepJob, workers: int = 1, max_cells: int | None = None) -> Path:
    """Run incomplete cells and finalize the sorted store.

    ``max_cells`` stops after that many newly finished cells (the store is then
    left unfinalized, exactly as after an interruption).  Returns the path of
    results.jsonl (or of the partial store when stopped early).
    """
    out = job.path
    out.mkdir(parents=True, exist_ok=True)
    _check_job_file(job)
    _repair(out / "results.partial.jsonl")
    _repair(out / "manifest.jsonl")
    done = job.completed()
    todo = [c for c in job.cells() if c[0] not in done]
    if max_cells is not None:
        todo = todo[:max(0, int(max_cells))]
    jd = job.to_dict()
    with open(out / "results.partial.jsonl", "a", encoding="utf-8") as res_fh, \
            open(out / "manifest.jsonl", "a", encoding="utf-8") as man_fh:

        def write(rec):
            body = dumps17(rec)
            crc = _crc(body)
            res_fh.write(f"{body}\t{crc}\n")
            res_fh.flush()
            mline = dumps17({"cell": rec["cell"], "status": rec["status"], "crc": crc})
            man_fh.write(f"{mline}\t{_crc(mline)}\n")
            man_fh.flush()
            os.fsync(man_fh.fileno())

        if workers <= 1 or len(todo) <= 1:
            for cell in todo:
                write(run_cell(jd, cell))
        else:
            with _pool(workers) as ex:
                # map yields in submission order: this process is the only writer
                for rec in ex.map(run_cell, [jd] * len(todo), todo, chunksize=1):
                    write(rec)
    if max_cells is not None and len(job.completed()) < len(job.cells()):
        return out / "results.partial.jsonl"
    return finalize(job)


def _repair(path: Path):
    """Drop a trailing partial line so that appends start on a fresh line."""
    if not path.exists():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        cut = data.rfind(b"\n")
        path.write_bytes(data[:cut + 1] if cut >= 0 else b"")


def finalize(job: SweepJob) -> Path:
    """Write results.jsonl (sorted by cell, last verified record wins) and results.csv."""
    out = job.path
    manifest = {obj["cell"]: obj["crc"] for _, obj in _checked_lines(out / "manifest.jsonl")}
    recs = {}
    for body, obj in _checked_lines(out / "results.partial.jsonl"):
        if manifest.get(obj.get("cell")) == _crc(body):
            recs[obj["cell"]] = body
    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for cid in sorted(recs):
            fh.write(recs[cid] + "\n")
    with open(out / "results.csv", "w", encoding="utf-8") as fh:
        fh.write(f"cell,{job.axes[0]},{job.axes[1]},status,summary\n")
        for cid in sorted(recs):
            r = json.loads(recs[cid])
            x, y = (r["params"][k] for k in job.axes)
            fh.write(f"{cid},{_num(x)},{_num(y)},{r['status']},{_summary(r)}\n")
    return out / "results.jsonl"


def _summary(rec: dict) -> str:
    if rec["status"] != "ok":
        return ""
    res = rec["result"]
    if rec["task"] == "census":
        return ";".join(f"{r['kind']}({r['period_or_depth']})" if r["period_or_depth"] is not None
                        else r["kind"] for r in res["records"])
    if rec["task"] == "pd":
        return _num(res["beta_inf"])
    return _num(res["nu"])


def out_dir(cli_value: str | None, default: str = "atlas_out") -> Path:
    """Output directory: UNFOLDING_ATLAS_OUT overrides the command-line value."""
    env = os.environ.get(OUT_ENV)
    return Path(env if env else (cli_value or default))
