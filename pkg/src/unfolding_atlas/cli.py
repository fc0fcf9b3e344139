"""Command-line front end.

Every subcommand reads a family (JSON file, JSON string or a built-in name)
and writes its products into the output directory.  Options may also come
from ``--config`` (a JSON object whose keys are option names); explicit
command-line values win.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from .exceptions import AtlasError
from .family import henon_family, linear_family, load_family, cubic_henon_family, UnfoldingModel
from .sweep import SweepJob, dumps17, out_dir, run_sweep

BUILTIN = {"henon": henon_family, "linear": linear_family, "cubic-henon": cubic_henon_family,
           "model": UnfoldingModel}

_NUM_LIKE = re.compile(r"^-[\d.]")


def _family(spec):
    if spec is None:
        raise ValueError("--family is required")
    if isinstance(spec, str) and spec in BUILTIN:
        return BUILTIN[spec]()
    return load_family(spec)


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _emit(args, name: str, payload) -> int:
    text = payload if isinstance(payload, str) else dumps17(payload) + "\n"
    p = _write(args.out_path / name, text)
    print(str(p))
    return 0


# ---------------------------------------------------------------------------
# subcommands


def cmd_saddle(args) -> int:
    from .saddle import find_periodic_point

    fam = _family(args.family)
    s = find_periodic_point(fam, _floats(args.params), args.period, _floats(args.seed_point))
    d = s.to_dict()
    d["precision"] = args.precision
    print(dumps17(d))
    return _emit(args, "saddle.json", d)


def cmd_manifold(args) -> int:
    from .manifolds import grow_manifold
    from .saddle import find_periodic_point

    fam = _family(args.family)
    p = _floats(args.params)
    s = find_periodic_point(fam, p, args.period, _floats(args.seed_point))
    arc = grow_manifold(fam, p, s, args.side, args.budget, args.angle_cap, args.seg_cap,
                        branches=args.branches)
    return _emit(args, f"manifold_{args.side}.csv", arc.to_csv())


def _model_source(fam, args):
    from .manifolds import ManifoldPairSource

    return ManifoldPairSource(fam, _floats(args.seed_point), tuple(_floats(args.window)),
                              budget_u=args.budget, budget_s=args.budget_s,
                              branches_u=args.branches, branches_s=args.branches,
                              seg_cap=args.seg_cap)


def cmd_tangency(args) -> int:
    from .manifolds import detect_tangency

    fam = _family(args.family)
    src = _model_source(fam, args)
    ev = detect_tangency(src, args.t, tuple(_floats(args.bracket)), moving=args.moving,
                         family=fam)
    return _emit(args, "tangency.json", ev.to_dict())


def cmd_strip(args) -> int:
    from .strip import build_strip, model_transit, strong_sink_locus

    fam = _family(args.family)
    tr = model_transit(fam)
    tg = np.linspace(*_floats(args.t_range), args.t_samples)
    loc = strong_sink_locus(fam, args.n, tg, tr)
    st = build_strip(fam, loc, tr)
    return _emit(args, f"strip_n{args.n}.csv", st.to_csv())


def cmd_normalize(args) -> int:
    from .strip import _Normalizer, model_transit, strong_sink

    fam = _family(args.family)
    t, a = _floats(args.params)
    tr = model_transit(fam)
    sa, orb, _ = strong_sink(fam, args.n, t, tr)
    d = _Normalizer(fam, tr, args.n, t)(a, orb[0])
    return _emit(args, f"normalize_n{args.n}.json", d.to_dict())


def cmd_pd_curve(args) -> int:
    from .cascade import cascade_in_slice, pd_curve

    fam = _family(args.family)
    if args.n is None:
        # plain slice: base point + direction
        rec = cascade_in_slice(fam, _floats(args.params), _floats(args.direction),
                               tuple(_floats(args.bracket)), K_depth=args.K, period=args.period,
                               seed=_floats(args.seed_point) if args.seed_point else None)
        lines = ["k,beta_k,K_achieved,delta_est,beta_inf"]
        for k, b in enumerate(rec.flip_params):
            lines.append(f"{k},{b:.17g},{rec.K_achieved},{rec.delta_est:.17g},{rec.beta_inf:.17g}")
        return _emit(args, "pd_slice.csv", "\n".join(lines) + "\n")
    from .strip import build_strip, model_transit, strong_sink_locus

    tr = model_transit(fam)
    tg = np.linspace(*_floats(args.t_range), args.t_samples)
    st = build_strip(fam, strong_sink_locus(fam, args.n, tg, tr), tr)
    curve = pd_curve(fam, st, tg, K_depth=args.K)
    return _emit(args, f"pd_curve_n{args.n}.csv", curve.to_csv())


def cmd_coexist(args) -> int:
    from .cascade import find_2pd_points
    from .manifolds import detect_tangency

    fam = _family(args.family)
    src = _model_source(fam, args)
    sec = detect_tangency(src, args.t, tuple(_floats(args.bracket)), family=fam)
    sec.kind = "secondary"
    pts = find_2pd_points(fam, args.n, sec, [int(v) for v in _floats(args.m)], K_depth=args.K,
                          t_grid=np.linspace(*_floats(args.t_range), args.t_samples))
    return _emit(args, "coexistence.jsonl", "".join(dumps17(p.to_dict()) + "\n" for p in pts))


def cmd_classify(args) -> int:
    from .attractors import basin_census, census_jsonl, seed_grid

    fam = _family(args.family)
    seeds = seed_grid(_floats(args.seed_rect), args.grid, args.grid)
    recs, info = basin_census(fam, _floats(args.params), seeds, transient=args.transient,
                              window=args.window)
    print(dumps17({"escape_fraction": info["escape_fraction"],
                   "attractors": [r.label for r in recs]}))
    return _emit(args, "census.jsonl", census_jsonl(recs))


def cmd_sweep(args) -> int:
    cfg = dict(args.job or {})
    if not cfg:
        raise ValueError("sweep needs a job description (--config with a 'job' object)")
    cfg.setdefault("out_dir", str(args.out_path / "sweep"))
    cfg.setdefault("seed", args.seed)
    job = SweepJob.from_dict(cfg)
    path = run_sweep(job, workers=args.workers, max_cells=args.max_cells)
    print(str(path))
    return 0


def cmd_probe_scaling(args) -> int:
    from .strip import model_transit, scaling_probe

    fam = _family(args.family)
    pr = scaling_probe(fam, args.t, [int(v) for v in _floats(args.n_list)], model_transit(fam),
                       with_widths=not args.no_widths)
    return _emit(args, "scaling_probe.json", pr.to_dict())


# ---------------------------------------------------------------------------
# parser


def _global_flags(p, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--precision", choices=("double", "extended"), default=d("double"))
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--out", default=d(None))
    p.add_argument("--config", default=d(None))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unfolding-atlas",
                                     description="Homoclinic unfoldings, strips and cascades.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="command")
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    common.add_argument("--family", default=argparse.SUPPRESS)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    # required options are checked after --config has been merged
    sp = add("saddle", cmd_saddle, "periodic saddle and its multipliers")
    sp.set_defaults(required_opts=("params", "seed_point"))
    sp.add_argument("--params", default=None)
    sp.add_argument("--period", type=int, default=1)
    sp.add_argument("--seed-point", default=None)

    sp = add("manifold", cmd_manifold, "grow a stable or unstable manifold")
    sp.set_defaults(required_opts=("params", "seed_point"))
    sp.add_argument("--params", default=None)
    sp.add_argument("--period", type=int, default=1)
    sp.add_argument("--seed-point", default=None)
    sp.add_argument("--side", choices=("stable", "unstable"), default="unstable")
    sp.add_argument("--budget", type=float, default=5.0)
    sp.add_argument("--angle-cap", type=float, default=0.2)
    sp.add_argument("--seg-cap", type=float, default=1e-2)
    sp.add_argument("--branches", choices=("both", "+", "-"), default="both")

    def arcs(sp):
        sp.add_argument("--seed-point", default="0,0")
        sp.add_argument("--window", default="1,3,-0.5,0.5")
        sp.add_argument("--budget", type=float, default=6.0)
        sp.add_argument("--budget-s", type=float, default=4.0)
        sp.add_argument("--branches", choices=("both", "+", "-"), default="+")
        sp.add_argument("--seg-cap", type=float, default=1e-2)

    sp = add("tangency", cmd_tangency, "locate a homoclinic tangency in a")
    sp.add_argument("--t", type=float, default=0.0)
    sp.add_argument("--bracket", default="-0.05,0.05")
    sp.add_argument("--moving", choices=("U", "S"), default="U")
    arcs(sp)

    sp = add("strip", cmd_strip, "strong sink locus and strip edges")
    sp.add_argument("--n", type=int, default=4)
    sp.add_argument("--t-range", default="-0.5,0.5")
    sp.add_argument("--t-samples", type=int, default=5)

    sp = add("normalize", cmd_normalize, "normalized return map at (t, a)")
    sp.set_defaults(required_opts=("params",))
    sp.add_argument("--n", type=int, default=4)
    sp.add_argument("--params", default=None)

    sp = add("pd-curve", cmd_pd_curve, "cascade accumulation along a slice or PD_n(t)")
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--params", default="0,0")
    sp.add_argument("--direction", default="1,0")
    sp.add_argument("--bracket", default="0,-1.5")
    sp.add_argument("--period", type=int, default=1)
    sp.add_argument("--seed-point", default=None)
    sp.add_argument("--K", type=int, default=7)
    sp.add_argument("--t-range", default="-0.5,0.5")
    sp.add_argument("--t-samples", type=int, default=5)

    sp = add("coexist", cmd_coexist, "two-cascade coexistence points")
    sp.add_argument("--n", type=int, default=3)
    sp.add_argument("--m", default="5")
    sp.add_argument("--K", type=int, default=6)
    sp.add_argument("--t", type=float, default=0.5)
    sp.add_argument("--bracket", default="0.03,0.036")
    sp.add_argument("--t-range", default="0.4,1.2")
    sp.add_argument("--t-samples", type=int, default=5)
    arcs(sp)
    sp.set_defaults(window="1.95,2.1,-0.05,0.05", budget=20.0, seg_cap=2e-3)

    sp = add("classify", cmd_classify, "basin census at one parameter")
    sp.set_defaults(required_opts=("params",))
    sp.add_argument("--params", default=None)
    sp.add_argument("--seed-rect", default="-2.5,2.5,-2.5,2.5")
    sp.add_argument("--grid", type=int, default=16)
    sp.add_argument("--transient", type=int, default=10_000)
    sp.add_argument("--window", type=int, default=4096)

    sp = add("sweep", cmd_sweep, "resumable parameter sweep")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--max-cells", type=int, default=None)

    sp = add("probe-scaling", cmd_probe_scaling, "rates of nu across n")
    sp.add_argument("--t", type=float, default=0.0)
    sp.add_argument("--n-list", default="4,5,6,7,8")
    sp.add_argument("--no-widths", action="store_true")
    return parser


def _preprocess(argv: list) -> list:
    """Glue negative-number values to their option (``--params -1,0``)."""
    out = []
    for tok in argv:
        if out and out[-1].startswith("--") and "=" not in out[-1] and _NUM_LIKE.match(tok):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def _apply_config(parser, args, argv):
    if not args.config:
        return
    cfg = json.loads(Path(args.config).read_text()) if Path(args.config).exists() \
        else json.loads(args.config)
    given = {tok.split("=")[0].lstrip("-").replace("-", "_") for tok in argv if tok.startswith("--")}
    for k, v in cfg.items():
        key = k.replace("-", "_")
        if key in given:
            continue
        if isinstance(v, list) and key not in ("job",):
            v = ",".join(str(x) for x in v)
        setattr(args, key, v)


def cli_dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    argv = _preprocess(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    for name, default in (("family", None), ("job", None), ("precision", "double"),
                          ("seed", 0), ("out", None), ("config", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        _apply_config(parser, args, argv)
    except (ValueError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"unfolding-atlas: error: bad --config: {exc}", file=sys.stderr)
        return 2
    missing = [o for o in getattr(args, "required_opts", ()) if getattr(args, o, None) is None]
    if missing:
        parser.print_usage(sys.stderr)
        flags = ", ".join("--" + o.replace("_", "-") for o in missing)
        print(f"unfolding-atlas {args.command}: error: missing {flags}", file=sys.stderr)
        return 2
    try:
        args.out_path = out_dir(args.out)
        return int(args.func(args) or 0)
    except (AtlasError, ValueError, KeyError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc),
               "command": getattr(args, "command", None)}
        print(json.dumps(err), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())
