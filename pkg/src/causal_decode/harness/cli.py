"""Command line entry point: gen-world, run, sweep, bench, report."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from ..fusion import FusionConfig
from ..worldsim import BeliefCache, format_belief, generate_world
from .config import ConfigError, ExperimentConfig, load_config, stream
from .report import emit_report, load_records
from .runner import bench_throughput, run_experiment, sweep_alpha, world_seed_for

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "out", None):
        changes["output_dir"] = args.out
    if getattr(args, "sources", None):
        changes["sources"] = [s.strip() for s in args.sources.split(",") if s.strip()]
    alpha = getattr(args, "alpha", None)
    if alpha is not None and args.command in ("run", "bench"):
        vals = _floats(alpha)
        if len(vals) != 1:
            raise ConfigError("--alpha takes a single value for this command")
        changes["fusion"] = dataclasses.replace(cfg.fusion, alpha=vals[0])
    try:
        return dataclasses.replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_gen_world(args) -> int:
    cfg = _load(args)
    seed = world_seed_for(cfg)
    suite = generate_world(dataclasses.replace(cfg.world, seed=seed))
    v = suite.vocab
    print(f"world seed {seed}: C={suite.C} categories, |V|={v.size}, markov_k={cfg.world.markov_k}")
    print(f"gamma={suite.gamma:g}  inverting alpha={FusionConfig.alpha_for_gamma(suite.gamma):g}")
    print("categories:", ", ".join(v.category_names))
    names = v.category_names
    pairs = [(names[d], names[c], cfg.world.cooccur[d, c])
             for d in range(suite.C) for c in range(suite.C) if cfg.world.cooccur[d, c] > 0]
    for d, c, w in sorted(pairs, key=lambda t: -t[2])[:10]:
        print(f"  cooccur {d} -> {c}: {w:g}")
    from ..worldsim import sample_scene
    scene = sample_scene(cfg.world, stream(cfg.master_seed, "scenes"))
    det = BeliefCache(cfg.detector, seed=0)
    print("example scene present:", [names[c] for c in scene.present()])
    print("  percept:", [names[c] for c in np.flatnonzero(suite.percept(scene))])
    print("  detector:", format_belief(det.belief(scene), v))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    rec = run_experiment(cfg, persist=bool(cfg.output_dir))
    for source, m in rec.metrics.items():
        chair = m.get("chair")
        line = f"{source:10s}"
        if chair:
            line += f" CHAIR_I={chair['chair_i_pct']:.2f}% CHAIR_S={chair['chair_s_pct']:.2f}%"
        for split, r in (m.get("pope") or {}).items():
            f1 = r["f1"]
            line += f" POPE[{split}] F1={'undef' if f1 is None else f'{100 * f1:.1f}'}"
        if "divergence" in m:
            line += f" KL={m['divergence']:.3g}"
        print(line)
    for source, err in rec.errors.items():
        print(f"{source}: FAILED {err}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    grid = _floats(args.alpha) if args.alpha else [0.0, 0.5, 1.0, 1.5, 2.0, 4.0]
    records = sweep_alpha(cfg, grid, persist=bool(cfg.output_dir))
    for rec in records:
        parts = []
        for source, m in rec.metrics.items():
            if m.get("chair"):
                parts.append(f"{source} CHAIR_I={m['chair']['chair_i_pct']:.2f}%")
        print(f"alpha={rec.alpha:g}: " + "; ".join(parts))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load(args)
    out = bench_throughput(cfg, args.tokens)
    print(json.dumps(out, indent=1))
    return EXIT_OK


def cmd_report(args) -> int:
    records = load_records(args.records)
    for p in emit_report(records, args.out or "."):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="causal-decode", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, sources=True):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--out", help="output directory")
        if sources:
            p.add_argument("--sources", help="comma-separated source tags")
        p.add_argument("--alpha", help="contrast weight (comma list for sweep)")

    common(sub.add_parser("gen-world", help="print a world summary"), sources=False)
    common(sub.add_parser("run", help="run one experiment"))
    common(sub.add_parser("sweep", help="sweep alpha on a shared world"))
    p = sub.add_parser("bench", help="decoding throughput, base vs coad")
    common(p)
    p.add_argument("--tokens", type=int, default=2000)
    p = sub.add_parser("report", help="re-emit CSV / plot data from run JSON files")
    p.add_argument("records", nargs="+")
    p.add_argument("--out")
    return ap


COMMANDS = {"gen-world": cmd_gen_world, "run": cmd_run, "sweep": cmd_sweep,
            "bench": cmd_bench, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
