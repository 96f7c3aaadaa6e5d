"""Command-line entry point for the shaping experiments.

Exit status: 0 on success, 2 on invalid arguments or configuration, 1 when an
experiment fails at run time.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .agent import static_potential
from .gridworlds import ENVIRONMENTS, make_env
from .shaping import PROVENANCES, load_potential_csv

log = logging.getLogger("gcn_shaping")


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override its values")
    p.add_argument("--env", choices=sorted(ENVIRONMENTS))
    p.add_argument("--potential", choices=harness.POTENTIALS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seeds", help="e.g. 0-9 or 1,4,7")
    p.add_argument("--out")
    p.add_argument("--reset-graph", dest="reset_graph", action="store_true", default=None)
    p.add_argument("--retrain-every", dest="retrain_every", type=int)
    p.add_argument("--critic-target", dest="critic_target", choices=("plain", "mixed"))
    p.add_argument("--graph", choices=("sampled", "full"),
                   help="GCN graph: visited transitions (default) or the full transition graph")
    p.add_argument("--heatmaps", action="store_true", default=None)


_RUN_KEYS = ("env", "potential", "alpha", "eta", "lam", "episodes", "seeds", "out", "reset_graph",
             "retrain_every", "critic_target", "graph", "heatmaps")


def _config(args) -> harness.ExperimentConfig:
    overrides = {k: getattr(args, k) for k in _RUN_KEYS if getattr(args, k, None) is not None}
    if args.config:
        cfg = harness.ExperimentConfig.from_file(args.config, **overrides)
    else:
        cfg = harness.ExperimentConfig(**{k: harness.ExperimentConfig.coerce(k, v) for k, v in overrides.items()})
    return cfg.validate()


def _report(written: dict) -> int:
    for key, path in written.items():
        if isinstance(path, Path):
            print(f"{key}: {path}")
    failed = written.get("failed_seeds") or {}
    for seed, msg in sorted(failed.items()):
        print(f"seed {seed} failed: {msg}", file=sys.stderr)
    if not written.get("traces_obj"):
        print("error: every seed failed", file=sys.stderr)
        return 1
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    return _report(harness.run_suite(cfg))


def cmd_alpha_sweep(args) -> int:
    cfg = _config(args)
    curves = harness.alpha_sweep(cfg, args.alphas)
    missing = [a for a, path in curves.items() if path is None]
    for a, path in curves.items():
        print(f"alpha {a:.2f}: {path}")
    return 1 if missing else 0


def cmd_eta_sweep(args) -> int:
    seeds = harness._parse_seeds(args.seeds)
    if not seeds:
        raise harness.ConfigError("seeds: seed list is empty")
    res = harness.eta_sweep(args.env, args.etas, seeds, args.out, args.iterations)
    for eta, entry in res.items():
        print(f"eta {eta:g}: mean energy {entry['energy']:.6g}  heatmap {entry.get('heatmap')}")
    return 0


def cmd_toy_sweep(args) -> int:
    rows = harness.run_toy_sweep(args.lambdas, args.potential, args.out, args.max_iterations)
    for lam, label, it, cens in rows:
        print(f"lambda={lam:g} {label}: {it}{' (censored)' if cens else ''}")
    return 0


def _potential(env: str, kind: str, seed: int, eta: float):
    mdp = make_env(env)
    if kind == "gcn":
        phi, _ = harness.fixed_graph_potential(mdp, eta, seed)
        return mdp, phi
    return mdp, static_potential(mdp, kind)


def cmd_heatmap(args) -> int:
    mdp = make_env(args.env)
    if args.phi_csv:
        phi = load_potential_csv(args.phi_csv, args.provenance)
        tag = Path(args.phi_csv).stem
    else:
        mdp, phi = _potential(args.env, args.potential, args.seed, args.eta)
        tag = f"{args.env}"
    if mdp.layout is None:
        raise harness.ConfigError(f"env: {args.env!r} is not a grid environment")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    h = harness.hashlib.sha1(f"{args.env}|{args.potential}|{args.seed}|{args.eta!r}|{args.phi_csv}".encode()).hexdigest()[:10]
    path = harness.emit_heatmap(phi, mdp.layout, args.out, h, tag)
    print(path)
    if args.save_phi:
        print(harness.save_potential(phi, args.out, f"phi_{phi.provenance}_{tag}_{h}.csv"))
    return 0


def cmd_compare(args) -> int:
    if args.a_csv and args.b_csv:
        a = load_potential_csv(args.a_csv)
        b = load_potential_csv(args.b_csv)
    else:
        _, a = _potential(args.env, args.a, args.seed, args.eta)
        _, b = _potential(args.env, args.b, args.seed, args.eta)
    rho, diff = harness.compare_potentials(a, b)
    print(f"spearman_rho={rho:.6f} max_abs_diff={diff:.6f}")
    return 0


def cmd_gradvar(args) -> int:
    mdp, phi = _potential(args.env, args.potential, args.seed, args.eta)
    res = harness.gradient_variance(mdp, phi, args.rollouts, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    path = harness.write_gradvar(res, args.out)
    common = sorted(set(res["plain"]) & set(res["phi"]))
    vp = np.mean([res["plain"][s] for s in common]) if common else float("nan")
    vf = np.mean([res["phi"][s] for s in common]) if common else float("nan")
    print(f"{path}: mean per-state variance plain={vp:.6g} with_phi={vf:.6g} over {len(common)} states")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcn-shaping", description="Graph-based reward shaping experiments on tabular MDPs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train agents over seeds and write traces and curves")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("alpha-sweep", help="one curve file per mixing weight")
    _add_run_flags(p)
    p.add_argument("--alphas", type=_floats, default=list(harness.DEFAULT_ALPHAS))
    p.set_defaults(func=cmd_alpha_sweep)

    p = sub.add_parser("eta-sweep", help="potential smoothness and heatmaps per eta on a fixed graph")
    p.add_argument("--env", choices=sorted(ENVIRONMENTS), default="smaze")
    p.add_argument("--etas", type=_floats, default=list(harness.DEFAULT_ETAS))
    p.add_argument("--seeds", default="0-9")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_eta_sweep)

    p = sub.add_parser("toy-sweep", help="iterations to the optimal arm on the two-arm chain per lambda")
    p.add_argument("--lambdas", type=_floats, default=[round(0.1 * i, 1) for i in range(1, 11)])
    p.add_argument("--potential", choices=("ab", "gcn", "zero"), default="ab")
    p.add_argument("--max-iterations", dest="max_iterations", type=int, default=harness.MAX_ITERATIONS)
    p.add_argument("--out", default="runs/toy_sweep.csv")
    p.set_defaults(func=cmd_toy_sweep)

    p = sub.add_parser("heatmap", help="write a potential as a grid CSV")
    p.add_argument("--env", choices=sorted(ENVIRONMENTS), default="fourrooms")
    p.add_argument("--potential", choices=("gcn", "ab", "l2", "const", "zero"), default="ab")
    p.add_argument("--phi-csv", dest="phi_csv", help="read the potential from a state,phi CSV instead")
    p.add_argument("--provenance", choices=PROVENANCES, default="constant")
    p.add_argument("--eta", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-phi", dest="save_phi", action="store_true")
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("compare", help="rank correlation and sup-distance between two potentials")
    p.add_argument("--env", choices=sorted(ENVIRONMENTS), default="fourrooms")
    p.add_argument("--a", choices=("gcn", "ab", "l2", "const", "zero"), default="gcn")
    p.add_argument("--b", choices=("gcn", "ab", "l2", "const", "zero"), default="ab")
    p.add_argument("--a-csv", dest="a_csv")
    p.add_argument("--b-csv", dest="b_csv")
    p.add_argument("--eta", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradvar", help="per-state policy-gradient variance with and without the potential")
    p.add_argument("--env", choices=sorted(ENVIRONMENTS), default="fourrooms")
    p.add_argument("--potential", choices=("gcn", "ab", "l2", "const", "zero"), default="ab")
    p.add_argument("--rollouts", type=int, default=100)
    p.add_argument("--eta", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/gradvar.csv")
    p.set_defaults(func=cmd_gradvar)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 1
    except (FloatingPointError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
