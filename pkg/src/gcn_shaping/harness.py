"""Experiment orchestration: configs, seed fan-out, aggregation, sweeps and
CSV artifacts (traces, curves, heatmaps, toy sweeps, gradient variance)."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .agent import (AgentConfig, AgentState, ExperimentTrace, GcnConfig, ShapingConfig, lambda_returns, rollout,
                    run_algorithm1, static_potential)
from .gcn import GcnModel, train as train_gcn
from .graph import build_spectral, dirichlet_energy, graph_from_mdp
from .gridworlds import ENVIRONMENTS, make_env
from .shaping import PotentialTable, save_potential_csv
from .toychain import MAX_ITERATIONS, chain_potential, lambda_sweep

POTENTIALS = ("gcn", "ab", "l2", "const", "zero", "none")
CURVE_HEADER = ["episode", "mean_cum_steps", "std_cum_steps", "stderr_cum_steps", "mean_return", "n_seeds"]
DEFAULT_ALPHAS = tuple(round(0.1 * i, 1) for i in range(11))
DEFAULT_ETAS = (0.1, 1.0, 10.0)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def _parse_seeds(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    seeds = []
    for part in str(value).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return tuple(seeds)


@dataclass
class ExperimentConfig:
    env: str = "fourrooms"
    potential: str = "gcn"
    alpha: float = 0.6
    eta: float = 10.0
    lam: float = 0.9
    retrain_every: int = 1
    reset_graph: bool = False
    episodes: int = 300
    seeds: tuple = tuple(range(10))
    out: str = "runs"
    actor_lr: float = 0.1
    critic_lr: float = 0.1
    temperature: float = 0.1
    critic_target: str = "mixed"
    hidden: int = 64
    gcn_lr: float = 1e-2
    gcn_iters: int = 200
    optimizer: str = "adam"
    prop_norm: str = "edges"
    warm_start: bool = True
    graph: str = "sampled"
    heatmaps: bool = False

    def __post_init__(self):
        self.seeds = _parse_seeds(self.seeds)

    def validate(self, create_out: bool = True) -> "ExperimentConfig":
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"env: unknown environment {self.env!r}; choose from {sorted(ENVIRONMENTS)}")
        if self.potential not in POTENTIALS:
            raise ConfigError(f"potential: unknown provider {self.potential!r}; choose from {POTENTIALS}")
        for name in ("alpha", "lam"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}: must lie in [0, 1], got {v}")
        for name in ("eta", "actor_lr", "critic_lr", "gcn_lr"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name}: must be non-negative")
        if not self.temperature > 0:
            raise ConfigError("temperature: must be positive")
        for name in ("retrain_every", "episodes", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be a positive integer")
        if self.gcn_iters < 0:
            raise ConfigError("gcn_iters: must be non-negative")
        if not self.seeds:
            raise ConfigError("seeds: seed list is empty")
        if self.critic_target not in ("plain", "mixed"):
            raise ConfigError(f"critic_target: must be 'plain' or 'mixed', got {self.critic_target!r}")
        if self.optimizer not in ("adam", "gd"):
            raise ConfigError(f"optimizer: must be 'adam' or 'gd', got {self.optimizer!r}")
        if self.prop_norm not in ("edges", "sum"):
            raise ConfigError(f"prop_norm: must be 'edges' or 'sum', got {self.prop_norm!r}")
        if self.graph not in ("sampled", "full"):
            raise ConfigError(f"graph: must be 'sampled' or 'full', got {self.graph!r}")
        if create_out:
            try:
                os.makedirs(self.out, exist_ok=True)
            except OSError as exc:
                raise ConfigError(f"out: cannot create {self.out!r}: {exc}") from None
            if not os.access(self.out, os.W_OK):
                raise ConfigError(f"out: directory {self.out!r} is not writable")
        return self

    # -- key=value files ---------------------------------------------------
    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in dataclasses.fields(cls)}

    @classmethod
    def coerce(cls, key: str, value):
        types = cls.field_types()
        if key not in types:
            raise ConfigError(f"{key}: unknown config key")
        kind = types[key]
        if not isinstance(value, str):
            return value
        try:
            if kind == "bool":
                low = value.strip().lower()
                if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                    raise ValueError(value)
                return low in ("1", "true", "yes", "on")
            if kind == "int":
                return int(value)
            if kind == "float":
                return float(value)
            if kind == "tuple":
                return _parse_seeds(value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None
        return value.strip()

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        values = {}
        for lineno, ln in enumerate(Path(path).read_text().splitlines(), start=1):
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            if "=" not in ln:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = (x.strip() for x in ln.split("=", 1))
            k = "lam" if k == "lambda" else k.replace("-", "_")
            values[k] = cls.coerce(k, v)
        values.update({k: cls.coerce(k, v) for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        """Short digest of everything except the output directory."""
        text = "\n".join(ln for ln in self.to_text().splitlines() if not ln.startswith("out="))
        return hashlib.sha1(text.encode()).hexdigest()[:10]

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    # -- component configs -------------------------------------------------
    def agent_config(self) -> AgentConfig:
        return AgentConfig(self.actor_lr, self.critic_lr, self.temperature, self.lam, self.critic_target)

    def gcn_config(self) -> GcnConfig:
        return GcnConfig(self.hidden, self.eta, self.gcn_lr, self.gcn_iters, self.optimizer, self.prop_norm,
                         self.warm_start, graph_source=self.graph)

    def shaping_config(self) -> ShapingConfig:
        return ShapingConfig(self.alpha, self.potential, self.retrain_every, self.reset_graph)


# -- aggregation --------------------------------------------------------------

def mean_std_two_pass(x) -> tuple:
    """Column-wise mean and sample std (ddof=1; 0 for a single row)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    mean = x.sum(axis=0) / n
    if n < 2:
        return mean, np.zeros_like(mean)
    dev = x - mean
    return mean, np.sqrt((dev * dev).sum(axis=0) / (n - 1))


def mean_std_one_pass(rows) -> tuple:
    """Welford's streaming update over rows."""
    n, mean, m2 = 0, None, None
    for row in rows:
        row = np.asarray(row, dtype=float)
        n += 1
        if mean is None:
            mean, m2 = row.copy(), np.zeros_like(row)
            continue
        delta = row - mean
        mean += delta / n
        m2 += delta * (row - mean)
    if n == 0:
        raise ValueError("no rows to aggregate")
    return mean, (np.sqrt(m2 / (n - 1)) if n > 1 else np.zeros_like(mean))


def aggregate_traces(traces: Sequence[ExperimentTrace]) -> list:
    """Per-episode rows matching ``CURVE_HEADER``."""
    if not traces:
        raise ValueError("no traces to aggregate")
    length = min(len(t.steps) for t in traces)
    cum = np.array([t.cum_steps[:length] for t in traces], dtype=float)
    ret = np.array([t.returns[:length] for t in traces], dtype=float)
    mean, std = mean_std_two_pass(cum)
    stderr = std / math.sqrt(len(traces))
    mret = ret.mean(axis=0)
    return [[ep, mean[ep], std[ep], stderr[ep], mret[ep], len(traces)] for ep in range(length)]


def write_curve(rows, path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for ep, m, s, se, r, n in rows:
            w.writerow([ep, repr(float(m)), repr(float(s)), repr(float(se)), repr(float(r)), n])
    return Path(path)


def read_curve(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CURVE_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = list(reader)
    return {k: np.array([float(r[k]) for r in rows]) for k in CURVE_HEADER}


# -- heatmaps -----------------------------------------------------------------

@dataclass
class HeatmapGrid:
    values: np.ndarray  # (height, width); NaN on walls
    provenance: str = ""

    @property
    def shape(self):
        return self.values.shape


def heatmap_grid(phi: PotentialTable, layout) -> HeatmapGrid:
    if layout is None or not hasattr(layout, "cells"):
        raise ValueError("heatmaps need a grid environment")
    if len(phi) != len(layout.cells):
        raise ValueError(f"potential has {len(phi)} states, layout has {len(layout.cells)} free cells")
    grid = np.full((layout.height, layout.width), np.nan)
    for s, (r, c) in enumerate(layout.cells):
        grid[r, c] = phi[s]
    return HeatmapGrid(grid, phi.provenance)


def format_heatmap(grid: HeatmapGrid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in grid.values:
        w.writerow(["NaN" if np.isnan(v) else repr(float(v)) for v in row])
    return buf.getvalue()


def parse_heatmap(path_or_text, provenance: str = "") -> HeatmapGrid:
    text = path_or_text if "\n" in str(path_or_text) else Path(path_or_text).read_text()
    rows = [[float(v) for v in row] for row in csv.reader(io.StringIO(text)) if row]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("heatmap rows must be non-empty and equally long")
    return HeatmapGrid(np.array(rows), provenance)


def emit_heatmap(phi: PotentialTable, layout, out_dir, config_hash: str, tag: str = "") -> Path:
    """Write ``heatmap_<provenance>[_<tag>]_<hash>.csv``; walls are ``NaN``."""
    grid = heatmap_grid(phi, layout)
    name = "_".join(p for p in ("heatmap", phi.provenance, tag, config_hash) if p) + ".csv"
    path = Path(out_dir) / name
    path.write_text(format_heatmap(grid))
    return path


# -- comparisons --------------------------------------------------------------

def compare_potentials(a: PotentialTable, b: PotentialTable) -> tuple:
    """(Spearman rho, max |a - b| after each is max-normalized), over states
    both providers actually produced."""
    if len(a) != len(b):
        raise ValueError(f"state spaces differ: {len(a)} vs {len(b)}")
    mask = np.asarray(a.seen) & np.asarray(b.seen)
    x, y = a.max_normalized()[mask], b.max_normalized()[mask]
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        rho = 1.0 if np.array_equal(x, y) else float("nan")
    else:
        rho = float(spearmanr(x, y).statistic)
    return rho, float(np.max(np.abs(x - y))) if x.size else 0.0


# -- suites -------------------------------------------------------------------

def run_seeds(cfg: ExperimentConfig, mdp=None) -> tuple:
    """Run every seed; returns ``(traces, failures)`` where failures maps
    seed -> error message.  One seed failing never stops the others."""
    mdp = make_env(cfg.env) if mdp is None else mdp
    potential = None
    if cfg.potential not in ("gcn", "none"):
        potential = static_potential(mdp, cfg.potential)
    traces, failures = [], {}
    for seed in cfg.seeds:
        try:
            traces.append(run_algorithm1(mdp, cfg.agent_config(), cfg.gcn_config(), cfg.shaping_config(),
                                         cfg.episodes, seed, potential=potential))
        except (FloatingPointError, ValueError, RuntimeError) as exc:
            failures[seed] = f"{type(exc).__name__}: {exc}"
    return traces, failures


def _stem(cfg: ExperimentConfig, tag: str = "") -> str:
    return "_".join(p for p in (cfg.env, cfg.potential, tag, cfg.config_hash()) if p)


def run_suite(cfg: ExperimentConfig, tag: str = "") -> dict:
    """Traces, aggregate curve, failure log and optional heatmaps for one config."""
    cfg.validate()
    mdp = make_env(cfg.env)
    out = Path(cfg.out)
    traces, failures = run_seeds(cfg, mdp)
    stem = _stem(cfg, tag)
    written = {"config": out / f"{stem}_config.txt"}
    written["config"].write_text(cfg.to_text())
    if traces:
        tpath = out / f"{stem}_traces.csv"
        for i, tr in enumerate(traces):
            tr.to_csv(tpath, append=i > 0)
        written["traces"] = tpath
        written["curve"] = write_curve(aggregate_traces(traces), out / f"{stem}_curve.csv")
    if failures:
        fpath = out / f"{stem}_failures.csv"
        with open(fpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "error"])
            for seed, msg in sorted(failures.items()):
                w.writerow([seed, msg])
        written["failures"] = fpath
    if cfg.heatmaps and mdp.layout is not None:
        for i, tr in enumerate(traces[:1]):
            if tr.phi is not None:
                written["heatmap"] = emit_heatmap(tr.phi, mdp.layout, out, cfg.config_hash(), tag)
        if cfg.potential == "gcn":
            written["heatmap_ab"] = emit_heatmap(static_potential(mdp, "ab"), mdp.layout, out, cfg.config_hash(), tag)
    written["traces_obj"] = traces
    written["failed_seeds"] = failures
    return written


def alpha_sweep(cfg: ExperimentConfig, alphas: Iterable[float] = DEFAULT_ALPHAS) -> dict:
    """One curve file per alpha value."""
    results = {}
    for a in alphas:
        a = float(a)
        res = run_suite(cfg.replace(alpha=a), tag=f"alpha{a:.2f}")
        results[a] = res.get("curve")
    return results


def fixed_graph_potential(mdp, eta: float, seed: int, n_iter: int = 1000, graph=None, **kw) -> tuple:
    """Train a fresh GCN on the full transition graph; returns (phi, energy of phi)."""
    g = graph_from_mdp(mdp) if graph is None else graph
    ops = build_spectral(g)
    model = GcnModel(mdp.num_states, eta=eta, n_iter=n_iter, seed=seed, **kw)
    phi = train_gcn(model, g, ops)
    return phi, dirichlet_energy(ops, phi.phi[ops.states])


def eta_sweep(env: str = "smaze", etas: Iterable[float] = DEFAULT_ETAS, seeds: Sequence[int] = tuple(range(10)),
              out=None, n_iter: int = 1000) -> dict:
    """Mean Dirichlet energy of the trained potential per eta on a fixed graph,
    plus one heatmap per eta (from the first seed) when ``out`` is given."""
    mdp = make_env(env)
    g = graph_from_mdp(mdp)
    res = {}
    for eta in etas:
        energies, first = [], None
        for seed in seeds:
            phi, e = fixed_graph_potential(mdp, float(eta), int(seed), n_iter, graph=g)
            energies.append(e)
            first = phi if first is None else first
        entry = {"energy": float(np.mean(energies)), "energies": energies, "phi": first}
        if out is not None and mdp.layout is not None:
            Path(out).mkdir(parents=True, exist_ok=True)
            h = hashlib.sha1(f"{env}|{eta!r}|{tuple(seeds)}|{n_iter}".encode()).hexdigest()[:10]
            entry["heatmap"] = emit_heatmap(first, mdp.layout, out, h, tag=f"eta{float(eta):g}")
        res[float(eta)] = entry
    if out is not None:
        with open(Path(out) / f"{env}_eta_energy.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eta", "mean_energy", "n_seeds"])
            for eta, entry in res.items():
                w.writerow([repr(eta), repr(entry["energy"]), len(entry["energies"])])
    return res


TOY_HEADER = ["lambda", "reward", "iterations", "censored"]


def run_toy_sweep(lambdas: Sequence[float], potential: str = "ab", out=None,
                  max_iterations: int = MAX_ITERATIONS) -> list:
    """Rows ``(lambda, reward, iterations, censored)`` for R and R_phi."""
    for lam in lambdas:
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda values must lie in [0, 1], got {lam}")
    from .gridworlds import build_two_arm_chain

    mdp = build_two_arm_chain()
    phi = chain_potential(mdp, potential)
    rows = []
    for label, p in (("R", None), ("R_phi", phi)):
        for r in lambda_sweep(lambdas, p, mdp, max_iterations=max_iterations):
            rows.append((r.lam, label, r.iterations, r.censored))
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TOY_HEADER)
            for lam, label, it, cens in rows:
                w.writerow([repr(lam), label, it, int(cens)])
    return rows


def read_toy_sweep(path) -> list:
    with open(path, newline="") as fh:
        return [(float(r["lambda"]), r["reward"], int(r["iterations"]), bool(int(r["censored"])))
                for r in csv.DictReader(fh)]


# -- gradient variance ----------------------------------------------------------

def gradient_variance(mdp, phi: PotentialTable, rollouts: int = 100, seed: int = 0,
                      agent: Optional[AgentState] = None) -> dict:
    """Per-state variance of single-sample policy-gradient terms
    gamma^t (G_t - b(s_t)) grad log pi(a_t|s_t), with b = 0 and with b = phi.

    Monte-Carlo returns (lambda = 1), so subtracting phi(s_t) is the same as
    using the shaped return.  Variance is the trace of the per-state sample
    covariance; states visited fewer than twice are skipped.
    """
    rng = np.random.default_rng(seed)
    agent = AgentState.create(mdp.num_states, mdp.num_actions, gamma=mdp.gamma) if agent is None else agent
    pi = agent.policy()
    tau = agent.config.temperature
    samples = {"plain": {}, "phi": {}}
    for _ in range(rollouts):
        ep = rollout(mdp, agent, rng)
        g = lambda_returns(ep, agent.v, 1.0, mdp.gamma)
        s = ep.states[:-1]
        disc = mdp.gamma ** np.arange(len(ep))
        score = -pi[s] / tau
        score[np.arange(len(ep)), ep.actions] += 1.0 / tau
        for key, base in (("plain", 0.0), ("phi", phi.phi[s])):
            terms = (disc * (g - base))[:, None] * score
            for st, row in zip(s.tolist(), terms):
                samples[key].setdefault(st, []).append(row)
    out = {}
    for key, per_state in samples.items():
        var = {st: float(np.var(np.array(rows), axis=0, ddof=1).sum())
               for st, rows in per_state.items() if len(rows) > 1}
        out[key] = var
    return out


def write_gradvar(result: dict, path) -> Path:
    states = sorted(set(result["plain"]) & set(result["phi"]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "var_plain", "var_phi"])
        for s in states:
            w.writerow([s, repr(result["plain"][s]), repr(result["phi"][s])])
    return Path(path)


def save_potential(phi: PotentialTable, out_dir, name: str) -> Path:
    path = Path(out_dir) / name
    save_potential_csv(phi, path)
    return path
