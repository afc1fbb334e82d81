"""Train one backbone under several q strategies and tabulate the results."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np

from .encoding import q_baseline_edges, q_baseline_perturbation, q_baseline_ring
from .graph import Digraph
from .train import TrainConfig, evaluate, train


class StrategyError(ValueError):
    pass


@dataclass(frozen=True)
class Strategy:
    name: str
    mode: str
    q: float = 0.0


_SPEC = re.compile(r"^\s*([A-Za-z_+]+)\s*(?:[:(]\s*([-+0-9.eE]+)\s*\)?)?\s*$")


def parse_strategy(text: str, g: Digraph) -> Strategy:
    """Parse ``fixed:0.25``, ``fixed(0.25)``, ``edges:1``, ``ring:4``,
    ``perturbation:0.5``, ``MAP`` or ``MAP++``."""
    m = _SPEC.match(text)
    if not m:
        raise StrategyError(f"unknown strategy {text!r}")
    kind, arg = m.group(1), m.group(2)
    key = kind.lower()
    if key in ("map", "map++"):
        if arg is not None:
            raise StrategyError(f"{kind} takes no argument")
        return Strategy(kind.upper(), kind.upper())
    try:
        if key == "fixed":
            if arg is None:
                raise StrategyError("fixed needs a q value, e.g. fixed:0.25")
            q = float(arg)
            if not 0.0 <= q <= 0.25:
                raise StrategyError("fixed q must lie in [0, 0.25]")
        elif key in ("edges", "edges_baseline"):
            q = q_baseline_edges(g, float(arg) if arg else 1.0)
        elif key in ("ring", "ring_baseline"):
            q = q_baseline_ring(int(float(arg)) if arg else 4)
        elif key in ("perturbation", "perturbation_baseline"):
            q = q_baseline_perturbation(g, float(arg) if arg else 0.5)
        else:
            raise StrategyError(f"unknown strategy {text!r}")
    except ValueError as exc:
        if isinstance(exc, StrategyError):
            raise
        raise StrategyError(f"{text!r}: {exc}") from exc
    return Strategy(text.strip(), "fixed", q)


def q_compare(g: Digraph, strategies, cfg: TrainConfig, seeds=5) -> list[dict]:
    """Mean/std of the test metric over ``seeds`` model seeds per strategy."""
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    parsed = [s if isinstance(s, Strategy) else parse_strategy(s, g) for s in strategies]
    rows = []
    for strat in parsed:
        scores, qmin, qmean, qmax = [], [], [], []
        for seed in seeds:
            run_cfg = replace(cfg, mode=strat.mode, q=strat.q, seed=seed)
            res = train(g, run_cfg)
            scores.append(evaluate(res, g, run_cfg)["test_metric"])
            q = res.q_star
            if q is not None and q.size:
                qmin.append(q.min())
                qmean.append(q.mean())
                qmax.append(q.max())
        rows.append({
            "strategy": strat.name,
            "mode": strat.mode,
            "q": strat.q if strat.mode == "fixed" else None,
            "mean": float(np.mean(scores)),
            "std": float(np.std(scores)),
            "seeds": len(seeds),
            "q_stats": {"min": float(np.min(qmin)) if qmin else 0.0,
                        "mean": float(np.mean(qmean)) if qmean else 0.0,
                        "max": float(np.max(qmax)) if qmax else 0.0},
        })
    return rows


def format_table(rows: list[dict]) -> str:
    lines = ["strategy\tmode\tq\tmean\tstd\tseeds\tq_min\tq_mean\tq_max"]
    for r in rows:
        q = "" if r["q"] is None else f"{r['q']:.6g}"
        s = r["q_stats"]
        lines.append(f"{r['strategy']}\t{r['mode']}\t{q}\t{r['mean']:.4f}\t{r['std']:.4f}\t"
                     f"{r['seeds']}\t{s['min']:.4f}\t{s['mean']:.4f}\t{s['max']:.4f}")
    return "\n".join(lines) + "\n"
