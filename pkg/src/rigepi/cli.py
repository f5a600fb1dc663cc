"""Command-line front end: ``rigepi <experiment> --config run.yaml``.

Exit codes: 0 success, 2 invalid configuration, 3 model violates the
weight or growth assumptions.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from . import branching as bp
from .config import EXPERIMENTS, RunConfig, load_config, resolved_yaml
from .coupling import coupling_experiment, scaling_factor_tv_check, tv_rate_experiment
from .epidemic import WindowRule, estimate_growth_rate, export_trace, simulate_epidemic
from .graph import clustering_coefficient, export_graph, generate_batch
from .kernel import KernelCache, exact_laplace_exponential, is_exact_family
from .lotka import LotkaProblem, build_problem, solve_malthusian
from .replicas import default_workers, replica_rng, run_replicas
from .weights import DiscreteWeightLaw, ModelError, WeightModel

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION = 0, 2, 3


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(type(x))


def _finite(x):
    return None if x is None or not math.isfinite(x) else x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])


class Context:
    def __init__(self, cfg: RunConfig, model: WeightModel, out: Path, workers: int,
                 base_dir: Path):
        self.cfg = cfg
        self.model = model
        self.out = out
        self.workers = workers
        self.base_dir = base_dir
        self._lotka = None

    @property
    def seed(self) -> int:
        return self.cfg.seeds.base

    def lotka(self):
        """(problem, result), computed once per invocation."""
        if self._lotka is None:
            cfg = self.cfg
            tol = cfg.tolerances
            rng = replica_rng(self.seed, "solve-lotka", 0)
            law_I, law_T = self.model.law_I, self.model.law_T
            if cfg.lotka.secondary_pmf is not None:
                problem = _direct_problem(cfg, self.model, rng, self.out)
            else:
                cache = KernelCache(law_I, law_T, tol.kernel_samples, rng, self.out / "kernels")
                problem = build_problem(self.model, K=cfg.lotka.K, tail_tol=tol.tail, cache=cache)
            self._lotka = (problem, solve_malthusian(problem, tol=tol.lotka))
        return self._lotka


def _direct_problem(cfg: RunConfig, model: WeightModel, rng, out: Path) -> LotkaProblem:
    pmf = np.asarray(cfg.lotka.secondary_pmf, dtype=float)
    mu_A_bar = cfg.lotka.mu_A_bar if cfg.lotka.mu_A_bar is not None else model.mu_A_bar
    K = pmf.size - 1
    law_I, law_T = model.law_I, model.law_T
    if is_exact_family(law_I, law_T):
        beta = law_T.rate

        def laplace(lam):
            return np.array([exact_laplace_exponential(k, beta, lam) for k in range(2, K + 2)])

        return LotkaProblem(mu_A_bar, pmf, laplace, p_T0=model.p_T0, exact=True)
    cache = KernelCache(law_I, law_T, cfg.tolerances.kernel_samples, rng, out / "kernels")
    return LotkaProblem(mu_A_bar, pmf, lambda lam: cache.transforms(K, lam), p_T0=model.p_T0,
                        exact=False, stderr=lambda lam: cache.stderrs(K, lam))


# --- experiments -----------------------------------------------------------

def cmd_generate_graph(ctx: Context) -> str:
    n = ctx.cfg.n
    g = generate_batch(ctx.model, n, replica_rng(ctx.seed, "generate-graph", 0))
    if ctx.cfg.graph.export:
        export_graph(g, ctx.out / "graph_edges.csv", ctx.out / "graph_cliques.csv")
    cc = clustering_coefficient(g)
    sizes = g.clique_sizes()
    summary = {"n": n, "groups": g.n_cliques, "edges": g.n_edges,
               "mean_group_size": float(sizes.mean()) if sizes.size else 0.0, "clustering": cc}
    write_json(ctx.out / "graph_summary.json", summary)
    return f"n={n} groups={g.n_cliques} edges={g.n_edges} clustering={cc:.6f}"


def _simulate_task(args):
    model, n, base_seed, rep, sec, out = args
    rng = replica_rng(base_seed, "simulate", rep)
    g = generate_batch(model, n, rng)
    trace, _ = simulate_epidemic(g, model, rng, t_max=sec.t_max, stop_after=sec.stop_after)
    if out is not None:
        export_trace(g, trace, Path(out) / "trace.jsonl", Path(out) / "counts.csv")
    w = sec.window
    row = {"rep": rep, "seed_vertex": trace.seed, "infections": trace.n_infected}
    try:
        est = estimate_growth_rate(trace, sec.count_kind, WindowRule(w.lo, w.hi, w.hi_exponent))
        row.update(alpha_hat=est.alpha_hat, stderr=est.stderr, n_points=est.n_points,
                   t_lo=est.window[0], t_hi=est.window[1], status="ok")
    except ValueError:
        row.update(alpha_hat=None, stderr=None, n_points=0, t_lo=None, t_hi=None,
                   status="window unreachable")
    return row


def cmd_simulate(ctx: Context) -> str:
    cfg = ctx.cfg
    ctx.model.check_growth_assumption()
    sec = cfg.simulate
    tasks = [(ctx.model, cfg.n, ctx.seed, rep, sec,
              str(ctx.out) if rep == 0 and sec.export_trace else None)
             for rep in range(cfg.seeds.replicas)]
    rows = run_replicas(_simulate_task, tasks, ctx.workers)
    keys = ["rep", "seed_vertex", "infections", "alpha_hat", "stderr", "n_points", "t_lo", "t_hi",
            "status"]
    write_csv(ctx.out / "growth.csv", keys, ([r[k] for k in keys] for r in rows))
    ok = [r["alpha_hat"] for r in rows if r["alpha_hat"] is not None]
    med = float(np.median(ok)) if ok else None
    write_json(ctx.out / "simulate_summary.json",
               {"replicas": len(rows), "estimated": len(ok), "alpha_hat_median": med})
    med_s = "none" if med is None else f"{med:.6f}"
    return f"alpha_hat_median={med_s} estimated={len(ok)}/{len(rows)}"


def cmd_solve_lotka(ctx: Context) -> str:
    problem, res = ctx.lotka()
    rec = res.to_record(problem.K)
    rec["reason"] = res.reason
    write_json(ctx.out / "lotka.json", rec)
    if res.alpha is None:
        return f"alpha=none r_star={res.r_star:.6f} reason={res.reason}"
    return f"alpha={res.alpha:.6f} r_star={res.r_star:.6f} beta={res.beta:.6f}"


def _branching_task(args):
    model, base_seed, rep, sec, alpha, out = args
    rng = replica_rng(base_seed, "branching", rep)
    run = bp.run_branching(model, sec.t_max, sec.cap, rng, root=sec.root, alpha=alpha)
    if out is not None:
        bp.export_run(run, Path(out) / "branching_run.jsonl", Path(out) / "branching_counts.csv")
    row = {"rep": rep, "size": run.size, "extinct": run.extinct, "truncated": run.truncated,
           "t_end": _finite(run.t_end)}
    w = sec.window
    try:
        est = bp.growth_estimate(run, w.lo, w.hi if w.hi is not None else sec.cap ** w.hi_exponent)
        row.update(alpha_hat=est.alpha_hat, stderr=est.stderr)
    except ValueError:
        row.update(alpha_hat=None, stderr=None)
    return row


def cmd_branching(ctx: Context) -> str:
    cfg = ctx.cfg
    sec = cfg.branching
    _, res = ctx.lotka()
    tasks = [(ctx.model, ctx.seed, rep, sec, res.alpha,
              str(ctx.out) if rep == 0 and sec.export_run else None)
             for rep in range(cfg.seeds.replicas)]
    rows = run_replicas(_branching_task, tasks, ctx.workers)
    keys = ["rep", "size", "extinct", "truncated", "t_end", "alpha_hat", "stderr"]
    write_csv(ctx.out / "branching.csv", keys, ([r[k] for k in keys] for r in rows))
    extinct = sum(r["extinct"] for r in rows) / len(rows)
    ok = [r["alpha_hat"] for r in rows if r["alpha_hat"] is not None]
    summary = {"alpha": res.alpha, "extinct_fraction": extinct,
               "alpha_hat_median": float(np.median(ok)) if ok else None}
    if sec.martingale_reps > 0 and res.alpha is not None:
        d = bp.martingale_diagnostics(ctx.model, res.alpha, sec.martingale_generations,
                                      sec.martingale_reps, replica_rng(ctx.seed, "martingale", 0))
        write_csv(ctx.out / "martingale.csv", ["generation", "mean", "variance", "stderr"],
                  ([g, float(d.mean[g]), float(d.var[g]), float(d.stderr[g])]
                   for g in range(d.mean.size)))
        summary["martingale_mean"] = d.mean.tolist()
    write_json(ctx.out / "branching_summary.json", summary)
    med = summary["alpha_hat_median"]
    med_s = "none" if med is None else f"{med:.6f}"
    return f"extinct_fraction={extinct:.4f} alpha_hat_median={med_s}"


def cmd_coupling(ctx: Context) -> str:
    cfg = ctx.cfg
    sec = cfg.coupling
    rows = coupling_experiment(ctx.model, sec.n_values, cfg.seeds.replicas, ctx.seed, ctx.workers,
                               max_infections=sec.max_infections,
                               stop_at_divergence=sec.stop_at_divergence, q=sec.q, eps=sec.eps)
    keys = ["n", "rep", "infections_at_divergence", "miscoupling_kind", "total_infections",
            "extinct", "horizon_target", "reached_horizon", "fidelity_ok", "tv_vertex_degree",
            "tv_clique_size"]
    write_csv(ctx.out / "coupling.csv", keys, ([r[k] for k in keys] for r in rows))
    per_n = {}
    for n in sec.n_values:
        rs = [r for r in rows if r["n"] == n]
        div = [r["infections_at_divergence"] for r in rs if r["infections_at_divergence"] is not None]
        per_n[str(n)] = {"median_divergence": float(np.median(div)) if div else None,
                         "reached_horizon": sum(r["reached_horizon"] for r in rs) / len(rs),
                         "fidelity_ok": all(r["fidelity_ok"] for r in rs)}
    ns = [n for n in sec.n_values if per_n[str(n)]["median_divergence"]]
    slope = None
    if len(ns) >= 2:
        meds = [per_n[str(n)]["median_divergence"] for n in ns]
        slope = float(np.polyfit(np.log(ns), np.log(meds), 1)[0])
    write_json(ctx.out / "coupling_summary.json", {"per_n": per_n, "median_slope": slope})
    slope_s = "none" if slope is None else f"{slope:.4f}"
    return f"median_divergence_slope={slope_s} " + " ".join(
        f"n={n}:median={per_n[str(n)]['median_divergence']}" for n in sec.n_values)


def cmd_tv_rates(ctx: Context) -> str:
    sec = ctx.cfg.tv_rates
    law_A = ctx.model.law_A
    if not isinstance(law_A, DiscreteWeightLaw):
        raise ValueError("tv-rates needs a discrete law for A")
    rate = tv_rate_experiment(law_A, sec.q, sec.n_grid, sec.reps,
                              replica_rng(ctx.seed, "tv-rates", 0))
    scal = scaling_factor_tv_check(ctx.model, sec.n_grid, sec.reps,
                                   replica_rng(ctx.seed, "tv-scaling", 0))
    write_csv(ctx.out / "tv_rates.csv", ["n", "mean_tv", "stderr"],
              ([int(n), float(m), float(s)] for n, m, s in zip(rate.n_grid, rate.mean, rate.stderr)))
    write_csv(ctx.out / "tv_scaling.csv", ["n", "clique_size_tv", "vertex_degree_tv"],
              ([int(n), float(a), float(b)] for n, a, b in
               zip(scal.n_grid, scal.clique_size_tv, scal.vertex_degree_tv)))
    write_json(ctx.out / "tv_summary.json", {"slope": rate.slope, "gamma": rate.gamma})
    return f"tv_slope={rate.slope:.4f} gamma={rate.gamma:.4f}"


COMMANDS = {
    "generate-graph": cmd_generate_graph,
    "simulate": cmd_simulate,
    "solve-lotka": cmd_solve_lotka,
    "branching": cmd_branching,
    "coupling": cmd_coupling,
    "tv-rates": cmd_tv_rates,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rigepi", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None, help="64-bit base seed (overrides config)")
    p.add_argument("--workers", type=int, default=None, help="worker processes for replicas")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"experiment": args.experiment}
    try:
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ValueError("--seed must be an unsigned 64-bit integer")
            raw = yaml.safe_load(args.config.read_text()) or {}
            seeds = dict(raw.get("seeds") or {})
            seeds["base"] = args.seed
            overrides["seeds"] = seeds
        cfg = load_config(args.config, overrides)
        model = cfg.model.build(args.config.parent)
    except ValidationError as exc:
        for err in exc.errors():
            loc = ".".join(str(x) for x in err["loc"])
            print(f"config error: {loc}: {err['msg']}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        model.validate()
    except ModelError as exc:
        print(f"assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION

    out = args.out or Path(cfg.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.yaml").write_text(resolved_yaml(cfg))
    workers = args.workers if args.workers is not None else default_workers()
    ctx = Context(cfg, model, out, max(1, workers), args.config.parent)
    names = list(COMMANDS) if args.experiment == "all" else [args.experiment]
    try:
        for name in names:
            line = COMMANDS[name](ctx)
            print(line if len(names) == 1 else f"[{name}] {line}")
    except ModelError as exc:
        print(f"assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
