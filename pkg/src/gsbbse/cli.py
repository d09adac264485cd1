"""Command-line driver for graph building, estimation, and experiments.

Subcommands: ``graph``, ``estimate``, ``benchmark``, ``flow``,
``theory``, ``simulate``.  Every primary artifact is deterministic under
a fixed ``--seed``; a sidecar ``<name>.manifest.json`` records the
command, configuration snapshot, seed, tool version, wall-clock time,
and output paths.  Exit codes: 0 success, 1 runtime failure, 2 usage
error.

Config files are JSON objects with scenario fields (``K``,
``shift_kind``, ``alpha``, ``b``, ``n_source_per_class``, ``n_target``,
``classifier_quality``, ``seed``, ``knn_k``, ...); command-line flags
override file values.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import bbse, mlls, rlls, saerens_em
from .geometry import replicator_flow
from .harness import (
    DEFAULT_BENCHMARK_METHODS,
    EvalConfig,
    METHOD_NAMES,
    ScenarioConfig,
    contraction_experiment,
    evaluate_methods,
    generate_scenario,
    make_manifest,
    robustness_experiment,
    variance_connectivity_experiment,
)
from .inference import HmcConfig, NewtonConfig, block_newton_cg, run_hmc, summarize
from .labelgraph import (
    build_knn_graph,
    graph_to_dict,
    identity_fallback_graph,
    laplacian,
    load_embeddings,
    load_graph_json,
    save_graph_json,
)
from .model import HyperParams, load_count_data, save_count_data_csv


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_path: Path, command: str, config: dict, seed,
                    wall_clock_s: float, outputs: list[str]) -> None:
    manifest = make_manifest(command, config, seed, outputs, wall_clock_s)
    _write_json(Path(str(out_path) + ".manifest.json"), manifest)


def _parse_tau_fixed(text: str | None):
    if text is None:
        return None
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2 or min(parts) <= 0:
        raise ValueError("--tau-fixed expects 'TAU_Q,TAU_C' with positive values")
    return (parts[0], parts[1])


def _hmc_config(args, seed: int) -> HmcConfig:
    return HmcConfig(chains=args.chains, warmup_iters=args.warmup,
                     sampling_iters=args.iters, seed=seed)


def _load_scenario_config(args) -> ScenarioConfig:
    payload = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            payload = json.load(fh)
    if getattr(args, "seed", None) is not None:
        payload["seed"] = args.seed
    if getattr(args, "k", None) is not None:
        payload["K"] = args.k
    return ScenarioConfig.from_dict(payload)


def cmd_graph(args) -> int:
    t0 = time.perf_counter()
    emb = load_embeddings(args.embeddings)
    if args.knn < 1 or args.knn >= emb.n_classes:
        print(f"usage error: --knn must satisfy 1 <= k < K={emb.n_classes}, "
              f"got {args.knn}", file=sys.stderr)
        return 2
    graph = build_knn_graph(emb, args.knn)
    lap = laplacian(graph)
    out = Path(args.out)
    save_graph_json(graph, out, lap)
    _write_manifest(out, "graph", {"embeddings": str(args.embeddings), "k": args.knn},
                    None, time.perf_counter() - t0, [str(out)])
    print(f"K={graph.n_classes} edges={len(graph.edges)} lambda2={lap.lambda2:.6g} "
          f"connected={graph.connected}")
    return 0


def cmd_estimate(args) -> int:
    t0 = time.perf_counter()
    data = load_count_data(args.counts)
    K = data.n_classes
    tau_fixed = _parse_tau_fixed(args.tau_fixed)
    hyper = HyperParams()

    needs_graph = args.method in ("gsb3se-map", "gsb3se-hmc")
    if args.graph:
        graph = load_graph_json(args.graph)
    else:
        graph = identity_fallback_graph(K)
        if needs_graph:
            print("warning: no graph supplied; using the identity fallback prior",
                  file=sys.stderr)
    lap = laplacian(graph)

    if args.method == "bbse":
        payload = bbse(data.empirical_confusion(), data.target_histogram()).to_dict()
    elif args.method == "em":
        payload = saerens_em(data.empirical_confusion(), data.target_counts).to_dict()
    elif args.method == "rlls":
        p_source = np.full(K, 1.0 / K)
        payload = rlls(data.empirical_confusion(), data.target_histogram(), p_source,
                       lambda_reg=args.rlls_lambda,
                       n_prime=data.target_total).to_dict()
    elif args.method == "mlls":
        payload = mlls(data.empirical_confusion(), data.target_counts).to_dict()
    elif args.method == "gsb3se-map":
        result = block_newton_cg(data, lap, hyper, NewtonConfig(),
                                 tau_fixed=tau_fixed)
        payload = {
            "method": "gsb3se-map",
            "q_hat": [float(v) for v in result.state.q],
            "converged": result.converged,
            "iterations": result.n_iters,
            "log_joint": result.log_joint,
            "grad_norm": result.grad_norm,
            "tau_q": result.state.tau_q,
            "tau_C": result.state.tau_C,
        }
    elif args.method == "gsb3se-hmc":
        draws = run_hmc(data, lap, hyper, _hmc_config(args, args.seed or 0),
                        tau_fixed=tau_fixed)
        summary = summarize(draws)
        payload = summary.to_dict()
        payload["method"] = "gsb3se-hmc"
        payload["q_hat"] = payload["q_mean"]
        payload["accept_rates"] = [float(v) for v in draws.accept_rates]
        payload["divergences"] = draws.divergence_count
    else:  # pragma: no cover - argparse choices guard this
        raise SystemExit(f"error: unknown method {args.method!r}")

    out = Path(args.out) if args.out else None
    if out:
        _write_json(out, payload)
        _write_manifest(out, "estimate",
                        {"counts": str(args.counts), "graph": args.graph,
                         "method": args.method}, args.seed,
                        time.perf_counter() - t0, [str(out)])
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


def cmd_benchmark(args) -> int:
    t0 = time.perf_counter()
    base = _load_scenario_config(args)
    methods = (args.methods.split(",") if args.methods
               else list(DEFAULT_BENCHMARK_METHODS))
    for m in methods:
        if m not in METHOD_NAMES:
            print(f"usage error: unknown method {m!r} (choose from {METHOD_NAMES})",
                  file=sys.stderr)
            return 2
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    eval_config = EvalConfig(
        hmc=_hmc_config(args, base.seed),
        n_bootstrap=args.bootstrap,
        rlls_lambda=args.rlls_lambda,
        tau_fixed=_parse_tau_fixed(args.tau_fixed),
    )
    written = []
    any_ok = False
    for s in range(args.seeds):
        config = ScenarioConfig.from_dict({**base.to_dict(), "seed": base.seed + s})
        dataset = generate_scenario(config)
        report = evaluate_methods(dataset, methods, dataset.graph,
                                  config=eval_config)
        any_ok = any_ok or any(not r.failed for r in report.results.values())
        json_path = out_dir / f"report_seed{config.seed}.json"
        _write_json(json_path, report.to_dict())
        report.to_csv(out_dir / f"report_seed{config.seed}.csv")
        written += [str(json_path), str(out_dir / f"report_seed{config.seed}.csv")]
    _write_manifest(out_dir / "benchmark", "benchmark", base.to_dict(), base.seed,
                    time.perf_counter() - t0, written)
    for path in written:
        print(path)
    return 0 if any_ok else 1


def cmd_flow(args) -> int:
    t0 = time.perf_counter()
    data = load_count_data(args.counts)
    K = data.n_classes
    graph = load_graph_json(args.graph) if args.graph else identity_fallback_graph(K)
    lap = laplacian(graph)
    C_hat = data.empirical_confusion(smoothing=1.0)
    r_hat = data.target_histogram()
    q0 = np.full(K, 1.0 / K)
    traj = replicator_flow(q0, r_hat, C_hat, lap, args.tau, float(data.target_total),
                           dt=args.dt, steps=args.steps)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out)
    _write_manifest(out, "flow",
                    {"counts": str(args.counts), "graph": args.graph,
                     "tau": args.tau, "steps": args.steps, "dt": traj.dt},
                    args.seed, time.perf_counter() - t0, [str(out)])
    print(f"steps={len(traj.t) - 1} F_final={traj.F[-1]:.6g} "
          f"max_drift={traj.max_abs_drift:.3g} truncated={traj.truncated}")
    return 0


def cmd_theory(args) -> int:
    t0 = time.perf_counter()
    base = _load_scenario_config(args)
    hmc = _hmc_config(args, base.seed)
    n_grid = [int(float(v)) for v in args.n_grid.split(",")]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.experiment == "contraction":
        result = contraction_experiment(base, n_grid, args.seeds, hmc=hmc)
        payload = result.to_dict()
    elif args.experiment == "variance":
        result = variance_connectivity_experiment(base, seeds=args.seeds, hmc=hmc)
        payload = result.to_dict()
        payload["verdict_monotone"] = result.monotone_fraction >= 0.8
    elif args.experiment == "robustness":
        result = robustness_experiment(base, None, None, n_grid, args.seeds, hmc=hmc)
        payload = result.to_dict()
    else:  # pragma: no cover
        raise SystemExit(f"error: unknown experiment {args.experiment!r}")

    out = out_dir / f"{args.experiment}.json"
    _write_json(out, payload)
    _write_manifest(out, f"theory:{args.experiment}", base.to_dict(), base.seed,
                    time.perf_counter() - t0, [str(out)])
    print(str(out))
    return 0


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    config = _load_scenario_config(args)
    dataset = generate_scenario(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts_csv = out_dir / "counts.csv"
    save_count_data_csv(dataset.counts, counts_csv)
    _write_json(out_dir / "counts.json", {
        "source_counts": dataset.counts.source_counts.tolist(),
        "target_counts": dataset.counts.target_counts.tolist(),
    })
    _write_json(out_dir / "truth.json", {
        "true_q": dataset.true_q.tolist(),
        "true_C": dataset.true_C.tolist(),
    })
    save_graph_json(dataset.graph, out_dir / "graph.json")
    outputs = [str(counts_csv), str(out_dir / "counts.json"),
               str(out_dir / "truth.json"), str(out_dir / "graph.json")]
    _write_manifest(out_dir / "simulate", "simulate", config.to_dict(), config.seed,
                    time.perf_counter() - t0, outputs)
    for path in outputs:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gsbbse",
        description="Label-shift estimation: graph-smoothed Bayesian inference "
                    "and classical baselines.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graph", help="build a k-NN label graph from embeddings")
    p.add_argument("--embeddings", required=True, help="CSV (label,v1,..) or JSON")
    p.add_argument("--knn", "--k", dest="knn", type=int, required=True,
                   help="neighbours per class")
    p.add_argument("--out", required=True, help="output graph JSON")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("estimate", help="estimate target priors from count data")
    p.add_argument("--counts", required=True, help="counts CSV or JSON")
    p.add_argument("--graph", help="graph JSON (identity fallback when omitted)")
    p.add_argument("--method", required=True, choices=METHOD_NAMES)
    p.add_argument("--out", help="output JSON (stdout when omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--tau-fixed", dest="tau_fixed",
                   help="fix precision scales as 'TAU_Q,TAU_C'")
    p.add_argument("--rlls-lambda", dest="rlls_lambda", type=float)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("benchmark", help="evaluate methods on synthetic scenarios")
    p.add_argument("--config", help="scenario config JSON")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--methods", help="comma-separated subset of methods")
    p.add_argument("--seeds", type=int, default=1, help="number of scenario seeds")
    p.add_argument("--seed", type=int, help="base seed override")
    p.add_argument("--k", type=int, help="class count override")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--warmup", type=int, default=300)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--tau-fixed", dest="tau_fixed")
    p.add_argument("--rlls-lambda", dest="rlls_lambda", type=float)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("flow", help="export a natural-gradient flow trajectory")
    p.add_argument("--counts", required=True)
    p.add_argument("--graph")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--dt", type=float)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="trajectory CSV")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("theory", help="run a theory-verification experiment")
    p.add_argument("--experiment", required=True,
                   choices=("contraction", "variance", "robustness"))
    p.add_argument("--config", help="scenario config JSON")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--n-grid", dest="n_grid", default="1000,10000,100000")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--warmup", type=int, default=300)
    p.add_argument("--iters", type=int, default=500)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", help="generate a synthetic scenario to files")
    p.add_argument("--config", help="scenario config JSON")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
