"""Command-line harness: config-driven data generation, training, fitting,
evaluation, the full experiment grid, and a quick self-check suite.

Exit codes: 0 on success, 1 on configuration errors, 2 on runtime failures.
The default output directory comes from ``--out`` or the
``SPECTRAL_CAUSAL_OUT`` environment variable (falling back to ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import benchdata, saddle
from .config import ConfigError, config_hash, load_config, validate_config
from .experiment import (
    build_representation,
    derive_seeds,
    make_generator,
    run_experiment,
    train_pipeline_representation,
    write_records,
)
from .representations import load_representation, save_representation

log = logging.getLogger("spectral_causal")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("SPECTRAL_CAUSAL_OUT") or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_cfg(args) -> dict:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    return cfg


def _unique_path(directory: Path, stem: str, suffix: str) -> Path:
    path = directory / f"{stem}{suffix}"
    counter = 0
    while path.exists():
        counter += 1
        path = directory / f"{stem}_{counter}{suffix}"
    return path


def cmd_gen(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    seeds = derive_seeds(cfg["seed"], 0, cfg["replicate_subseeds"])
    ds = make_generator(cfg)(int(cfg["n_train"]), seeds["train"])
    path = _unique_path(out, f"data_{cfg['setting']}_{config_hash(cfg)}", ".csv")
    benchdata.save_dataset(ds, path)
    print(path)
    return 0


def cmd_train_rep(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    train = benchdata.load_dataset(args.data)
    seeds = derive_seeds(cfg["seed"], 0, cfg["replicate_subseeds"])
    rep = build_representation(cfg, train, seeds["rep_train"])
    summary = train_pipeline_representation(cfg, rep, train, None, seeds["rep_train"])
    path = _unique_path(out, f"rep_{cfg['setting']}_{config_hash(cfg)}", ".ckpt")
    save_representation(path, rep)
    log.info("trace summary: %s", json.dumps(summary))
    print(path)
    return 0


def cmd_fit(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    data = benchdata.load_dataset(args.data)
    rep = load_representation(args.rep)
    lam = args.lam if args.lam is not None else cfg["regularizer"]["lambda_sweep"][0]
    reg = saddle.RegularizerSpec(cfg["regularizer"]["kind"], float(lam))
    opt = saddle.GDAConfig(cfg["solver"]["gda_step"],
                           int(cfg["solver"]["gda_max_iters"]),
                           cfg["solver"]["gda_tol"])
    solver = {"iv": saddle.solve_iv_saddle, "ivoc": saddle.solve_ivoc_saddle,
              "pcl": saddle.solve_pcl_saddle}[cfg["setting"]]
    sol = solver(rep, data, reg, cfg["method"], opt, cfg["solver"]["jitter"])
    path = _unique_path(out, f"solution_{cfg['setting']}_{config_hash(cfg)}", ".ckpt")
    saddle.save_solution(path, sol)
    log.info("gap estimate %.3e after %d iterations",
             sol.diagnostics.gap_estimate, sol.diagnostics.iterations)
    print(path)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    data = benchdata.load_dataset(args.data)
    rep = load_representation(args.rep)
    sol = saddle.load_solution(args.solution)
    if data.structural is None:
        raise ValueError("dataset carries no ground-truth column to score against")
    if cfg["setting"] == "iv":
        preds = saddle.predict_structural(sol, rep, data.columns["x"])
    elif cfg["setting"] == "ivoc":
        preds = saddle.predict_structural(sol, rep, (data.columns["x"], data.columns["o"]))
    else:
        preds = saddle.predict_structural(sol, rep, (data.columns["x"], data.columns["w"]))
    mse = benchdata.oos_mse(preds, data.structural)
    print(json.dumps({"oos_mse": mse, "n": data.n}))
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    records = run_experiment(cfg, threads=max(1, args.threads))
    jsonl_path, csv_path = write_records(records, out)
    failed = [r for r in records if r.status != "ok"]
    for rec in records:
        log.info("replicate %d: %s oos_mse=%s", rec.replicate, rec.status, rec.oos_mse)
    print(jsonl_path)
    print(csv_path)
    if failed:
        print(f"{len(failed)} of {len(records)} replicates failed", file=sys.stderr)
        return 2
    return 0


def _check_line(name: str, ok: bool, detail: str = "") -> bool:
    print(f"{'PASS' if ok else 'FAIL'}  {name}{('  ' + detail) if detail else ''}")
    return ok


def cmd_check(args) -> int:
    """Fast invariant suite: linear algebra identities, gradient checks, and
    generator fixtures.  Mirrors the full pytest acceptance suite at small scale."""
    from . import linalg
    from .nets import grad_check, init_params, mlp_spec
    from .representations import grad_check_loss

    rng = np.random.default_rng(20240901)
    ok = True

    # Kronecker apply vs materialized Kronecker product.
    worst = 0.0
    for _ in range(20):
        m, p, r, q = rng.integers(1, 6, size=4)
        C = rng.standard_normal((m, p))
        D = rng.standard_normal((r, q))
        G = rng.standard_normal((p, q))
        lhs = linalg.kron_apply(C, D, G).reshape(-1)
        rhs = np.kron(C, D) @ G.reshape(-1)
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    ok &= _check_line("kron_apply matches materialized Kronecker", worst < 1e-10,
                      f"max dev {worst:.2e}")

    # Penrose identities.
    M = rng.standard_normal((5, 3)) @ rng.standard_normal((3, 4))
    P = linalg.pseudo_inverse(M)
    dev = max(np.abs(M @ P @ M - M).max(), np.abs(P @ M @ P - P).max(),
              np.abs(M @ P - (M @ P).T).max(), np.abs(P @ M - (P @ M).T).max())
    ok &= _check_line("pseudo_inverse Penrose identities", dev < 1e-8,
                      f"max dev {dev:.2e}")

    # Rank-one reparametrization identity.
    worst = 0.0
    for _ in range(20):
        dx, dy = rng.integers(2, 7, size=2)
        phi = rng.standard_normal(dx)
        B = rng.standard_normal((dx, dx))
        Q = rng.standard_normal((dx, dy))
        beta = rng.standard_normal(dy)
        lhs = phi @ B @ Q @ beta
        rhs = float(np.sum(saddle.rank_one_primal(beta, B) * np.kron(Q.T, phi[None, :])))
        worst = max(worst, abs(lhs - rhs))
    ok &= _check_line("Kronecker reparametrization identity", worst < 1e-10,
                      f"max dev {worst:.2e}")

    # Gradient checks under both contrastive losses.
    for loss_name in ("l2", "mle"):
        spec = mlp_spec([4, 8, 6], final_activation="tanh", batch_norm=True)
        params = init_params(spec, rng)
        batch = rng.standard_normal((8, 4))
        err = grad_check(spec, params, batch, grad_check_loss(loss_name))
        ok &= _check_line(f"grad_check vs finite differences ({loss_name})",
                          err < 1e-4, f"max rel err {err:.2e}")

    # Generator fixtures.
    ok &= _check_line("demand curve h(5) == -1",
                      abs(float(benchdata.demand_h(5.0)) + 1.0) < 1e-12)
    ok &= _check_line("demand structural f(25,5,4) == -90",
                      float(benchdata.demand_f(25.0, 5.0, 4.0)) == -90.0)
    ok &= _check_line("digit classes pi(0)=5, pi(4)=9, pi(-4)=0",
                      (benchdata.digit_index(0.0), benchdata.digit_index(4.0),
                       benchdata.digit_index(-4.0)) == (5, 9, 0))
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectral-causal",
        description="Spectral-representation causal estimation harness")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, rep=False, solution=False):
        p.add_argument("--config", help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None,
                       help="output directory (default $SPECTRAL_CAUSAL_OUT or ./runs)")
        p.add_argument("--threads", type=int, default=1,
                       help="parallel replicates for `experiment`")
        if data:
            p.add_argument("--data", required=True, help="dataset file from `gen`")
        if rep:
            p.add_argument("--rep", required=True, help="representation checkpoint")
        if solution:
            p.add_argument("--solution", required=True, help="solution checkpoint")

    common(sub.add_parser("gen", help="generate a dataset file"))
    common(sub.add_parser("train-rep", help="train a representation"), data=True)
    fit = sub.add_parser("fit", help="solve the saddle problem")
    common(fit, data=True, rep=True)
    fit.add_argument("--lam", type=float, default=None,
                     help="regularizer weight (default: first sweep value)")
    common(sub.add_parser("eval", help="score a solution on a dataset"),
           data=True, rep=True, solution=True)
    common(sub.add_parser("experiment", help="run the full replicate grid"))
    common(sub.add_parser("check", help="run the quick invariant suite"))
    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "train-rep": cmd_train_rep,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "check": cmd_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 2


if __name__ == "__main__":
    sys.exit(main())
