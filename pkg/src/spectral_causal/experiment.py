"""End-to-end experiment runner: generate, train, fit, evaluate, record.

Each replicate derives its own seeds from ``SeedSequence([master, index])``
(documented so runs are reproducible bit for bit), runs the pipeline phases,
and emits one :class:`ResultRecord`.  Wall-clock timings are recorded per
phase but are explicitly excluded from determinism comparisons.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import benchdata, saddle
from .config import ConfigError, config_hash, validate_config
from .representations import (
    AdamConfig,
    FeatureNet,
    IVOCRepresentation,
    IVRepresentation,
    PCLRepresentation,
    train_representation,
)

_TIMING_FIELDS = ("phase_seconds",)


@dataclass
class ResultRecord:
    """Serialized outcome of one replicate."""

    config_hash: str
    setting: str
    master_seed: int
    replicate: int
    sub_seeds: dict
    status: str = "ok"
    failed_phase: str | None = None
    error: str | None = None
    oos_mse: float | None = None
    lambda_selected: float | None = None
    lambda_sweep: list = field(default_factory=list)
    baseline_mses: dict = field(default_factory=dict)
    loss_trace_summary: dict = field(default_factory=dict)
    primal_summary: dict = field(default_factory=dict)
    phase_seconds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def deterministic_dict(self) -> dict:
        """Everything derivable from (config, seed): excludes wall-clock fields."""
        d = self.to_dict()
        for key in _TIMING_FIELDS:
            d.pop(key, None)
        return d


def records_equal(a: ResultRecord, b: ResultRecord) -> bool:
    """Bit-exact comparison of all seed-derivable record fields."""
    return json.dumps(a.deterministic_dict(), sort_keys=True) == json.dumps(
        b.deterministic_dict(), sort_keys=True)


def derive_seeds(master_seed: int, replicate: int, subseeds: bool) -> dict:
    """Per-replicate seed block.  With subseeds disabled every replicate uses
    the identical block, so records differ only in the replicate index."""
    entropy = [int(master_seed), int(replicate)] if subseeds else [int(master_seed)]
    state = np.random.SeedSequence(entropy).generate_state(4, dtype=np.uint64)
    names = ("train", "test", "unlabeled", "rep_train")
    return {k: int(v) for k, v in zip(names, state)}


# ---------------------------------------------------------------------------
# Pipeline phases
# ---------------------------------------------------------------------------

def make_generator(cfg: dict):
    name = cfg["generator"]["name"]
    params = dict(cfg["generator"]["params"])
    setting = cfg["setting"]
    if name == "linear_gaussian_iv":
        if setting != "iv":
            raise ConfigError("generator linear_gaussian_iv requires setting 'iv'")
        return lambda n, seed: benchdata.gen_linear_gaussian_iv(
            n, params.get("slope", 2.0), params.get("confound", 1.0), seed)
    if name == "demand_design":
        if setting != "ivoc":
            raise ConfigError("generator demand_design requires setting 'ivoc'")
        return lambda n, seed: benchdata.gen_demand_design(
            n, params.get("rho", 0.5), seed, params.get("high_dim", False))
    if name == "discrete_toy":
        if setting != "iv":
            raise ConfigError("generator discrete_toy requires setting 'iv'")
        spec = benchdata.default_toy_8x8()
        return lambda n, seed: benchdata.gen_discrete_toy(spec, n, seed)
    if name == "pcl_discrete":
        if setting != "pcl":
            raise ConfigError("generator pcl_discrete requires setting 'pcl'")
        spec = benchdata.default_pcl_spec()
        return lambda n, seed: benchdata.gen_pcl_discrete(spec, n, seed)
    raise ConfigError(f"unknown generator {name!r}")


def _column_dim(ds: benchdata.Dataset, name: str) -> int:
    return ds.columns[name].shape[1]


def build_representation(cfg: dict, train: benchdata.Dataset, seed: int):
    """Instantiate the representation bundle sized to the dataset columns."""
    rep_cfg = cfg["rep"]
    dims = dict(rep_cfg["dims"])
    setting = cfg["setting"]
    if setting == "iv":
        if rep_cfg["exact_features"]:
            return IVRepresentation(FeatureNet.identity(_column_dim(train, "x")),
                                    FeatureNet.identity(_column_dim(train, "z")))
        d = int(dims.get("d", 4))
        rng = np.random.default_rng(seed)
        hidden = dict(rep_cfg["hidden"])
        finals = {"phi": "tanh", "psi": "relu"}
        finals.update(rep_cfg["final_activations"])
        phi = FeatureNet.build(_column_dim(train, "x"), hidden.get("phi", [32, 32]), d,
                               final_activation=finals["phi"],
                               batch_norm=rep_cfg["batch_norm"],
                               standardize=rep_cfg["standardize"], rng=rng)
        psi = FeatureNet.build(_column_dim(train, "z"), hidden.get("psi", [16]), d,
                               final_activation=finals["psi"],
                               batch_norm=rep_cfg["batch_norm"],
                               standardize=rep_cfg["standardize"], rng=rng)
        return IVRepresentation(phi, psi)
    cls = IVOCRepresentation if setting == "ivoc" else PCLRepresentation
    left_col, cond_col = ("x", "o") if setting == "ivoc" else ("w", "x")
    in_dims = {
        "left": _column_dim(train, left_col),
        "inst": _column_dim(train, "z"),
        "cond": _column_dim(train, cond_col),
        "out": _column_dim(train, "y"),
    }
    feat_dims = {
        "left": int(dims.get("d_left", 8)),
        "inst": int(dims.get("d_inst", 4)),
        "cond": int(dims.get("d_cond", 8)),
        "out": int(dims.get("d_out", 4)),
    }
    return cls.build(in_dims, feat_dims, hidden=rep_cfg["hidden"],
                     batch_norm=rep_cfg["batch_norm"],
                     standardize=rep_cfg["standardize"], seed=seed,
                     final_activations=rep_cfg["final_activations"])


def train_pipeline_representation(cfg: dict, rep, train: benchdata.Dataset,
                                  unlabeled: benchdata.Dataset | None, seed: int) -> dict:
    """Run the per-setting representation-learning stages; returns trace summary."""
    opt_cfg = cfg["optimizer"]
    opt = AdamConfig(opt_cfg["lr"], opt_cfg["beta1"], opt_cfg["beta2"], opt_cfg["eps"])
    epochs, batch = int(opt_cfg["epochs"]), int(opt_cfg["batch_size"])
    loss = cfg["loss"]
    setting = cfg["setting"]
    traces = {}
    if setting == "iv":
        if not cfg["rep"]["exact_features"]:
            _, tr = train_representation("iv", rep, train, unlabeled, loss, opt,
                                         epochs, batch, seed)
            traces["iv"] = tr
        return _summarize_traces(traces)
    stage1 = "ivoc_x" if setting == "ivoc" else "pcl_w"
    stage2 = "ivoc_y" if setting == "ivoc" else "pcl_y"
    if not cfg["skip_treatment_factorization"]:
        _, tr = train_representation(stage1, rep, train, unlabeled, loss, opt,
                                     epochs, batch, seed)
        traces[stage1] = tr
    _, tr = train_representation(stage2, rep, train, None, loss, opt,
                                 epochs, batch, seed + 1)
    traces[stage2] = tr
    return _summarize_traces(traces)


def _summarize_traces(traces: dict) -> dict:
    out = {}
    for name, tr in traces.items():
        if tr:
            out[name] = {"first": tr[0], "last": tr[-1], "epochs": len(tr)}
        else:
            out[name] = {"first": None, "last": None, "epochs": 0}
    return out


def _predict(cfg, solution, rep, dataset: benchdata.Dataset, w_pool=None):
    setting = cfg["setting"]
    if setting == "iv":
        return saddle.predict_structural(solution, rep, dataset.columns["x"])
    if setting == "ivoc":
        return saddle.predict_structural(
            solution, rep, (dataset.columns["x"], dataset.columns["o"]))
    # PCL: per-row interventional effect, averaging the bridge over observed W.
    xs = dataset.columns["x"]
    uniq, inverse = np.unique(xs, axis=0, return_inverse=True)
    effects = np.array([
        saddle.pcl_causal_effect(solution, rep, row, w_pool) for row in uniq
    ])
    return effects[inverse]


def fit_and_select(cfg: dict, rep, fit_ds: benchdata.Dataset,
                   test_ds: benchdata.Dataset, w_pool=None):
    """Sweep the regularizer weight, fit per value, select by OOS MSE."""
    solver = {
        "iv": saddle.solve_iv_saddle,
        "ivoc": saddle.solve_ivoc_saddle,
        "pcl": saddle.solve_pcl_saddle,
    }[cfg["setting"]]
    opt = saddle.GDAConfig(cfg["solver"]["gda_step"], int(cfg["solver"]["gda_max_iters"]),
                           cfg["solver"]["gda_tol"])
    sweep = []
    best = None
    for lam in cfg["regularizer"]["lambda_sweep"]:
        reg = saddle.RegularizerSpec(cfg["regularizer"]["kind"], lam)
        sol = solver(rep, fit_ds, reg, cfg["method"], opt, cfg["solver"]["jitter"])
        preds = _predict(cfg, sol, rep, test_ds, w_pool)
        mse = benchdata.oos_mse(preds, test_ds.structural)
        sweep.append([float(lam), float(mse)])
        if best is None or mse < best[1]:
            best = (sol, mse, lam)
    return best[0], best[1], best[2], sweep


def run_replicate(cfg: dict, replicate: int) -> ResultRecord:
    record = ResultRecord(
        config_hash=config_hash(cfg),
        setting=cfg["setting"],
        master_seed=int(cfg["seed"]),
        replicate=replicate,
        sub_seeds=derive_seeds(cfg["seed"], replicate, cfg["replicate_subseeds"]),
    )
    seeds = record.sub_seeds
    phase = "generate"
    try:
        t0 = time.perf_counter()
        generator = make_generator(cfg)
        train = generator(int(cfg["n_train"]), seeds["train"])
        test = generator(int(cfg["n_test"]), seeds["test"])
        unlabeled = None
        if int(cfg["unlabeled_n"]) > 0:
            unlabeled = generator(int(cfg["unlabeled_n"]), seeds["unlabeled"])
        if test.structural is None:
            raise ValueError("generator provides no ground truth; cannot score OOS MSE")
        record.phase_seconds[phase] = time.perf_counter() - t0

        phase = "split"
        t0 = time.perf_counter()
        if cfg["split_rep_estimation"]:
            half = train.n // 2
            rep_ds, fit_ds = train.subset(np.arange(half)), train.subset(
                np.arange(half, train.n))
        else:
            rep_ds = fit_ds = train
        record.phase_seconds[phase] = time.perf_counter() - t0

        phase = "train_rep"
        t0 = time.perf_counter()
        rep = build_representation(cfg, train, seeds["rep_train"])
        record.loss_trace_summary = train_pipeline_representation(
            cfg, rep, rep_ds, unlabeled, seeds["rep_train"])
        record.phase_seconds[phase] = time.perf_counter() - t0

        phase = "fit"
        t0 = time.perf_counter()
        w_pool = None
        if cfg["setting"] == "pcl":
            cap = int(cfg["pcl_effect_samples"])
            w_pool = fit_ds.columns["w"][:cap]
        sol, mse, lam, sweep = fit_and_select(cfg, rep, fit_ds, test, w_pool)
        record.oos_mse = float(mse)
        record.lambda_selected = float(lam)
        record.lambda_sweep = sweep
        record.primal_summary = _primal_summary(sol)
        record.phase_seconds[phase] = time.perf_counter() - t0

        phase = "baselines"
        t0 = time.perf_counter()
        record.baseline_mses = _baselines(cfg, fit_ds, test)
        record.phase_seconds[phase] = time.perf_counter() - t0
    except Exception as exc:  # record the failure, keep the grid running
        record.status = "failed"
        record.failed_phase = phase
        record.error = f"{type(exc).__name__}: {exc}"
    return record


def _primal_summary(sol) -> dict:
    if isinstance(sol, saddle.IVSolution):
        out = {"norm": float(np.linalg.norm(sol.u))}
        if sol.u.size == 1:
            out["slope"] = float(sol.u[0])
        return out
    return {"norm": float(np.linalg.norm(sol.G))}


def _baselines(cfg, fit_ds, test) -> dict:
    if cfg["setting"] == "pcl":
        return {}
    lam = cfg["baseline_lambda"]
    out = {}
    for kind in ("direct_ridge", "two_stage_ls"):
        try:
            predictor = saddle.baseline_fit(kind, fit_ds, lam)
            preds = predictor.predict(test.columns["x"], test.columns.get("o"))
            out[kind] = float(benchdata.oos_mse(preds, test.structural))
        except Exception as exc:
            out[kind] = f"failed: {exc}"
    return out


def run_experiment(config: dict, threads: int = 1) -> list[ResultRecord]:
    """Run every replicate of a validated (or raw) config; deterministic given
    the config and seed regardless of the thread count."""
    cfg = validate_config(config)
    indices = range(int(cfg["replicates"]))
    if threads <= 1:
        records = [run_replicate(cfg, i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda i: run_replicate(cfg, i), indices))
    return sorted(records, key=lambda r: r.replicate)


# ---------------------------------------------------------------------------
# Record output (append-only)
# ---------------------------------------------------------------------------

_CSV_FIELDS = ("replicate", "status", "failed_phase", "setting", "oos_mse",
               "lambda_selected", "config_hash", "master_seed")


def write_records(records: list[ResultRecord], out_dir, prefix: str = "results"):
    """Write one JSON-lines file and one CSV summary; never overwrites."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    chash = records[0].config_hash if records else "empty"
    base = f"{prefix}_{stamp}_{chash}"
    counter = 0
    while (out_dir / f"{base}{'_' + str(counter) if counter else ''}.jsonl").exists():
        counter += 1
    suffix = f"_{counter}" if counter else ""
    jsonl_path = out_dir / f"{base}{suffix}.jsonl"
    csv_path = out_dir / f"{base}{suffix}.csv"
    with open(jsonl_path, "x", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    with open(csv_path, "x", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        baseline_keys = sorted({k for r in records for k in r.baseline_mses})
        writer.writerow(list(_CSV_FIELDS) + [f"baseline_{k}" for k in baseline_keys])
        for rec in records:
            row = [getattr(rec, f) for f in _CSV_FIELDS]
            row += [rec.baseline_mses.get(k, "") for k in baseline_keys]
            writer.writerow(row)
    return jsonl_path, csv_path


def load_records(jsonl_path) -> list[ResultRecord]:
    records = []
    with open(jsonl_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(ResultRecord(**json.loads(line)))
    return records
