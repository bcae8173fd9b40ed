"""Deterministic synthetic generators and exact small-instance oracles.

All randomness flows through ``numpy.random.Generator`` (PCG64) seeded
explicitly, so every generator is a pure function of its configuration and
seed.  Oracles are exact: finite models carry full probability tables, and
derived quantities (density ratios, conditional expectations, bridge
functions) are computed from those tables rather than by simulation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import pseudo_inverse

EMBED_DIM = 784
EMBED_NOISE = 0.1
_PROTO_STREAM = 77003
_NOISE_STREAM = 77013


# ---------------------------------------------------------------------------
# Dataset container and file format
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Tagged record batch: named (n, dim) columns plus optional ground truth.

    ``structural`` holds the true structural-function value per row when the
    data is synthetic.  ``latent`` carries generator internals (hidden
    confounders, pre-embedding scalars) for diagnostics only; estimators must
    not read it.
    """

    setting: str
    columns: dict[str, np.ndarray]
    structural: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    latent: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = {}
        for name, arr in self.columns.items():
            a = np.asarray(arr, dtype=np.float64)
            if a.ndim == 1:
                a = a[:, None]
            cols[name] = a
        self.columns = cols
        lengths = {name: a.shape[0] for name, a in cols.items()}
        if len(set(lengths.values())) > 1:
            raise ValueError(f"columns disagree on row count: {lengths}")
        if self.structural is not None:
            self.structural = np.asarray(self.structural, dtype=np.float64).reshape(-1)
            if cols and self.structural.shape[0] != next(iter(lengths.values())):
                raise ValueError("structural column length does not match data")

    @property
    def n(self) -> int:
        return next(iter(self.columns.values())).shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(
            self.setting,
            {k: v[idx] for k, v in self.columns.items()},
            None if self.structural is None else self.structural[idx],
            dict(self.meta),
            {k: np.asarray(v)[idx] for k, v in self.latent.items()},
        )


def save_dataset(ds: Dataset, path) -> None:
    """Write a dataset as one JSON header line plus CSV payload rows."""
    names = sorted(ds.columns)
    header = {
        "setting": ds.setting,
        "seed": ds.meta.get("seed"),
        "config": ds.meta,
        "columns": [{"name": n, "dim": ds.columns[n].shape[1]} for n in names],
        "structural": ds.structural is not None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        blocks = [ds.columns[n] for n in names]
        if ds.structural is not None:
            blocks.append(ds.structural[:, None])
        flat = np.hstack(blocks)
        for row in flat:
            fh.write(",".join(repr(v) for v in row) + "\n")


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        rows = [
            np.array([float(tok) for tok in line.split(",")])
            for line in fh
            if line.strip()
        ]
    flat = np.vstack(rows) if rows else np.zeros((0, 0))
    columns, offset = {}, 0
    for entry in header["columns"]:
        dim = entry["dim"]
        columns[entry["name"]] = flat[:, offset:offset + dim]
        offset += dim
    structural = flat[:, offset] if header["structural"] else None
    return Dataset(header["setting"], columns, structural, header["config"])


def oos_mse(predictions, truth) -> float:
    """Mean squared error between aligned prediction and truth vectors."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} predictions vs {t.shape[0]} truths")
    if p.size == 0:
        raise ValueError("empty prediction vector")
    return float(np.mean((p - t) ** 2))


# ---------------------------------------------------------------------------
# Demand Design generator
# ---------------------------------------------------------------------------

def demand_h(t):
    """Seasonal demand curve entering both the price and outcome equations."""
    t = np.asarray(t, dtype=np.float64)
    return 2.0 * ((t - 5.0) ** 4 / 600.0 + np.exp(-4.0 * (t - 5.0) ** 2) + t / 10.0 - 2.0)


def demand_f(p, t, s):
    """Structural ticket-demand function of price, time of year, and sensitivity."""
    p = np.asarray(p, dtype=np.float64)
    return 100.0 + (10.0 + p) * np.asarray(s, dtype=np.float64) * demand_h(t) - 2.0 * p


def round_half_away_from_zero(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def digit_index(x_low) -> int:
    """Map a scalar to a digit class in 0..9 by affine scaling, clipping, rounding."""
    c = min(max(1.5 * float(x_low) + 5.0, 0.0), 9.0)
    return int(round_half_away_from_zero(c))


def digit_prototypes(seed) -> np.ndarray:
    """Ten fixed 784-dim Gaussian prototype vectors, one per digit class."""
    rng = np.random.default_rng([int(seed), _PROTO_STREAM])
    return rng.standard_normal((10, EMBED_DIM))


def digit_embed(x_low, seed, sample_index: int = 0) -> np.ndarray:
    """Embed a scalar as its digit prototype plus per-sample Gaussian noise.

    Deterministic in ``(x_low, seed, sample_index)``: the prototype depends on
    the digit class of ``x_low`` and the noise stream on the sample index.
    """
    if not math.isfinite(float(x_low)):
        raise ValueError(f"x_low must be finite, got {x_low}")
    proto = digit_prototypes(seed)[digit_index(x_low)]
    rng = np.random.default_rng([int(seed), _NOISE_STREAM, int(sample_index)])
    return proto + EMBED_NOISE * rng.standard_normal(EMBED_DIM)


def digit_embed_batch(x_low, seed) -> np.ndarray:
    """Vectorized embedding: row i uses sample index i."""
    x_low = np.asarray(x_low, dtype=np.float64).reshape(-1)
    protos = digit_prototypes(seed)
    idx = np.array([digit_index(v) for v in x_low])
    rng = np.random.default_rng([int(seed), _NOISE_STREAM])
    noise = EMBED_NOISE * rng.standard_normal((x_low.size, EMBED_DIM))
    return protos[idx] + noise


def gen_demand_design(n: int, rho: float, seed: int, high_dim: bool = False) -> Dataset:
    """Demand Design benchmark: price treatment, fuel-cost instrument, observed
    (time, sensitivity) confounders, and correlated hidden noise.

    Draw order (fixed for reproducibility): S, T, C, V, the extra normal in
    the outcome noise, then the embedding noise when ``high_dim``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not (0.0 <= rho < 1.0):
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    rng = np.random.default_rng(seed)
    S = rng.integers(1, 8, size=n).astype(np.float64)
    T = rng.uniform(0.0, 10.0, size=n)
    C = rng.standard_normal(n)
    V = rng.standard_normal(n)
    eps = rho * V + math.sqrt(1.0 - rho ** 2) * rng.standard_normal(n)
    P = 25.0 + (C + 3.0) * demand_h(T) + V
    truth = demand_f(P, T, S)
    Y = truth + eps
    meta = {"generator": "demand_design", "n": n, "rho": rho, "seed": int(seed),
            "high_dim": bool(high_dim)}
    if high_dim:
        x = digit_embed_batch(P, seed)
        s_embed = digit_embed_batch(S, seed + 1)
        o = np.hstack([T[:, None], s_embed])
        latent = {"P": P, "S": S, "T": T, "eps": eps, "V": V}
    else:
        x = P[:, None]
        o = np.column_stack([T, S])
        latent = {"eps": eps, "V": V}
    return Dataset("ivoc", {"x": x, "z": C[:, None], "o": o, "y": Y[:, None]},
                   truth, meta, latent)


# ---------------------------------------------------------------------------
# Linear-Gaussian IV generator
# ---------------------------------------------------------------------------

def gen_linear_gaussian_iv(n: int, slope: float = 2.0, confound: float = 1.0,
                           seed: int = 0) -> Dataset:
    """Confounded linear IV model: X = Z + c*eps + v, Y = a*X + eps.

    The population least-squares slope is ``a + c / (2 + c^2)`` (stored in the
    metadata) while the instrumented slope is ``a``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    v = rng.standard_normal(n)
    x = z + confound * eps + v
    y = slope * x + eps
    meta = {
        "generator": "linear_gaussian_iv", "n": n, "seed": int(seed),
        "slope": slope, "confound": confound,
        "ols_slope": slope + confound / (2.0 + confound ** 2),
    }
    return Dataset("iv", {"x": x[:, None], "z": z[:, None], "y": y[:, None]},
                   slope * x, meta, {"eps": eps})


# ---------------------------------------------------------------------------
# Finite discrete toy (IV ratio target)
# ---------------------------------------------------------------------------

@dataclass
class DiscreteJointSpec:
    """Finite joint law of a pair (x, z) with real-embedded supports."""

    x_values: np.ndarray
    z_values: np.ndarray
    joint: np.ndarray  # (n_x, n_z)

    def __post_init__(self):
        self.x_values = np.asarray(self.x_values, dtype=np.float64).reshape(-1)
        self.z_values = np.asarray(self.z_values, dtype=np.float64).reshape(-1)
        self.joint = np.asarray(self.joint, dtype=np.float64)
        if self.joint.shape != (self.x_values.size, self.z_values.size):
            raise ValueError(
                f"joint table shape {self.joint.shape} does not match supports "
                f"({self.x_values.size}, {self.z_values.size})"
            )
        if np.any(self.joint < 0):
            raise ValueError("joint table has negative entries")
        if abs(self.joint.sum() - 1.0) > 1e-12:
            raise ValueError(f"joint table sums to {self.joint.sum()!r}, not 1")

    @property
    def p_x(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def p_z(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    def ratio_table(self) -> np.ndarray:
        """p(x, z) / (p(x) p(z)) over the full support grid."""
        return self.joint / np.outer(self.p_x, self.p_z)


def _lookup(values: np.ndarray, queries, what: str) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64).reshape(-1)
    idx = np.abs(q[:, None] - values[None, :]).argmin(axis=1)
    if not np.allclose(values[idx], q, atol=1e-9):
        bad = q[~np.isclose(values[idx], q, atol=1e-9)][0]
        raise ValueError(f"{what} value {bad!r} is not in the support")
    return idx


def gen_discrete_toy(spec: DiscreteJointSpec, n: int, seed: int) -> Dataset:
    """Draw i.i.d. (x, z) pairs from the joint table."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    flat = spec.joint.reshape(-1)
    draws = rng.choice(flat.size, size=n, p=flat)
    xi, zi = np.unravel_index(draws, spec.joint.shape)
    meta = {"generator": "discrete_toy", "n": n, "seed": int(seed)}
    return Dataset("iv", {"x": spec.x_values[xi], "z": spec.z_values[zi]},
                   None, meta)


def discrete_ratio_oracle(spec: DiscreteJointSpec, x, z) -> float:
    """Exact density ratio p(x, z) / (p(x) p(z)) at a support point."""
    xi = _lookup(spec.x_values, [x], "x")[0]
    zi = _lookup(spec.z_values, [z], "z")[0]
    px, pz = spec.p_x[xi], spec.p_z[zi]
    if px == 0 or pz == 0:
        raise ValueError(f"zero marginal at queried point (x={x}, z={z})")
    return float(spec.joint[xi, zi] / (px * pz))


def default_toy_8x8() -> DiscreteJointSpec:
    """The 8x8 benchmark table: a banded joint with ratios spread around 1."""
    n = 8
    i = np.arange(n)
    dist = np.abs(i[:, None] - i[None, :])
    table = 1.0 + 3.0 * np.exp(-0.5 * dist ** 2)
    table /= table.sum()
    return DiscreteJointSpec(i.astype(float), i.astype(float), table)


# ---------------------------------------------------------------------------
# Exactly factorized finite instances (oracles for the linearization
# identities and for solver equivalence checks)
# ---------------------------------------------------------------------------

def _dirichlet_rows(rng, rows, cols, conc=2.0):
    return rng.dirichlet(conc * np.ones(cols), size=rows)


@dataclass
class TableFeatureMap:
    """Feature map defined by a lookup table over a finite scalar support."""

    values: np.ndarray
    table: np.ndarray

    def features(self, batch) -> np.ndarray:
        idx = _lookup(self.values, np.asarray(batch).reshape(-1), "feature input")
        return self.table[idx]

    @property
    def out_dim(self) -> int:
        return self.table.shape[1]


@dataclass
class TableIVRepresentation:
    """Exact finite-instance counterpart of a learned IV representation."""

    phi_map: TableFeatureMap
    psi_map: TableFeatureMap

    @property
    def d(self) -> int:
        return self.phi_map.out_dim

    def phi_features(self, x):
        return self.phi_map.features(x)

    def psi_features(self, z):
        return self.psi_map.features(z)


@dataclass
class TableConditionedRepresentation:
    """Exact finite-instance counterpart of an IV-OC / PCL representation."""

    phi_map: TableFeatureMap
    psi_map: TableFeatureMap
    cond_values: np.ndarray
    V_tables: np.ndarray  # (n_cond, d_left, d_inst)
    Q_tables: np.ndarray  # (n_cond, d_left, d_out)

    def phi_features(self, left):
        return self.phi_map.features(left)

    def psi_features(self, inst):
        return self.psi_map.features(inst)

    def v_matrices(self, cond):
        idx = _lookup(self.cond_values, np.asarray(cond).reshape(-1), "conditioning")
        return self.V_tables[idx]

    def q_matrices(self, cond):
        idx = _lookup(self.cond_values, np.asarray(cond).reshape(-1), "conditioning")
        return self.Q_tables[idx]


@dataclass
class ExactIVModel:
    """Finite IV model whose conditional law factorizes exactly.

    ``cond[x_idx, z_idx] = p(x | z)`` equals ``p_x[x_idx] * <phi(x), psi(z)>``
    identically, so linearization identities hold to machine precision.
    """

    x_values: np.ndarray
    z_values: np.ndarray
    p_z: np.ndarray
    cond: np.ndarray         # (n_x, n_z)
    phi_table: np.ndarray    # (n_x, d)
    psi_table: np.ndarray    # (n_z, d)

    @property
    def p_x(self) -> np.ndarray:
        return self.cond @ self.p_z

    def representation(self) -> TableIVRepresentation:
        return TableIVRepresentation(TableFeatureMap(self.x_values, self.phi_table),
                                     TableFeatureMap(self.z_values, self.psi_table))

    def cond_expectation(self, f_values) -> np.ndarray:
        """Brute-force E[f(X) | Z = z] for every z in the support."""
        return self.cond.T @ (np.asarray(f_values, dtype=np.float64))

    def linearized_vector(self, f_values) -> np.ndarray:
        """v_f = sum_x p(x) phi(x) f(x); satisfies E[f|z] = <psi(z), v_f>."""
        return self.phi_table.T @ (self.p_x * np.asarray(f_values, dtype=np.float64))


def exact_low_rank_iv(n_x: int, n_z: int, d: int, seed: int) -> ExactIVModel:
    """Random finite instance built so the conditional law factorizes with
    inner dimension exactly ``d`` (mixture construction)."""
    rng = np.random.default_rng(seed)
    q = _dirichlet_rows(rng, d, n_x)        # q(x | component)
    mix = _dirichlet_rows(rng, n_z, d)      # component weights per z
    p_z = rng.dirichlet(2.0 * np.ones(n_z))
    cond = (mix @ q).T                      # p(x | z)
    p_x = cond @ p_z
    if np.any(p_x <= 0):
        raise ValueError("degenerate instance: zero treatment marginal")
    phi_table = q.T / p_x[:, None]
    psi_table = mix
    return ExactIVModel(np.arange(n_x, dtype=float), np.arange(n_z, dtype=float),
                        p_z, cond, phi_table, psi_table)


@dataclass
class ExactIVOCModel:
    """Finite IV-OC model with exactly factorizing treatment and outcome laws.

    The treatment law is ``p(x | z, o) = p_x(x) <phi(x), V(o) psi(z)>`` by the
    mixture construction (``psi`` is the one-hot basis over the instrument
    support).  The outcome is ``y = f0(x, o) + noise`` on a finite noise
    support, which keeps the outcome law finite and lets ``Q(o)`` be computed
    exactly from the pseudo-inverse identity.
    """

    x_values: np.ndarray
    z_values: np.ndarray
    o_values: np.ndarray
    p_z: np.ndarray
    p_o: np.ndarray
    cond: np.ndarray          # (n_o, n_x, n_z): p(x | z, o)
    phi_table: np.ndarray     # (n_x, d)
    V_tables: np.ndarray      # (n_o, d, n_z)
    f0: np.ndarray            # (n_x, n_o) structural values
    noise_values: np.ndarray
    noise_probs: np.ndarray

    @property
    def p_x(self) -> np.ndarray:
        return np.einsum("oxz,z,o->x", self.cond, self.p_z, self.p_o)

    def outcome_support(self) -> np.ndarray:
        vals = (self.f0[:, :, None] + self.noise_values[None, None, :]).reshape(-1)
        return np.unique(np.round(vals, 12))

    def outcome_cond(self) -> np.ndarray:
        """p(y | z, o) over (n_o, n_y, n_z)."""
        y_vals = self.outcome_support()
        n_o, n_x, n_z = self.cond.shape
        out = np.zeros((n_o, y_vals.size, n_z))
        for o in range(n_o):
            for x in range(n_x):
                for k, nv in enumerate(self.noise_values):
                    y = round(self.f0[x, o] + nv, 12)
                    yi = int(np.argmin(np.abs(y_vals - y)))
                    out[o, yi, :] += self.cond[o, x, :] * self.noise_probs[k]
        return out

    def expected_y(self) -> np.ndarray:
        """E[Y | z, o] over (n_o, n_z)."""
        return np.einsum("oxz,xo->oz", self.cond, self.f0)

    def representation(self) -> TableConditionedRepresentation:
        y_vals = self.outcome_support()
        out_cond = self.outcome_cond()
        n_o = self.o_values.size
        d = self.phi_table.shape[1]
        Q_tables = np.zeros((n_o, d, y_vals.size))
        for o in range(n_o):
            W = out_cond[o]  # (n_y, n_z): nu one-hot basis gives W(o)[y, z] = p(y | z, o)
            Q_tables[o] = pseudo_inverse(self.V_tables[o].T) @ W.T
        psi_map = TableFeatureMap(self.z_values, np.eye(self.z_values.size))
        phi_map = TableFeatureMap(self.x_values, self.phi_table)
        return TableConditionedRepresentation(phi_map, psi_map, self.o_values,
                                              self.V_tables, Q_tables)

    def solve_structural_exact(self) -> np.ndarray:
        """Brute-force solution of the conditional-moment equation per o."""
        n_o, n_x, _ = self.cond.shape
        r = self.expected_y()
        f = np.zeros((n_x, n_o))
        for o in range(n_o):
            P = self.cond[o].T  # (n_z, n_x)
            f[:, o] = pseudo_inverse(P) @ r[o]
            residual = np.linalg.norm(P @ f[:, o] - r[o])
            if residual > 1e-8:
                raise ValueError(f"inconsistent moment system at o index {o}")
        return f

    def population_rows(self):
        """All (x, z, o, y) support combinations with exact joint weights."""
        n_o, n_x, n_z = self.cond.shape
        rows = {"x": [], "z": [], "o": [], "y": []}
        weights = []
        for o in range(n_o):
            for z in range(n_z):
                for x in range(n_x):
                    base = self.p_o[o] * self.p_z[z] * self.cond[o, x, z]
                    for k, nv in enumerate(self.noise_values):
                        rows["x"].append(self.x_values[x])
                        rows["z"].append(self.z_values[z])
                        rows["o"].append(self.o_values[o])
                        rows["y"].append(self.f0[x, o] + nv)
                        weights.append(base * self.noise_probs[k])
        cols = {k: np.asarray(v)[:, None] for k, v in rows.items()}
        return cols, np.asarray(weights)

    def sample(self, n: int, seed: int) -> Dataset:
        rng = np.random.default_rng(seed)
        o = rng.choice(self.o_values.size, size=n, p=self.p_o)
        z = rng.choice(self.z_values.size, size=n, p=self.p_z)
        x = np.empty(n, dtype=int)
        for i in range(n):
            x[i] = rng.choice(self.x_values.size, p=self.cond[o[i], :, z[i]])
        noise = rng.choice(self.noise_values, size=n, p=self.noise_probs)
        y = self.f0[x, o] + noise
        truth = self.f0[x, o]
        return Dataset("ivoc", {"x": self.x_values[x], "z": self.z_values[z],
                                "o": self.o_values[o], "y": y},
                       truth, {"generator": "exact_ivoc", "n": n, "seed": int(seed)})


def exact_low_rank_ivoc(n_x: int, n_z: int, n_o: int, seed: int,
                        noise_scale: float = 0.25) -> ExactIVOCModel:
    """Random finite IV-OC instance with unique structural solution.

    The mixture dimension equals ``n_x`` so the per-o moment system has full
    column rank (requires ``n_z >= n_x``).
    """
    if n_z < n_x:
        raise ValueError("need n_z >= n_x for a unique structural solution")
    rng = np.random.default_rng(seed)
    d = n_x
    q = _dirichlet_rows(rng, d, n_x)                    # q(x | component)
    p_z = rng.dirichlet(2.0 * np.ones(n_z))
    p_o = rng.dirichlet(2.0 * np.ones(n_o))
    cond = np.zeros((n_o, n_x, n_z))
    V_tables = np.zeros((n_o, d, n_z))
    mix_all = _dirichlet_rows(rng, n_o * n_z, d).reshape(n_o, n_z, d)
    p_x = np.einsum("ozc,cx,z,o->x", mix_all, q, p_z, p_o)
    for o in range(n_o):
        cond[o] = (mix_all[o] @ q).T
        # phi[x, c] = q(c, x) / p_x, psi = one-hot, so V(o)[c, z] = mix(o, z, c)
        V_tables[o] = mix_all[o].T
    phi_table = q.T / p_x[:, None]
    f0 = rng.normal(0.0, 1.0, size=(n_x, n_o)) + 2.0
    noise_values = np.array([-noise_scale, noise_scale])
    noise_probs = np.array([0.5, 0.5])
    return ExactIVOCModel(np.arange(n_x, dtype=float), np.arange(n_z, dtype=float),
                          np.arange(n_o, dtype=float), p_z, p_o, cond, phi_table,
                          V_tables, f0, noise_values, noise_probs)


# ---------------------------------------------------------------------------
# Discrete proxy-causal-learning instance and bridge oracle
# ---------------------------------------------------------------------------

@dataclass
class PCLDiscreteSpec:
    """Finite latent-confounder model for proxy causal learning.

    Structure: eps ~ p_eps; (x, z) ~ p(x, z | eps); w ~ p(w | eps);
    y = y_mean[x, eps] + noise.  By construction z is independent of y given
    (x, eps) and w is independent of (z, x) given eps.
    """

    eps_probs: np.ndarray
    x_values: np.ndarray
    z_values: np.ndarray
    w_values: np.ndarray
    p_xz_given_eps: np.ndarray   # (n_e, n_x, n_z)
    p_w_given_eps: np.ndarray    # (n_e, n_w)
    y_mean: np.ndarray           # (n_x, n_e)
    noise_values: np.ndarray
    noise_probs: np.ndarray

    def __post_init__(self):
        self.eps_probs = np.asarray(self.eps_probs, dtype=np.float64)
        for name in ("x_values", "z_values", "w_values", "noise_values", "noise_probs"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        self.p_xz_given_eps = np.asarray(self.p_xz_given_eps, dtype=np.float64)
        self.p_w_given_eps = np.asarray(self.p_w_given_eps, dtype=np.float64)
        self.y_mean = np.asarray(self.y_mean, dtype=np.float64)
        n_e = self.eps_probs.size
        if self.p_xz_given_eps.shape != (n_e, self.x_values.size, self.z_values.size):
            raise ValueError("p_xz_given_eps shape mismatch")
        if self.p_w_given_eps.shape != (n_e, self.w_values.size):
            raise ValueError("p_w_given_eps shape mismatch")
        if self.y_mean.shape != (self.x_values.size, n_e):
            raise ValueError("y_mean shape mismatch")
        for name, table in (("eps_probs", self.eps_probs), ("noise_probs", self.noise_probs)):
            if abs(table.sum() - 1.0) > 1e-12 or np.any(table < 0):
                raise ValueError(f"{name} is not a probability vector")
        if np.any(self.p_w_given_eps < 0) or np.any(
            np.abs(self.p_w_given_eps.sum(axis=1) - 1.0) > 1e-12
        ):
            raise ValueError("p_w_given_eps rows must be probability vectors")
        sums = self.p_xz_given_eps.reshape(n_e, -1).sum(axis=1)
        if np.any(self.p_xz_given_eps < 0) or np.any(np.abs(sums - 1.0) > 1e-12):
            raise ValueError("p_xz_given_eps slices must be probability tables")
        if abs(float(self.noise_values @ self.noise_probs)) > 1e-12:
            raise ValueError("outcome noise must have zero mean")

    # -- exact population quantities ------------------------------------

    def p_eps_given_xz(self) -> np.ndarray:
        """p(eps | x, z) over (n_x, n_z, n_e)."""
        joint = np.einsum("e,exz->exz", self.eps_probs, self.p_xz_given_eps)
        marg = joint.sum(axis=0)
        if np.any(marg <= 0):
            raise ValueError("some (x, z) cell has zero probability")
        return np.moveaxis(joint, 0, -1) / marg[:, :, None]

    def p_w_given_xz(self) -> np.ndarray:
        """p(w | x, z) over (n_x, n_z, n_w)."""
        return self.p_eps_given_xz() @ self.p_w_given_eps

    def expected_y_given_xz(self) -> np.ndarray:
        """E[Y | x, z] over (n_x, n_z)."""
        pe = self.p_eps_given_xz()
        return np.einsum("xze,xe->xz", pe, self.y_mean)

    def p_w(self) -> np.ndarray:
        return self.eps_probs @ self.p_w_given_eps

    def causal_effect(self) -> np.ndarray:
        """True interventional mean outcome per treatment level."""
        return self.y_mean @ self.eps_probs

    def outcome_support(self) -> np.ndarray:
        vals = (self.y_mean[:, :, None] + self.noise_values[None, None, :]).reshape(-1)
        return np.unique(np.round(vals, 12))

    def p_y_given_xz(self) -> np.ndarray:
        """p(y | x, z) over (n_x, n_z, n_y)."""
        y_vals = self.outcome_support()
        pe = self.p_eps_given_xz()
        out = np.zeros((self.x_values.size, self.z_values.size, y_vals.size))
        for x in range(self.x_values.size):
            for e in range(self.eps_probs.size):
                for k, nv in enumerate(self.noise_values):
                    y = round(self.y_mean[x, e] + nv, 12)
                    yi = int(np.argmin(np.abs(y_vals - y)))
                    out[x, :, yi] += pe[x, :, e] * self.noise_probs[k]
        return out


def solve_bridge_exact(spec: PCLDiscreteSpec, tol: float = 1e-10) -> np.ndarray:
    """Solve the outcome-bridge linear system exactly, one treatment at a time.

    Returns ``h`` of shape (n_x, n_w) satisfying
    ``sum_w h(x, w) p(w | x, z) = E[Y | x, z]`` for every z.  Raises when the
    conditional matrix is rank-deficient or the system is inconsistent.
    """
    p_w_xz = spec.p_w_given_xz()
    ey = spec.expected_y_given_xz()
    n_x, n_z, n_w = p_w_xz.shape
    if n_z < n_w:
        raise ValueError("need at least as many treatment-proxy levels as outcome-proxy levels")
    h = np.zeros((n_x, n_w))
    for x in range(n_x):
        A = p_w_xz[x]  # (n_z, n_w)
        s = np.linalg.svd(A, compute_uv=False)
        if s[-1] <= 1e-8 * s[0]:
            raise ValueError(
                f"p(w | x, z) is rank-deficient at treatment index {x}; "
                "choose a spec with stronger proxies"
            )
        h[x] = pseudo_inverse(A) @ ey[x]
        residual = np.linalg.norm(A @ h[x] - ey[x])
        if residual > tol * max(1.0, np.linalg.norm(ey[x])):
            raise ValueError(f"bridge system inconsistent at treatment index {x}")
    return h


def gen_pcl_discrete(spec: PCLDiscreteSpec, n: int, seed: int) -> Dataset:
    """Sample i.i.d. rows (x, z, w, y) from the finite PCL model.

    The structural column holds the true interventional mean at each row's
    treatment level; the hidden confounder goes to ``latent`` for diagnostics.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    n_e = spec.eps_probs.size
    n_x, n_z = spec.x_values.size, spec.z_values.size
    e = rng.choice(n_e, size=n, p=spec.eps_probs)
    x = np.empty(n, dtype=int)
    z = np.empty(n, dtype=int)
    w = np.empty(n, dtype=int)
    for i in range(n):
        flat = rng.choice(n_x * n_z, p=spec.p_xz_given_eps[e[i]].reshape(-1))
        x[i], z[i] = np.unravel_index(flat, (n_x, n_z))
        w[i] = rng.choice(spec.w_values.size, p=spec.p_w_given_eps[e[i]])
    noise = rng.choice(spec.noise_values, size=n, p=spec.noise_probs)
    y = spec.y_mean[x, e] + noise
    effects = spec.causal_effect()
    return Dataset("pcl",
                   {"x": spec.x_values[x], "z": spec.z_values[z],
                    "w": spec.w_values[w], "y": y},
                   effects[x],
                   {"generator": "pcl_discrete", "n": n, "seed": int(seed)},
                   {"eps": e.astype(float)})


def default_pcl_spec() -> PCLDiscreteSpec:
    """The benchmark 3-level PCL instance: strong proxies, well-separated effects."""
    eps_probs = np.array([0.3, 0.4, 0.3])
    # Proxy Z correlates with eps through the (x, z) block; W is a noisy
    # readout of eps with a well-conditioned confusion matrix.
    p_w_given_eps = np.array([
        [0.8, 0.15, 0.05],
        [0.1, 0.8, 0.1],
        [0.05, 0.15, 0.8],
    ])
    p_z_given_eps = np.array([
        [0.7, 0.2, 0.1],
        [0.15, 0.7, 0.15],
        [0.1, 0.2, 0.7],
    ])
    # Treatment depends on both eps and z (confounded and instrumented).
    p_x_given_eps_z = np.zeros((3, 3, 2))
    base = np.array([0.25, 0.5, 0.75])
    tilt = np.array([-0.15, 0.0, 0.15])
    for e in range(3):
        for z in range(3):
            p1 = min(max(base[e] + tilt[z], 0.05), 0.95)
            p_x_given_eps_z[e, z] = [1.0 - p1, p1]
    p_xz_given_eps = np.zeros((3, 2, 3))
    for e in range(3):
        for z in range(3):
            for x in range(2):
                p_xz_given_eps[e, x, z] = p_z_given_eps[e, z] * p_x_given_eps_z[e, z, x]
    y_mean = np.array([
        [1.0, 2.0, 3.5],   # x = 0: outcome rises with the confounder
        [3.0, 4.5, 6.5],   # x = 1
    ])
    return PCLDiscreteSpec(eps_probs, np.array([0.0, 1.0]), np.array([0.0, 1.0, 2.0]),
                           np.array([0.0, 1.0, 2.0]), p_xz_given_eps, p_w_given_eps,
                           y_mean, np.array([-0.5, 0.5]), np.array([0.5, 0.5]))


def exact_pcl_representation(spec: PCLDiscreteSpec) -> TableConditionedRepresentation:
    """Exact table representation of the PCL factorizations (phi on w, psi on z,
    conditioning by x), with Q from the pseudo-inverse identity."""
    p_w = spec.p_w()
    n_x = spec.x_values.size
    n_w, n_z = spec.w_values.size, spec.z_values.size
    p_w_xz = spec.p_w_given_xz()        # (n_x, n_z, n_w)
    p_y_xz = spec.p_y_given_xz()        # (n_x, n_z, n_y)
    phi_map = TableFeatureMap(spec.w_values, np.diag(1.0 / p_w))
    psi_map = TableFeatureMap(spec.z_values, np.eye(n_z))
    V_tables = np.zeros((n_x, n_w, n_z))
    n_y = p_y_xz.shape[2]
    Q_tables = np.zeros((n_x, n_w, n_y))
    for x in range(n_x):
        V_tables[x] = p_w_xz[x].T       # V(x)[w, z] = p(w | x, z)
        W = p_y_xz[x].T                 # W(x)[y, z] = p(y | x, z)
        Q_tables[x] = pseudo_inverse(V_tables[x].T) @ W.T
    return TableConditionedRepresentation(phi_map, psi_map, spec.x_values,
                                          V_tables, Q_tables)


def pcl_population_rows(spec: PCLDiscreteSpec):
    """All (x, z, w, y) combinations with exact joint weights."""
    rows = {"x": [], "z": [], "w": [], "y": []}
    weights = []
    n_e = spec.eps_probs.size
    for e in range(n_e):
        for x in range(spec.x_values.size):
            for z in range(spec.z_values.size):
                pxz = spec.eps_probs[e] * spec.p_xz_given_eps[e, x, z]
                if pxz == 0:
                    continue
                for w in range(spec.w_values.size):
                    pw = spec.p_w_given_eps[e, w]
                    for k, nv in enumerate(spec.noise_values):
                        rows["x"].append(spec.x_values[x])
                        rows["z"].append(spec.z_values[z])
                        rows["w"].append(spec.w_values[w])
                        rows["y"].append(spec.y_mean[x, e] + nv)
                        weights.append(pxz * pw * spec.noise_probs[k])
    cols = {k: np.asarray(v)[:, None] for k, v in rows.items()}
    return cols, np.asarray(weights)
