"""Convex-concave saddle-point estimation over learned spectral features.

All three settings reduce to one canonical empirical objective in a primal
vector ``u`` and dual vector ``v``:

    L(u, v) = v^T (b - A u) - (1/2) v^T M v + (lam/2) u^T R u

with moment matrices built from per-sample primal features ``k`` and dual
features ``eta``:

    M = E_n[eta eta^T],  A = E_n[eta k^T],  b = E_n[eta y]

For IV the features are ``k = phi(x)`` and ``eta = psi(z)``.  For IV-OC the
primal feature is the flattened tensor ``k[a, b, c] = Q(o)[b, a] phi(x)[c]``
(the Frobenius pairing with ``Q(o)^T kron phi(x)^T`` without materializing
the Kronecker product) and the dual feature is ``eta = Q(o)^T V(o) psi(z)``.
PCL is IV-OC with the conditioning variable being the treatment and the
left-hand variable the outcome proxy.

The closed-form path eliminates the dual exactly (the objective is a concave
quadratic in ``v``) and solves the resulting ridge-GMM system; it serves as
the oracle for the extragradient path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import pseudo_inverse, solve_psd
from .representations import _columns_of

DEFAULT_JITTER = 1e-8


@dataclass
class RegularizerSpec:
    """Quadratic regularizer: ``param_l2`` penalizes the coefficient norm,
    ``function_l2`` the empirical second moment of the fitted function."""

    kind: str = "param_l2"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("param_l2", "function_l2"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")


@dataclass
class GDAConfig:
    """Extragradient settings.  ``step=None`` picks 0.5 / ||K|| from the
    problem's KKT operator norm."""

    step: float | None = None
    max_iters: int = 200_000
    tol: float = 1e-8


@dataclass
class SaddleDiagnostics:
    method: str
    iterations: int
    gap_estimate: float
    seconds: float = 0.0


@dataclass
class IVSolution:
    u: np.ndarray
    v: np.ndarray
    lam: float
    diagnostics: SaddleDiagnostics
    setting: str = "iv"


@dataclass
class ConditionedSolution:
    G: np.ndarray            # (d_out, d_left^2)
    w: np.ndarray            # (d_out,)
    lam: float
    diagnostics: SaddleDiagnostics
    d_left: int
    setting: str = "ivoc"

    @property
    def G3(self) -> np.ndarray:
        return self.G.reshape(self.G.shape[0], self.d_left, self.d_left)


class IVOCSolution(ConditionedSolution):
    pass


class PCLSolution(ConditionedSolution):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("setting", "pcl")
        super().__init__(*args, **kwargs)


class SaddleNonConvergence(RuntimeError):
    """Raised when extragradient fails to reach tolerance; carries the last
    averaged iterate and its first-order residual."""

    def __init__(self, message, u, v, gap):
        super().__init__(message)
        self.u = u
        self.v = v
        self.gap = gap


# ---------------------------------------------------------------------------
# Canonical quadratic saddle problem
# ---------------------------------------------------------------------------

@dataclass
class QuadraticSaddle:
    """min_u max_v  v^T(b - A u) - (1/2) v^T M v + (lam/2) u^T R u."""

    A: np.ndarray
    M: np.ndarray
    b: np.ndarray
    R: np.ndarray
    lam: float

    def grad_u(self, u, v):
        return -self.A.T @ v + self.lam * (self.R @ u)

    def grad_v(self, u, v):
        return self.b - self.A @ u - self.M @ v

    def objective(self, u, v) -> float:
        return float(v @ (self.b - self.A @ u) - 0.5 * v @ self.M @ v
                     + 0.5 * self.lam * u @ self.R @ u)

    def residual(self, u, v) -> float:
        scale = max(1.0, float(np.linalg.norm(self.b)))
        return max(np.linalg.norm(self.grad_u(u, v)),
                   np.linalg.norm(self.grad_v(u, v))) / scale

    def closed_form(self, jitter: float = DEFAULT_JITTER):
        """Eliminate the dual and solve the ridge-GMM system for the primal.

        Returns ``(u, v, gap)`` where the gap is the first-order residual at
        the returned pair.  With ``lam == 0`` a rank-deficient system falls
        back to the minimum-norm solution.
        """
        t0 = time.perf_counter()
        Minv_A = solve_psd(self.M, self.A, jitter=jitter)
        Minv_b = solve_psd(self.M, self.b, jitter=jitter)
        H = self.A.T @ Minv_A + self.lam * self.R
        rhs = self.A.T @ Minv_b
        try:
            u = solve_psd(H, rhs, jitter=0.0)
        except np.linalg.LinAlgError:
            u = pseudo_inverse(H) @ rhs
        v = solve_psd(self.M, self.b - self.A @ u, jitter=jitter)
        gap = self.residual(u, v)
        return u, v, SaddleDiagnostics("closed_form", 1, gap, time.perf_counter() - t0)

    def _kkt_norm(self) -> float:
        du, dv = self.A.shape[1], self.A.shape[0]
        K = np.zeros((du + dv, du + dv))
        K[:du, :du] = self.lam * self.R
        K[:du, du:] = -self.A.T
        K[du:, :du] = self.A
        K[du:, du:] = self.M
        return float(np.linalg.norm(K, 2))

    def extragradient(self, cfg: GDAConfig | None = None):
        """Simultaneous extragradient with constant step and tail-averaged
        iterates (the running average restarts at every power-of-two step so
        it inherits the last iterate's convergence)."""
        cfg = cfg or GDAConfig()
        t0 = time.perf_counter()
        step = cfg.step if cfg.step is not None else 0.5 / max(self._kkt_norm(), 1e-12)
        du, dv = self.A.shape[1], self.A.shape[0]
        u = np.zeros(du)
        v = np.zeros(dv)
        avg_u, avg_v, avg_n = np.zeros(du), np.zeros(dv), 0
        next_reset = 1
        gap = np.inf
        for it in range(1, cfg.max_iters + 1):
            uh = u - step * self.grad_u(u, v)
            vh = v + step * self.grad_v(u, v)
            u = u - step * self.grad_u(uh, vh)
            v = v + step * self.grad_v(uh, vh)
            if it == next_reset:
                avg_u[:] = 0.0
                avg_v[:] = 0.0
                avg_n = 0
                next_reset *= 2
            avg_u += u
            avg_v += v
            avg_n += 1
            if it % 50 == 0 or it == cfg.max_iters:
                cu, cv = avg_u / avg_n, avg_v / avg_n
                gap = self.residual(cu, cv)
                if gap < cfg.tol:
                    return cu, cv, SaddleDiagnostics(
                        "gda", it, gap, time.perf_counter() - t0)
        cu, cv = avg_u / avg_n, avg_v / avg_n
        raise SaddleNonConvergence(
            f"extragradient did not reach tol={cfg.tol} in {cfg.max_iters} iterations "
            f"(residual {gap:.3e})", cu, cv, gap)


def _solve(problem: QuadraticSaddle, method: str, opt, jitter):
    if method == "closed_form":
        return problem.closed_form(jitter=jitter)
    if method == "gda":
        return problem.extragradient(opt)
    raise ValueError(f"unknown method {method!r}; use 'closed_form' or 'gda'")


def _weights(n, weights):
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != n or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative, matching the row count")
    return w / w.sum()


def _build_problem(k, eta, y, w, reg: RegularizerSpec) -> QuadraticSaddle:
    wk = k * w[:, None]
    weta = eta * w[:, None]
    M = weta.T @ eta
    A = weta.T @ k
    b = weta.T @ y
    if reg.kind == "param_l2":
        R = np.eye(k.shape[1])
    else:
        R = wk.T @ k
    return QuadraticSaddle(A, M, b, R, reg.lam)


# ---------------------------------------------------------------------------
# IV
# ---------------------------------------------------------------------------

def _get_cols(data, names):
    cols = _columns_of(data)
    missing = [n for n in names if n not in cols]
    if missing:
        raise ValueError(f"dataset is missing columns {missing}")
    return [cols[n] for n in names]


def solve_iv_saddle(rep, data, reg: RegularizerSpec | None = None,
                    method: str = "closed_form", opt: GDAConfig | None = None,
                    jitter: float = DEFAULT_JITTER, weights=None) -> IVSolution:
    """Fit the IV structural coefficients by saddle-point estimation.

    The returned primal ``u`` defines ``f(x) = <phi(x), u>`` and the dual
    ``v`` defines ``g(z) = <psi(z), v>``.
    """
    reg = reg or RegularizerSpec()
    x, z, y = _get_cols(data, ("x", "z", "y"))
    phi = rep.phi_features(x)
    psi = rep.psi_features(z)
    w = _weights(phi.shape[0], weights)
    problem = _build_problem(phi, psi, y.reshape(-1), w, reg)
    u, v, diag = _solve(problem, method, opt, jitter)
    return IVSolution(u, v, reg.lam, diag)


def _conditioned_features(rep, data, setting):
    if setting == "ivoc":
        left, z, cond, y = _get_cols(data, ("x", "z", "o", "y"))
    else:
        left, z, cond, y = _get_cols(data, ("w", "z", "x", "y"))
    phi = rep.phi_features(left)
    psi = rep.psi_features(z)
    V = rep.v_matrices(cond)      # (n, d_left, d_inst)
    Q = rep.q_matrices(cond)      # (n, d_left, d_out)
    v_psi = np.einsum("ilb,ib->il", V, psi)
    eta = np.einsum("ilo,il->io", Q, v_psi)
    k = np.einsum("iba,ic->iabc", Q, phi)
    n, d_out, d_left = k.shape[0], k.shape[1], phi.shape[1]
    return phi, k.reshape(n, -1), eta, y.reshape(-1), d_out, d_left


def _solve_conditioned(rep, data, reg, method, opt, jitter, weights, setting, cls):
    reg = reg or RegularizerSpec()
    _, k, eta, y, d_out, d_left = _conditioned_features(rep, data, setting)
    w = _weights(k.shape[0], weights)
    problem = _build_problem(k, eta, y, w, reg)
    g, wdual, diag = _solve(problem, method, opt, jitter)
    return cls(g.reshape(d_out, d_left * d_left), wdual, reg.lam, diag,
               d_left, setting=setting)


def solve_ivoc_saddle(rep, data, reg: RegularizerSpec | None = None,
                      method: str = "closed_form", opt: GDAConfig | None = None,
                      jitter: float = DEFAULT_JITTER, weights=None) -> IVOCSolution:
    """Fit the IV-OC structural coefficients.

    The primal matrix ``G`` defines ``f(x, o) = <G, Q(o)^T kron phi(x)^T>_F``
    and the dual ``w`` defines ``g(z, o) = psi(z)^T V(o)^T Q(o) w``.
    """
    return _solve_conditioned(rep, data, reg, method, opt, jitter, weights,
                              "ivoc", IVOCSolution)


def solve_pcl_saddle(rep, data, reg: RegularizerSpec | None = None,
                     method: str = "closed_form", opt: GDAConfig | None = None,
                     jitter: float = DEFAULT_JITTER, weights=None) -> PCLSolution:
    """Fit the PCL bridge coefficients: ``f(x, w) = <G, Q(x)^T kron phi(w)^T>_F``."""
    return _solve_conditioned(rep, data, reg, method, opt, jitter, weights,
                              "pcl", PCLSolution)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def rank_one_primal(beta, B) -> np.ndarray:
    """The rank-one primal matrix ``G = beta vec(B)^T`` realizing the bilinear
    form ``phi^T B Q beta`` as a Frobenius pairing (column-major ``vec``)."""
    B = np.asarray(B, dtype=np.float64)
    return np.outer(np.asarray(beta, dtype=np.float64), B.ravel(order="F"))


def conditioned_predict(G3, Q_batch, phi_batch) -> np.ndarray:
    """Evaluate ``<G, Q_i^T kron phi_i^T>_F`` per sample without forming the
    Kronecker products."""
    return np.einsum("abc,iba,ic->i", G3, Q_batch, phi_batch)


def predict_structural(solution, rep, inputs) -> np.ndarray:
    """Evaluate the fitted structural function on new inputs.

    IV expects ``inputs`` to be a treatment array; IV-OC a ``(x, o)`` pair;
    PCL a ``(x, w)`` pair.
    """
    if isinstance(solution, IVSolution):
        if isinstance(inputs, tuple):
            raise ValueError("IV solutions take a single treatment array")
        return rep.phi_features(inputs) @ solution.u
    if isinstance(solution, ConditionedSolution):
        if not (isinstance(inputs, tuple) and len(inputs) == 2):
            raise ValueError(
                f"{solution.setting} solutions take a pair of input arrays")
        if solution.setting == "ivoc":
            x, o = inputs
            Q = rep.q_matrices(o)
            phi = rep.phi_features(x)
        else:
            x, w = inputs
            Q = rep.q_matrices(x)
            phi = rep.phi_features(w)
        if Q.shape[2] != solution.G.shape[0] or phi.shape[1] != solution.d_left:
            raise ValueError("representation dimensions do not match the solution")
        return conditioned_predict(solution.G3, Q, phi)
    raise TypeError(f"unknown solution type {type(solution).__name__}")


def pcl_causal_effect(solution: PCLSolution, rep, x, w_samples) -> float:
    """Average the fitted bridge over outcome-proxy draws at one treatment value."""
    w_samples = np.asarray(w_samples, dtype=np.float64)
    if w_samples.ndim == 1:
        w_samples = w_samples[:, None]
    if w_samples.shape[0] == 0:
        raise ValueError("w_samples must be nonempty")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    xs = np.repeat(x, w_samples.shape[0], axis=0)
    return float(predict_structural(solution, rep, (xs, w_samples)).mean())


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def save_solution(path, solution) -> None:
    """Serialize a fitted solution (primal/dual arrays, lambda, diagnostics)."""
    diag = solution.diagnostics
    meta = {"kind": "solution", "setting": solution.setting,
            "lam": solution.lam,
            "diagnostics": {"method": diag.method, "iterations": diag.iterations,
                            "gap_estimate": diag.gap_estimate}}
    if isinstance(solution, IVSolution):
        ckpt_entries = [("u", solution.u), ("v", solution.v)]
    else:
        meta["d_left"] = solution.d_left
        ckpt_entries = [("G", solution.G), ("w", solution.w)]
    from .checkpoint import save_arrays

    save_arrays(path, ckpt_entries, meta)


def load_solution(path):
    from .checkpoint import load_arrays

    meta, arrays = load_arrays(path)
    if meta.get("kind") != "solution":
        raise ValueError(f"{path}: not a solution checkpoint")
    d = meta["diagnostics"]
    diag = SaddleDiagnostics(d["method"], int(d["iterations"]), d["gap_estimate"])
    if meta["setting"] == "iv":
        return IVSolution(arrays["u"].copy(), arrays["v"].copy(), meta["lam"], diag)
    cls = IVOCSolution if meta["setting"] == "ivoc" else PCLSolution
    return cls(arrays["G"].copy(), arrays["w"].copy(), meta["lam"], diag,
               int(meta["d_left"]), setting=meta["setting"])


@dataclass
class LinearPredictor:
    """Plain linear model over [treatment, observables] with an intercept."""

    kind: str
    coef: np.ndarray
    intercept: float
    uses_observables: bool
    meta: dict = field(default_factory=dict)

    def predict(self, x, o=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        design = x if not self.uses_observables else np.hstack(
            [x, np.atleast_2d(np.asarray(o, dtype=np.float64))])
        return design @ self.coef + self.intercept


def _centered_ridge(design, y, lam):
    mu = design.mean(axis=0)
    ym = y.mean()
    Xc = design - mu
    yc = y - ym
    gram = Xc.T @ Xc + lam * np.eye(design.shape[1])
    try:
        coef = np.linalg.solve(gram, Xc.T @ yc)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "singular design; pass a positive lambda") from None
    if lam == 0.0:
        resid = np.linalg.norm(gram @ coef - Xc.T @ yc)
        if resid > 1e-8 * max(1.0, np.linalg.norm(Xc.T @ yc)):
            raise np.linalg.LinAlgError("singular design; pass a positive lambda")
    return coef, float(ym - mu @ coef)


def baseline_fit(kind: str, data, lam: float = 0.0) -> LinearPredictor:
    """Reference linear fits: confounded ridge and classical two-stage least squares.

    ``direct_ridge`` regresses the outcome on the treatment (plus observables
    when present); ``two_stage_ls`` first regresses the treatment on the
    instrument (plus observables), then the outcome on the fitted treatment.
    """
    cols = _columns_of(data)
    for needed in ("x", "y"):
        if needed not in cols:
            raise ValueError(f"baseline_fit needs column {needed!r}")
    x = cols["x"]
    y = cols["y"].reshape(-1)
    o = cols.get("o")
    uses_o = o is not None

    if kind == "direct_ridge":
        design = x if not uses_o else np.hstack([x, o])
        coef, intercept = _centered_ridge(design, y, lam)
        return LinearPredictor(kind, coef, intercept, uses_o)

    if kind == "two_stage_ls":
        if "z" not in cols:
            raise ValueError("two_stage_ls needs an instrument column 'z'")
        z = cols["z"]
        if np.any(z.std(axis=0) < 1e-12):
            raise ValueError("zero-variance instrument: degenerate first stage")
        stage1 = z if not uses_o else np.hstack([z, o])
        x_hat = np.empty_like(x)
        for j in range(x.shape[1]):
            coef1, icpt1 = _centered_ridge(stage1, x[:, j], lam)
            x_hat[:, j] = stage1 @ coef1 + icpt1
        design = x_hat if not uses_o else np.hstack([x_hat, o])
        coef, intercept = _centered_ridge(design, y, lam)
        return LinearPredictor(kind, coef, intercept, uses_o)

    raise ValueError(f"unknown baseline kind {kind!r}")
