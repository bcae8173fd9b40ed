"""Contrastive learning of low-rank conditional-density factorizations.

Three factorizations are supported, all sharing the same machinery:

  IV     : ratio(x, z)       = <phi(x), psi(z)>
  IV-OC  : ratio_x(x; z, o)  = <phi(x), V(o) psi(z)>,
           ratio_y(y; z, o)  = <nu(y), Q(o)^T V(o) psi(z)>
  PCL    : as IV-OC with the conditioning variable being the treatment x and
           the left-hand variable the outcome proxy w.

``V(c) = P_V x_3 xi(c)`` and ``Q(c) = P_Q x_3 xi(c)`` contract learnable
3-way tensors against the conditioning features, so the whole bundle trains
end to end by stochastic gradient descent on an in-batch-negative contrastive
loss: each minibatch forms an n-by-n score matrix whose diagonal holds the
positive pairs.

Two losses are provided.  The quadratic one operates on raw scores; the
log-ratio one requires positive scores, so raw scores pass through a softplus
link before it (the link's derivative is chained into the gradients).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .nets import (
    AdamState,
    NetworkParams,
    NetworkSpec,
    adam_step,
    backward,
    forward,
    init_params,
    mlp_spec,
)

REP_SETTINGS = ("iv", "ivoc_x", "ivoc_y", "pcl_w", "pcl_y")


# ---------------------------------------------------------------------------
# Feature networks
# ---------------------------------------------------------------------------

@dataclass
class FeatureNet:
    """A feed-forward feature map with optional input standardization.

    ``features`` runs in eval mode (pure); the trainer uses
    ``forward(..., mode="train")`` internally.  ``input_offset`` and
    ``input_scale`` are applied as ``(x - offset) / scale`` before the first
    layer and are fitted once from training data when ``auto_standardize``
    is set.
    """

    spec: NetworkSpec
    params: NetworkParams
    input_offset: np.ndarray
    input_scale: np.ndarray
    auto_standardize: bool = False
    scaling_fitted: bool = False

    @classmethod
    def build(cls, in_dim, hidden, out_dim, final_activation="linear",
              hidden_activation="relu", batch_norm=False, standardize=False,
              rng=None) -> "FeatureNet":
        rng = np.random.default_rng(rng)
        spec = mlp_spec([in_dim, *hidden, out_dim], final_activation,
                        hidden_activation, batch_norm)
        return cls(spec, init_params(spec, rng), np.zeros(in_dim),
                   np.ones(in_dim), auto_standardize=standardize)

    @classmethod
    def identity(cls, dim) -> "FeatureNet":
        """Exact-feature shortcut: a frozen linear map equal to the identity."""
        spec = mlp_spec([dim, dim], final_activation="linear")
        params = init_params(spec, np.random.default_rng(0))
        params.weights[0][:] = np.eye(dim)
        params.biases[0][:] = 0.0
        return cls(spec, params, np.zeros(dim), np.ones(dim))

    @property
    def in_dim(self) -> int:
        return self.spec.in_dim

    @property
    def out_dim(self) -> int:
        return self.spec.out_dim

    def fit_input_scaling(self, batch) -> None:
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        self.input_offset = batch.mean(axis=0)
        scale = batch.std(axis=0)
        scale[scale < 1e-12] = 1.0
        self.input_scale = scale
        self.scaling_fitted = True

    def _standardized(self, batch) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim == 1:
            batch = batch[None, :]
        return (batch - self.input_offset) / self.input_scale

    def features(self, batch) -> np.ndarray:
        """Eval-mode feature matrix, one row per input row."""
        out, _ = forward(self.spec, self.params, self._standardized(batch), mode="eval")
        return out

    def forward_train(self, batch):
        return forward(self.spec, self.params, self._standardized(batch), mode="train")

    def copy(self) -> "FeatureNet":
        return FeatureNet(self.spec, self.params.copy(), self.input_offset.copy(),
                          self.input_scale.copy(), self.auto_standardize,
                          self.scaling_fitted)


# ---------------------------------------------------------------------------
# Representation bundles
# ---------------------------------------------------------------------------

@dataclass
class IVRepresentation:
    """Feature pair for the basic instrumental-variable factorization."""

    phi: FeatureNet
    psi: FeatureNet

    def __post_init__(self):
        if self.phi.out_dim != self.psi.out_dim:
            raise ValueError(
                f"phi outputs {self.phi.out_dim} features but psi outputs "
                f"{self.psi.out_dim}; they must match"
            )

    @property
    def d(self) -> int:
        return self.phi.out_dim

    def phi_features(self, x):
        return self.phi.features(x)

    def psi_features(self, z):
        return self.psi.features(z)


def _tensor_init(rng, d_left, d_mid, d_cond):
    scale = 1.0 / np.sqrt(d_left * d_mid * d_cond)
    return rng.normal(0.0, scale, size=(d_left, d_mid, d_cond))


@dataclass
class _ConditionedRep:
    """Shared implementation for the two conditioned factorizations."""

    phi: FeatureNet    # left-hand variable features
    psi: FeatureNet    # instrument features
    xi: FeatureNet     # conditioning-variable features
    nu: FeatureNet     # outcome features
    P_V: np.ndarray    # (d_left, d_inst, d_cond)
    P_Q: np.ndarray    # (d_left, d_out, d_cond)

    def __post_init__(self):
        d_left, d_inst, d_cond = self.phi.out_dim, self.psi.out_dim, self.xi.out_dim
        d_out = self.nu.out_dim
        if self.P_V.shape != (d_left, d_inst, d_cond):
            raise ValueError(
                f"P_V has shape {self.P_V.shape}, expected {(d_left, d_inst, d_cond)}"
            )
        if self.P_Q.shape != (d_left, d_out, d_cond):
            raise ValueError(
                f"P_Q has shape {self.P_Q.shape}, expected {(d_left, d_out, d_cond)}"
            )

    @classmethod
    def build(cls, in_dims: dict, feat_dims: dict, hidden: dict | None = None,
              batch_norm=False, standardize=True, seed=0,
              final_activations: dict | None = None) -> "_ConditionedRep":
        """Construct nets and tensors from input sizes and feature sizes.

        ``in_dims``/``feat_dims`` use keys ``left, inst, cond, out``; ``hidden``
        holds per-net hidden-layer lists (defaults chosen for small problems).
        """
        rng = np.random.default_rng(seed)
        hidden = dict(hidden or {})
        finals = {"left": "tanh", "inst": "relu", "cond": "tanh", "out": "relu"}
        finals.update(final_activations or {})
        defaults = {"left": [32, 32], "inst": [16], "cond": [32, 32], "out": [16]}
        nets = {}
        for role in ("left", "inst", "cond", "out"):
            nets[role] = FeatureNet.build(
                in_dims[role], hidden.get(role, defaults[role]), feat_dims[role],
                final_activation=finals[role], batch_norm=batch_norm,
                standardize=standardize, rng=rng,
            )
        P_V = _tensor_init(rng, feat_dims["left"], feat_dims["inst"], feat_dims["cond"])
        P_Q = _tensor_init(rng, feat_dims["left"], feat_dims["out"], feat_dims["cond"])
        return cls(nets["left"], nets["inst"], nets["cond"], nets["out"], P_V, P_Q)

    # Feature extraction (eval mode, pure).
    def phi_features(self, left):
        return self.phi.features(left)

    def psi_features(self, inst):
        return self.psi.features(inst)

    def xi_features(self, cond):
        return self.xi.features(cond)

    def nu_features(self, out):
        return self.nu.features(out)

    def v_matrices(self, cond) -> np.ndarray:
        """V(c) for a batch of conditioning rows: (n, d_left, d_inst)."""
        return np.einsum("abk,jk->jab", self.P_V, self.xi_features(cond))

    def q_matrices(self, cond) -> np.ndarray:
        """Q(c) for a batch of conditioning rows: (n, d_left, d_out)."""
        return np.einsum("aek,jk->jae", self.P_Q, self.xi_features(cond))


@dataclass
class IVOCRepresentation(_ConditionedRep):
    """IV with observed confounders: phi acts on the treatment, xi on the
    observed confounder, psi on the instrument, nu on the outcome."""


@dataclass
class PCLRepresentation(_ConditionedRep):
    """Proxy causal learning: phi acts on the outcome proxy W, xi on the
    treatment X, psi on the treatment proxy Z, nu on the outcome."""


# ---------------------------------------------------------------------------
# Score computation
# ---------------------------------------------------------------------------

def _check_square_scores(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"score batch must be square, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("score batch contains non-finite entries")
    return s


def score_iv(rep: IVRepresentation, x_batch, z_batch) -> np.ndarray:
    """Cross-pair score matrix: entry (i, j) is <phi(x_i), psi(z_j)>."""
    phi = rep.phi_features(x_batch)
    psi = rep.psi_features(z_batch)
    if phi.shape[0] != psi.shape[0]:
        raise ValueError(
            f"batch length mismatch: {phi.shape[0]} treatment rows vs "
            f"{psi.shape[0]} instrument rows"
        )
    return phi @ psi.T


def _trilinear(phi_vec, P, psi_vec, xi_vec) -> float:
    return float(np.einsum("a,abk,b,k->", phi_vec, P, psi_vec, xi_vec))


def score_ivoc_x(rep: IVOCRepresentation, x, z, o) -> float:
    """Treatment-side conditioned score: phi(x)^T V(o) psi(z)."""
    phi = rep.phi_features(np.atleast_2d(x))[0]
    psi = rep.psi_features(np.atleast_2d(z))[0]
    xi = rep.xi_features(np.atleast_2d(o))[0]
    return _trilinear(phi, rep.P_V, psi, xi)


def score_ivoc_y(rep: IVOCRepresentation, y, z, o) -> float:
    """Outcome-side conditioned score: nu(y)^T Q(o)^T V(o) psi(z)."""
    nu = rep.nu_features(np.atleast_2d(y))[0]
    psi = rep.psi_features(np.atleast_2d(z))[0]
    xi = rep.xi_features(np.atleast_2d(o))[0]
    V = np.einsum("abk,k->ab", rep.P_V, xi)
    Q = np.einsum("aek,k->ae", rep.P_Q, xi)
    return float(nu @ (Q.T @ V) @ psi)


def score_pcl_w(rep: PCLRepresentation, w, x, z) -> float:
    """Proxy-side conditioned score: phi(w)^T V(x) psi(z)."""
    phi = rep.phi_features(np.atleast_2d(w))[0]
    psi = rep.psi_features(np.atleast_2d(z))[0]
    xi = rep.xi_features(np.atleast_2d(x))[0]
    return _trilinear(phi, rep.P_V, psi, xi)


def score_pcl_y(rep: PCLRepresentation, y, x, z) -> float:
    """Outcome-side conditioned score: nu(y)^T Q(x)^T V(x) psi(z)."""
    nu = rep.nu_features(np.atleast_2d(y))[0]
    psi = rep.psi_features(np.atleast_2d(z))[0]
    xi = rep.xi_features(np.atleast_2d(x))[0]
    V = np.einsum("abk,k->ab", rep.P_V, xi)
    Q = np.einsum("aek,k->ae", rep.P_Q, xi)
    return float(nu @ (Q.T @ V) @ psi)


def conditioned_score_matrix(phi_feats, psi_feats, xi_feats, P_V) -> np.ndarray:
    """Score matrix S[i, j] = phi_i^T V(c_j) psi_j for precomputed features."""
    right = np.einsum("abk,jb,jk->ja", P_V, psi_feats, xi_feats)
    return phi_feats @ right.T


def outcome_score_matrix(nu_feats, psi_feats, xi_feats, P_V, P_Q) -> np.ndarray:
    """Score matrix S[i, j] = nu_i^T Q(c_j)^T V(c_j) psi_j."""
    r = np.einsum("abk,jb,jk->ja", P_V, psi_feats, xi_feats)
    t = np.einsum("aek,jk,ja->je", P_Q, xi_feats, r)
    return nu_feats @ t.T


# ---------------------------------------------------------------------------
# Contrastive losses
# ---------------------------------------------------------------------------

def contrastive_l2_loss(scores):
    """Quadratic contrastive objective on an n-by-n score batch.

    The underlying objective rewards diagonal (positive-pair) scores and
    penalizes squared off-diagonal scores:

        L = (2/n) sum_i s_ii - (1/(n(n-1))) sum_{i != j} s_ij^2 - 1

    Returns ``(-L, d(-L)/ds)`` so that every trainer minimizes.
    """
    s = _check_square_scores(scores)
    n = s.shape[0]
    if n < 2:
        raise ValueError("score batch needs n >= 2 (off-diagonal term undefined)")
    diag = np.diag(s)
    off = s - np.diag(diag)
    L = 2.0 / n * diag.sum() - (off ** 2).sum() / (n * (n - 1)) - 1.0
    grad = 2.0 * off / (n * (n - 1))
    np.fill_diagonal(grad, -2.0 / n)
    return -L, grad


def contrastive_mle_loss(scores):
    """Log-ratio contrastive objective on an n-by-n score batch of positive scores.

        L = -(1/n) sum_i log s_ii + (1/n) sum_i log( sum_{j != i} s_ij )

    The inner sum runs per anchor i over that row's negatives.  All entries
    must be strictly positive (apply :func:`softplus` to raw scores first).
    Returns ``(L, dL/ds)``.
    """
    s = _check_square_scores(scores)
    n = s.shape[0]
    if n < 2:
        raise ValueError("score batch needs n >= 2 (negative sums undefined)")
    bad = np.argwhere(s <= 0.0)
    if bad.size:
        i, j = bad[0]
        raise ValueError(f"non-positive linked score at pair ({i}, {j}): {s[i, j]}")
    diag = np.diag(s)
    neg_sums = s.sum(axis=1) - diag
    value = float((-np.log(diag) + np.log(neg_sums)).mean())
    grad = np.repeat(1.0 / (n * neg_sums), n).reshape(n, n)
    np.fill_diagonal(grad, -1.0 / (n * diag))
    return value, grad


def softplus(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0))))


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _apply_loss(raw_scores, loss: str):
    """Evaluate the chosen loss on raw scores, chaining the softplus link for mle.

    Returns (value, gradient w.r.t. the raw scores).
    """
    if loss == "l2":
        return contrastive_l2_loss(raw_scores)
    if loss == "mle":
        linked = softplus(raw_scores)
        value, g = contrastive_mle_loss(linked)
        return value, g * sigmoid(raw_scores)
    raise ValueError(f"unknown loss {loss!r}; use 'l2' or 'mle'")


def grad_check_loss(loss: str):
    """Loss closure for :func:`nets.grad_check` exercising a contrastive loss.

    The network's output batch is split in half: the first half plays the
    left-hand features and the second half the right-hand features of an
    in-batch score matrix.  Requires an even batch of at least 4 rows.
    """

    def fn(outputs):
        n = outputs.shape[0] // 2
        if n < 2:
            raise ValueError("grad_check_loss needs at least 4 output rows")
        left, right = outputs[:n], outputs[n:2 * n]
        raw = left @ right.T
        value, g = _apply_loss(raw, loss)
        grad = np.zeros_like(outputs)
        grad[:n] = g @ right
        grad[n:2 * n] = g.T @ left
        return value, grad

    return fn


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def make_state(self) -> AdamState:
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


class _ArrayBundle:
    """Adapter so raw arrays (the 3-way tensors) ride the same Adam update."""

    def __init__(self, pairs):
        self.pairs = list(pairs)

    def trainable(self):
        yield from self.pairs


_SETTING_COLUMNS = {
    "iv": ("x", "z"),
    "ivoc_x": ("x", "z", "o"),
    "ivoc_y": ("y", "z", "o"),
    "pcl_w": ("w", "x", "z"),
    "pcl_y": ("y", "x", "z"),
}


def _columns_of(data) -> dict:
    cols = data.columns if hasattr(data, "columns") else data
    out = {}
    for k, v in cols.items():
        a = np.asarray(v, dtype=np.float64)
        out[k] = a[:, None] if a.ndim == 1 else a
    return out


def train_representation(setting: str, rep, data, unlabeled=None, loss: str = "l2",
                         opt: AdamConfig | None = None, epochs: int = 100,
                         batch_size: int = 256, seed: int = 0):
    """Fit one factorization by minibatch in-batch-negative contrastive training.

    Parameters
    ----------
    setting : one of ``iv, ivoc_x, ivoc_y, pcl_w, pcl_y``
        Which factorization to train.  The outcome-side settings (``ivoc_y``,
        ``pcl_y``) update only the outcome features and ``P_Q``; the
        instrument/conditioning features and ``P_V`` stay frozen.
    data : Dataset or mapping of column name -> (n, dim) array
    unlabeled : optional extra rows without outcomes, merged into minibatches
        for the factorizations that do not involve the outcome.
    loss : "l2" (raw scores) or "mle" (softplus-linked scores)

    Returns ``(rep, trace)`` where ``trace`` lists the mean minibatch loss per
    epoch.  Deterministic given ``seed``.
    """
    if setting not in REP_SETTINGS:
        raise ValueError(f"unknown setting {setting!r}; use one of {REP_SETTINGS}")
    opt = opt or AdamConfig()
    cols = _columns_of(data)
    needed = _SETTING_COLUMNS[setting]
    missing = [c for c in needed if c not in cols]
    if missing:
        raise ValueError(f"setting {setting!r} needs columns {needed}, missing {missing}")
    arrays = {c: cols[c] for c in needed}

    if unlabeled is not None:
        if setting in ("ivoc_y", "pcl_y"):
            raise ValueError("unlabeled data cannot augment an outcome factorization")
        ucols = _columns_of(unlabeled)
        missing = [c for c in needed if c not in ucols]
        if missing:
            raise ValueError(f"unlabeled data is missing columns {missing}")
        arrays = {c: np.vstack([arrays[c], ucols[c]]) for c in needed}

    n = next(iter(arrays.values())).shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    if any(a.shape[0] != n for a in arrays.values()):
        raise ValueError("columns disagree on row count")

    trace: list[float] = []
    if epochs == 0:
        return rep, trace

    # Per-setting wiring: which nets train, and how scores/backprop flow.
    frozen_inputs = None
    if setting == "iv":
        trainers = {"phi": rep.phi, "psi": rep.psi}
        inputs = {"phi": arrays["x"], "psi": arrays["z"]}
        tensors = _ArrayBundle([])
    elif setting in ("ivoc_x", "pcl_w"):
        left_col = "x" if setting == "ivoc_x" else "w"
        cond_col = "o" if setting == "ivoc_x" else "x"
        trainers = {"phi": rep.phi, "psi": rep.psi, "xi": rep.xi}
        inputs = {"phi": arrays[left_col], "psi": arrays["z"], "xi": arrays[cond_col]}
        tensors = _ArrayBundle([("P_V", rep.P_V)])
    else:  # ivoc_y, pcl_y
        cond_col = "o" if setting == "ivoc_y" else "x"
        trainers = {"nu": rep.nu}
        inputs = {"nu": arrays["y"]}
        frozen_inputs = {"psi": arrays["z"], "xi": arrays[cond_col]}
        tensors = _ArrayBundle([("P_Q", rep.P_Q)])

    for name, net in trainers.items():
        if net.auto_standardize and not net.scaling_fitted:
            net.fit_input_scaling(inputs[name])
    if setting in ("ivoc_y", "pcl_y"):
        for name, net in (("psi", rep.psi), ("xi", rep.xi)):
            if net.auto_standardize and not net.scaling_fitted:
                net.fit_input_scaling(frozen_inputs[name])

    adam = {name: opt.make_state() for name in trainers}
    tensor_adam = opt.make_state()

    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(n)
        losses, weights = [], []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if idx.size < 2:
                continue
            value = _train_batch(setting, rep, trainers, inputs, frozen_inputs,
                                 tensors, adam, tensor_adam, idx, loss)
            losses.append(value)
            weights.append(idx.size)
        trace.append(float(np.average(losses, weights=weights)) if losses else float("nan"))
    return rep, trace


def _train_batch(setting, rep, trainers, inputs, frozen_inputs, tensors, adam,
                 tensor_adam, idx, loss):
    caches, feats = {}, {}
    for name, net in trainers.items():
        feats[name], caches[name] = net.forward_train(inputs[name][idx])

    tensor_grads = []
    if setting == "iv":
        raw = feats["phi"] @ feats["psi"].T
        value, g = _apply_loss(raw, loss)
        upstream = {"phi": g @ feats["psi"], "psi": g.T @ feats["phi"]}
    elif setting in ("ivoc_x", "pcl_w"):
        right = np.einsum("abk,jb,jk->ja", rep.P_V, feats["psi"], feats["xi"])
        raw = feats["phi"] @ right.T
        value, g = _apply_loss(raw, loss)
        d_right = g.T @ feats["phi"]
        upstream = {
            "phi": g @ right,
            "psi": np.einsum("ja,abk,jk->jb", d_right, rep.P_V, feats["xi"]),
            "xi": np.einsum("ja,abk,jb->jk", d_right, rep.P_V, feats["psi"]),
        }
        tensor_grads = [("P_V", np.einsum("ja,jb,jk->abk", d_right, feats["psi"], feats["xi"]))]
    else:
        psi_f = rep.psi.features(frozen_inputs["psi"][idx])
        xi_f = rep.xi.features(frozen_inputs["xi"][idx])
        r = np.einsum("abk,jb,jk->ja", rep.P_V, psi_f, xi_f)
        t = np.einsum("aek,jk,ja->je", rep.P_Q, xi_f, r)
        raw = feats["nu"] @ t.T
        value, g = _apply_loss(raw, loss)
        d_t = g.T @ feats["nu"]
        upstream = {"nu": g @ t}
        tensor_grads = [("P_Q", np.einsum("je,jk,ja->aek", d_t, xi_f, r))]

    for name, net in trainers.items():
        grads, _ = backward(net.spec, net.params, caches[name], upstream[name])
        adam_step(adam[name], net.params, grads)
    if tensor_grads:
        adam_step(tensor_adam, tensors, _ArrayBundle(tensor_grads))
    return value


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

def _featurenet_entries(prefix, net: FeatureNet):
    meta, entries = ckpt.network_to_entries(prefix, net.spec, net.params)
    entries.append((f"{prefix}.input_offset", net.input_offset))
    entries.append((f"{prefix}.input_scale", net.input_scale))
    return meta, entries


def _featurenet_from(meta, arrays, prefix) -> FeatureNet:
    spec, params = ckpt.network_from_entries(meta, arrays, prefix)
    return FeatureNet(spec, params, arrays[f"{prefix}.input_offset"].copy(),
                      arrays[f"{prefix}.input_scale"].copy(), scaling_fitted=True)


def save_representation(path, rep) -> None:
    """Serialize a representation bundle (networks plus tensors, if any)."""
    entries, meta = [], {}
    if isinstance(rep, IVRepresentation):
        meta["kind"] = "iv_representation"
        for name in ("phi", "psi"):
            net_meta, net_entries = _featurenet_entries(name, getattr(rep, name))
            meta[name] = net_meta
            entries.extend(net_entries)
    elif isinstance(rep, _ConditionedRep):
        meta["kind"] = ("ivoc_representation" if isinstance(rep, IVOCRepresentation)
                        else "pcl_representation")
        for name in ("phi", "psi", "xi", "nu"):
            net_meta, net_entries = _featurenet_entries(name, getattr(rep, name))
            meta[name] = net_meta
            entries.extend(net_entries)
        entries.append(("P_V", rep.P_V))
        entries.append(("P_Q", rep.P_Q))
    else:
        raise TypeError(f"cannot serialize representation of type {type(rep).__name__}")
    ckpt.save_arrays(path, entries, meta)


def load_representation(path):
    meta, arrays = ckpt.load_arrays(path)
    kind = meta.get("kind")
    if kind == "iv_representation":
        return IVRepresentation(_featurenet_from(meta["phi"], arrays, "phi"),
                                _featurenet_from(meta["psi"], arrays, "psi"))
    if kind in ("ivoc_representation", "pcl_representation"):
        cls = IVOCRepresentation if kind == "ivoc_representation" else PCLRepresentation
        nets = {name: _featurenet_from(meta[name], arrays, name)
                for name in ("phi", "psi", "xi", "nu")}
        return cls(nets["phi"], nets["psi"], nets["xi"], nets["nu"],
                   arrays["P_V"].copy(), arrays["P_Q"].copy())
    raise ValueError(f"{path}: not a representation checkpoint (kind={kind!r})")
