"""Minimal dense feed-forward networks with exact backpropagation and Adam.

A network is described by a :class:`NetworkSpec` (layer widths, per-layer
activation, per-layer batch-norm flag) and carried by a :class:`NetworkParams`
container of plain float64 numpy arrays.  Layer ``k`` computes

    h = x @ W_k + b_k;  a = act_k(h);  out = batchnorm_k(a)   (if enabled)

Batch norm follows the post-activation placement of the feature extractors
this package trains.  Everything is float64 and bit-deterministic given the
seed used at initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: ``layer_dims[0]`` inputs to ``layer_dims[-1]`` outputs."""

    layer_dims: tuple[int, ...]
    activations: tuple[str, ...]
    batch_norm: tuple[bool, ...]

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ValueError("layer_dims needs at least an input and an output size")
        n_layers = len(self.layer_dims) - 1
        if len(self.activations) != n_layers or len(self.batch_norm) != n_layers:
            raise ValueError(
                f"expected {n_layers} activations and batch_norm flags, got "
                f"{len(self.activations)} and {len(self.batch_norm)}"
            )
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}; use one of {ACTIVATIONS}")
        if any(d <= 0 for d in self.layer_dims):
            raise ValueError(f"layer_dims must be positive, got {self.layer_dims}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]


def mlp_spec(dims, final_activation="linear", hidden_activation="relu",
             batch_norm=False) -> NetworkSpec:
    """Convenience constructor: hidden layers share one activation, final layer its own.

    Batch norm, when enabled, is applied on hidden layers only (never on the
    output features).
    """
    dims = tuple(int(d) for d in dims)
    n = len(dims) - 1
    acts = tuple([hidden_activation] * (n - 1) + [final_activation])
    bns = tuple([bool(batch_norm)] * (n - 1) + [False])
    return NetworkSpec(dims, acts, bns)


@dataclass
class NetworkParams:
    """Trainable arrays plus batch-norm state for one network.

    ``weights[k]`` has shape ``(layer_dims[k], layer_dims[k+1])``.  Batch-norm
    lists hold ``None`` at layers where it is disabled; running variances stay
    strictly positive.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bn_scale: list[np.ndarray | None]
    bn_shift: list[np.ndarray | None]
    bn_running_mean: list[np.ndarray | None]
    bn_running_var: list[np.ndarray | None]

    def copy(self) -> "NetworkParams":
        cp = lambda xs: [None if x is None else x.copy() for x in xs]
        return NetworkParams(cp(self.weights), cp(self.biases), cp(self.bn_scale),
                             cp(self.bn_shift), cp(self.bn_running_mean),
                             cp(self.bn_running_var))

    def trainable(self):
        """Yield (label, array) for every trainable array, in declaration order."""
        for k, w in enumerate(self.weights):
            yield f"layer{k}.weight", w
            yield f"layer{k}.bias", self.biases[k]
            if self.bn_scale[k] is not None:
                yield f"layer{k}.bn_scale", self.bn_scale[k]
                yield f"layer{k}.bn_shift", self.bn_shift[k]


@dataclass
class NetworkGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bn_scale: list[np.ndarray | None]
    bn_shift: list[np.ndarray | None]

    def trainable(self):
        for k, w in enumerate(self.weights):
            yield f"layer{k}.weight", w
            yield f"layer{k}.bias", self.biases[k]
            if self.bn_scale[k] is not None:
                yield f"layer{k}.bn_scale", self.bn_scale[k]
                yield f"layer{k}.bn_shift", self.bn_shift[k]

    def scale(self, c: float) -> "NetworkGrads":
        sc = lambda xs: [None if x is None else c * x for x in xs]
        return NetworkGrads(sc(self.weights), sc(self.biases),
                            sc(self.bn_scale), sc(self.bn_shift))

    def add_(self, other: "NetworkGrads"):
        for mine, theirs in zip(
            (self.weights, self.biases, self.bn_scale, self.bn_shift),
            (other.weights, other.biases, other.bn_scale, other.bn_shift),
        ):
            for k in range(len(mine)):
                if mine[k] is not None:
                    mine[k] += theirs[k]
        return self


def zero_grads(spec: NetworkSpec, params: NetworkParams) -> NetworkGrads:
    return NetworkGrads(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
        [None if g is None else np.zeros_like(g) for g in params.bn_scale],
        [None if g is None else np.zeros_like(g) for g in params.bn_shift],
    )


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> NetworkParams:
    """Seeded initialization: Kaiming-uniform for relu layers, Xavier-uniform
    for tanh/linear, zero biases, identity batch-norm."""
    weights, biases = [], []
    bn_scale, bn_shift, bn_rm, bn_rv = [], [], [], []
    for k in range(spec.n_layers):
        fan_in, fan_out = spec.layer_dims[k], spec.layer_dims[k + 1]
        if spec.activations[k] == "relu":
            bound = math.sqrt(6.0 / fan_in)
        else:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
        if spec.batch_norm[k]:
            bn_scale.append(np.ones(fan_out))
            bn_shift.append(np.zeros(fan_out))
            bn_rm.append(np.zeros(fan_out))
            bn_rv.append(np.ones(fan_out))
        else:
            bn_scale.append(None)
            bn_shift.append(None)
            bn_rm.append(None)
            bn_rv.append(None)
    return NetworkParams(weights, biases, bn_scale, bn_shift, bn_rm, bn_rv)


def _activate(name: str, h: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(h, 0.0)
    if name == "tanh":
        return np.tanh(h)
    return h


def _activate_grad(name: str, h: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (h > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(h)


def forward(spec: NetworkSpec, params: NetworkParams, batch, mode: str = "train"):
    """Run the network on a batch of rows.

    Parameters
    ----------
    batch : (n, layer_dims[0]) array
    mode : {"train", "eval"}
        Train mode normalizes with batch statistics and updates the running
        statistics in ``params``; eval mode uses the stored running statistics
        and never mutates state.

    Returns
    -------
    (outputs, cache)
        ``outputs`` is (n, layer_dims[-1]); ``cache`` feeds :func:`backward`
        and is only produced meaningfully in train mode.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != spec.in_dim:
        raise ValueError(
            f"batch has {x.shape[1]} columns but the network expects {spec.in_dim}"
        )
    cache = {"mode": mode, "layers": [], "in_dim": spec.in_dim}
    for k in range(spec.n_layers):
        h = x @ params.weights[k] + params.biases[k]
        a = _activate(spec.activations[k], h)
        layer_cache = {"x": x, "h": h, "a": a}
        if params.bn_scale[k] is not None:
            if mode == "train":
                mu = a.mean(axis=0)
                var = a.var(axis=0)
                std = np.sqrt(var + BN_EPS)
                xhat = (a - mu) / std
                params.bn_running_mean[k] = (
                    BN_MOMENTUM * params.bn_running_mean[k] + (1 - BN_MOMENTUM) * mu
                )
                params.bn_running_var[k] = (
                    BN_MOMENTUM * params.bn_running_var[k] + (1 - BN_MOMENTUM) * var
                )
            else:
                std = np.sqrt(params.bn_running_var[k] + BN_EPS)
                xhat = (a - params.bn_running_mean[k]) / std
            out = params.bn_scale[k] * xhat + params.bn_shift[k]
            layer_cache.update(xhat=xhat, std=std)
        else:
            out = a
        cache["layers"].append(layer_cache)
        x = out
    return x, cache


def backward(spec: NetworkSpec, params: NetworkParams, cache, upstream):
    """Backpropagate ``sum(upstream * outputs)`` through a train-mode forward.

    Returns ``(grads, input_grads)`` where ``grads`` mirrors the trainable
    arrays and ``input_grads`` has the shape of the input batch.
    """
    if cache.get("mode") != "train":
        raise ValueError("backward requires a cache from a train-mode forward")
    layers = cache["layers"]
    if len(layers) != spec.n_layers:
        raise ValueError("cache does not match this network spec")
    dout = np.asarray(upstream, dtype=np.float64)
    last = layers[-1]
    expected = last["a"].shape
    if dout.shape != expected:
        raise ValueError(f"upstream has shape {dout.shape}, expected {expected}")
    grads = zero_grads(spec, params)
    for k in range(spec.n_layers - 1, -1, -1):
        lc = layers[k]
        if params.bn_scale[k] is not None:
            xhat, std = lc["xhat"], lc["std"]
            m = xhat.shape[0]
            grads.bn_scale[k] = (dout * xhat).sum(axis=0)
            grads.bn_shift[k] = dout.sum(axis=0)
            dxhat = dout * params.bn_scale[k]
            da = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)) / std
        else:
            da = dout
        dh = da * _activate_grad(spec.activations[k], lc["h"], lc["a"])
        grads.weights[k] = lc["x"].T @ dh
        grads.biases[k] = dh.sum(axis=0)
        dout = dh @ params.weights[k].T
    return grads, dout


@dataclass
class AdamState:
    """First/second moment accumulators with bias-corrected updates."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: NetworkParams, grads: NetworkGrads) -> None:
    """Apply one in-place Adam update to every trainable array."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    grad_map = dict(grads.trainable())
    for label, arr in params.trainable():
        g = grad_map[label]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at {label}")
        if label not in state.m:
            state.m[label] = np.zeros_like(arr)
            state.v[label] = np.zeros_like(arr)
        state.m[label] = state.beta1 * state.m[label] + (1 - state.beta1) * g
        state.v[label] = state.beta2 * state.v[label] + (1 - state.beta2) * (g * g)
        mhat = state.m[label] / bc1
        vhat = state.v[label] / bc2
        arr -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


def grad_check(spec: NetworkSpec, params: NetworkParams, batch, loss_fn,
               h: float = 1e-5) -> float:
    """Compare analytic parameter gradients against central finite differences.

    ``loss_fn(outputs) -> (value, grad_wrt_outputs)`` defines a scalar loss of
    the network outputs.  Returns the worst relative error
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`` over all
    trainable entries.  Works on a private copy of the parameters.
    """
    params = params.copy()
    outputs, cache = forward(spec, params, batch, mode="train")
    _, dout = loss_fn(outputs)
    grads, _ = backward(spec, params, cache, dout)
    grad_map = dict(grads.trainable())

    worst = 0.0
    for label, arr in params.trainable():
        g = grad_map[label]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            lo_plus, _ = loss_fn(forward(spec, params, batch, mode="train")[0])
            arr[idx] = orig - h
            lo_minus, _ = loss_fn(forward(spec, params, batch, mode="train")[0])
            arr[idx] = orig
            numeric = (lo_plus - lo_minus) / (2 * h)
            analytic = g[idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
