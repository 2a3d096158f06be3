"""Scalar-output MLP Lagrangians evaluated on second-order jets.

The hot path is :func:`forward_batch` / :func:`backward_batch`: a batch of
``(q, qdot)`` points is pushed through the network as jet tensors of shape
``(B, K, width)`` where ``K = 1 + d + d(d+1)/2`` stacks value, gradient and
packed Hessian.  Linear layers act on all ``K`` slots with one matmul; the
elementwise activation step is delegated to the kernel backend.

:func:`mlp_program` builds the very same network out of scalar
:class:`~stable_lnn.jets.Jet2` primitives.  It is slow, but it is an
independent route used to cross-check the fused kernels.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _backend, jets
from ._fallback import GELU, SOFTPLUS, TANH, XTANHK
from ._packing import n_packed, triu
from .errors import NonFiniteJetError

ACTIVATIONS = ("gelu", "softplus", "xtanhk", "hybrid_softplus_quadratic")
INIT_SCHEMES = ("default_kaiming_like", "custom_variance_preserving", "cranmer")
_CODES = {"gelu": GELU, "softplus": SOFTPLUS, "xtanhk": XTANHK, "tanh": TANH}

CHECKPOINT_VERSION = 1


@dataclass
class Architecture:
    """Network shape and options.

    ``layers`` counts linear layers (so ``layers - 1`` hidden activations).
    For ``hybrid_softplus_quadratic`` two parallel subnetworks of width
    ``hidden_dim // 2`` each see the full input; the second one's scalar
    output is squared before the two are summed.
    """

    input_dim: int
    layers: int = 4
    hidden_dim: int = 500
    activation: str = "gelu"
    k: float = 0.5
    quadratic_alpha: float = 1.0
    init_scheme: str = "default_kaiming_like"
    dyt: bool = False
    zero_output: bool = False

    def __post_init__(self):
        if self.input_dim < 2 or self.input_dim % 2:
            raise ValueError("input_dim must be 2n with n >= 1")
        if self.layers < 2:
            raise ValueError("layers must be >= 2")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init_scheme!r}")
        if self.quadratic_alpha < 0:
            raise ValueError("quadratic_alpha must be >= 0")
        if self.activation == "hybrid_softplus_quadratic" and self.hidden_dim % 2:
            raise ValueError("hybrid architecture needs an even hidden_dim")

    @property
    def n(self):
        return self.input_dim // 2

    def subnets(self):
        """List of ``(activation, width, squared_output)`` per subnetwork."""
        if self.activation == "hybrid_softplus_quadratic":
            h = self.hidden_dim // 2
            return [("softplus", h, False), ("softplus", h, True)]
        return [(self.activation, self.hidden_dim, False)]

    def to_dict(self):
        return asdict(self)


@dataclass
class NetworkParams:
    """Flat parameter vector plus named views into it."""

    arch: Architecture
    theta: np.ndarray
    slots: dict = field(default_factory=dict)

    def tensor(self, name):
        off, shape = self.slots[name]
        size = int(np.prod(shape))
        return self.theta[off:off + size].reshape(shape)

    def flatten(self):
        return self.theta.copy()

    def copy(self):
        return NetworkParams(self.arch, self.theta.copy(), dict(self.slots))

    @property
    def size(self):
        return self.theta.size

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self.theta.shape:
            raise ValueError("parameter vector shape mismatch")
        return NetworkParams(self.arch, theta.copy(), dict(self.slots))


def _layout(arch):
    slots = {}
    off = 0

    def add(name, shape):
        nonlocal off
        slots[name] = (off, shape)
        off += int(np.prod(shape))

    for s, (_, width, _) in enumerate(arch.subnets()):
        fan_in = arch.input_dim
        for l in range(arch.layers):
            out = 1 if l == arch.layers - 1 else width
            add(f"net{s}.W{l}", (out, fan_in))
            add(f"net{s}.b{l}", (out,))
            if arch.dyt and l < arch.layers - 1:
                add(f"net{s}.dyt{l}", (out,))
            fan_in = out
    return slots, off


def zeros_params(arch):
    slots, size = _layout(arch)
    return NetworkParams(arch, np.zeros(size), slots)


# ---------------------------------------------------------------------------
# activations


def activation_eval(kind, x, k=0.5):
    """Return ``(f, f', f'')`` of an activation at ``x``.

    ``kind`` is ``"gelu"`` (exact erf form), ``"softplus"`` or ``"xtanhk"``
    (``x * tanh(k x)``).
    """
    if kind not in _CODES:
        raise ValueError(f"unknown activation {kind!r}")
    f0, f1, f2, _ = _backend.kernels.act_derivs(_CODES[kind], np.asarray(x, dtype=np.float64), k)
    if np.ndim(x) == 0:
        return tuple(float(np.ravel(v)[0]) for v in (f0, f1, f2))
    return f0, f1, f2


_GH_CACHE: dict = {}


def variance_gain(kind, k=0.5):
    """``1 / E[f'(z)^2]`` for ``z ~ N(0, 1)`` by 64-point Gauss-Hermite."""
    key = (kind, k)
    if key not in _GH_CACHE:
        if kind == "linear":
            _GH_CACHE[key] = 1.0
        else:
            nodes, weights = np.polynomial.hermite.hermgauss(64)
            z = math.sqrt(2.0) * nodes
            _, f1, _, _ = _backend.kernels.act_derivs(_CODES[kind], z, k)
            expect = np.sum(weights * f1 * f1) / math.sqrt(math.pi)
            _GH_CACHE[key] = 1.0 / expect
    return _GH_CACHE[key]


def init_params(arch, seed):
    """Draw initial parameters; biases are zero and DyT scales start at one."""
    rng = np.random.default_rng(seed)
    params = zeros_params(arch)
    L = arch.layers
    for s, (act, _, _) in enumerate(arch.subnets()):
        for l in range(L):
            W = params.tensor(f"net{s}.W{l}")
            fan_out, fan_in = W.shape
            if arch.init_scheme == "default_kaiming_like":
                std = math.sqrt(2.0 / fan_in)
            elif arch.init_scheme == "custom_variance_preserving":
                std = math.sqrt(variance_gain(act, arch.k) / fan_in)
            else:
                n = max(fan_in, fan_out)
                if l == 0:
                    v = 2.2
                elif l == L - 1:
                    v = float(n)
                else:
                    v = 0.58 * (l + 1)
                std = v / math.sqrt(n)
            if l == L - 1 and arch.zero_output:
                W[...] = 0.0
            else:
                W[...] = rng.normal(0.0, std, size=W.shape)
            if arch.dyt and l < L - 1:
                params.tensor(f"net{s}.dyt{l}")[...] = 1.0
    return params


def cranmer_std(layer_index, n_layers, fan_in, fan_out):
    """Cranmer-scheme standard deviation (``layer_index`` counts from 1)."""
    n = max(fan_in, fan_out)
    if layer_index == 1:
        v = 2.2
    elif layer_index == n_layers:
        v = float(n)
    else:
        v = 0.58 * layer_index
    return v / math.sqrt(n)


# ---------------------------------------------------------------------------
# fused batched jets


def _seed_tensor(X):
    B, D = X.shape
    K = 1 + D + n_packed(D)
    T = np.zeros((B, K, D))
    T[:, 0, :] = X
    T[:, 1 + np.arange(D), np.arange(D)] = 1.0
    return T


def _quadratic_term(X, alpha, n):
    """Jets of ``alpha * qdot . qdot`` for inputs ``X = (q, qdot)``."""
    B, D = X.shape
    I, J = triu(D)
    out = np.zeros((B, 1 + D + n_packed(D)))
    qd = X[:, n:]
    out[:, 0] = alpha * np.sum(qd * qd, axis=1)
    out[:, 1 + n:1 + D] = 2.0 * alpha * qd
    diag = np.nonzero((I == J) & (I >= n))[0]
    out[:, 1 + D + diag] = 2.0 * alpha
    return out


def _square_jet(S, D):
    I, J = triu(D)
    out = np.empty_like(S)
    s0 = S[:, 0:1]
    g = S[:, 1:1 + D]
    out[:, 0] = S[:, 0] ** 2
    out[:, 1:1 + D] = 2.0 * s0 * g
    out[:, 1 + D:] = 2.0 * s0 * S[:, 1 + D:] + 2.0 * g[:, I] * g[:, J]
    return out


def _square_jet_backward(S, G, D):
    I, J = triu(D)
    s0 = S[:, 0]
    g = S[:, 1:1 + D]
    h = S[:, 1 + D:]
    Gg = G[:, 1:1 + D]
    Gh = G[:, 1 + D:]
    out = np.empty_like(S)
    out[:, 0] = 2.0 * s0 * G[:, 0] + 2.0 * np.sum(Gg * g, axis=1) + 2.0 * np.sum(Gh * h, axis=1)
    # d/dg of sum_p Gh_p * 2 g_I g_J
    Sm = np.zeros((S.shape[0], D, D))
    Sm[:, I, J] = Gh
    Sm[:, J, I] = Gh
    idx = np.arange(D)
    Sm[:, idx, idx] *= 2.0
    out[:, 1:1 + D] = 2.0 * s0[:, None] * Gg + 2.0 * np.einsum("bij,bj->bi", Sm, g)
    out[:, 1 + D:] = 2.0 * s0[:, None] * Gh
    return out


def forward_batch(params, X, keep=False):
    """Lagrangian jets for a batch of inputs.

    Parameters
    ----------
    params : NetworkParams
    X : ndarray, shape (B, 2n)
        Concatenated ``(q, qdot)`` in the network's (scaled) units.
    keep : bool
        Keep intermediates for :func:`backward_batch`.

    Returns
    -------
    L : ndarray, shape (B, K)
        ``[value, grad (2n), packed hess]`` of the Lagrangian per sample.
    cache : object or None
    """
    arch = params.arch
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise ValueError(f"expected inputs of shape (B, {arch.input_dim}), got {X.shape}")
    D = arch.input_dim
    kern = _backend.kernels
    T0 = _seed_tensor(X)
    total = _quadratic_term(X, arch.quadratic_alpha, arch.n)
    caches = []
    for s, (act, _, squared) in enumerate(arch.subnets()):
        code = _CODES[act]
        T = T0
        layer_cache = []
        for l in range(arch.layers - 1):
            W = params.tensor(f"net{s}.W{l}")
            b = params.tensor(f"net{s}.b{l}")
            Z = (T.reshape(-1, T.shape[2]) @ W.T).reshape(T.shape[0], T.shape[1], -1)
            Z[:, 0, :] += b
            dyt = None
            if arch.dyt:
                a = params.tensor(f"net{s}.dyt{l}")
                U = Z * a
                Zt, t1, t2, t3 = kern.act_forward(TANH, 0.0, U, D)
                dyt = (Z, U, t1, t2, t3)
                Zin = Zt
            else:
                Zin = Z
            Y, f1, f2, f3 = kern.act_forward(code, arch.k, Zin, D)
            if keep:
                layer_cache.append((T, Zin, f1, f2, f3, dyt))
            T = Y
        W = params.tensor(f"net{s}.W{arch.layers - 1}")
        b = params.tensor(f"net{s}.b{arch.layers - 1}")
        out = T @ W[0]
        out[:, 0] += b[0]
        if squared:
            pre = out
            out = _square_jet(pre, D)
        else:
            pre = None
        total = total + out
        if keep:
            caches.append((layer_cache, T, pre))
    if not np.all(np.isfinite(total)):
        raise NonFiniteJetError("mlp_forward")
    return total, (caches if keep else None)


def backward_batch(params, cache, G):
    """Parameter gradient of ``sum(G * L)`` given the cache of ``forward_batch``."""
    arch = params.arch
    D = arch.input_dim
    kern = _backend.kernels
    grad = np.zeros_like(params.theta)
    gp = NetworkParams(arch, grad, params.slots)  # views write into ``grad``
    for s, (act, _, squared) in enumerate(arch.subnets()):
        layer_cache, T_last, pre = cache[s]
        Gs = G
        if squared:
            Gs = _square_jet_backward(pre, G, D)
        L = arch.layers - 1
        W = params.tensor(f"net{s}.W{L}")
        gp.tensor(f"net{s}.W{L}")[0] += np.einsum("bk,bkm->m", Gs, T_last)
        gp.tensor(f"net{s}.b{L}")[0] += np.sum(Gs[:, 0])
        Tbar = Gs[:, :, None] * W[0][None, None, :]
        for l in range(L - 1, -1, -1):
            T_in, Zin, f1, f2, f3, dyt = layer_cache[l]
            Zbar = kern.act_backward(Zin, f1, f2, f3, Tbar, D)
            if dyt is not None:
                Z, U, t1, t2, t3 = dyt
                Ubar = kern.act_backward(U, t1, t2, t3, Zbar, D)
                a = params.tensor(f"net{s}.dyt{l}")
                gp.tensor(f"net{s}.dyt{l}")[...] += np.einsum("bkm,bkm->m", Ubar, Z)
                Zbar = Ubar * a
            W = params.tensor(f"net{s}.W{l}")
            m_out, m_in = W.shape
            gp.tensor(f"net{s}.W{l}")[...] += Zbar.reshape(-1, m_out).T @ T_in.reshape(-1, m_in)
            gp.tensor(f"net{s}.b{l}")[...] += np.sum(Zbar[:, 0, :], axis=0)
            if l > 0:
                Tbar = (Zbar.reshape(-1, m_out) @ W).reshape(Zbar.shape[0], Zbar.shape[1], m_in)
    return grad


def lagrangian(params, q, qdot):
    """Network Lagrangian at one point as a :class:`~stable_lnn.jets.Jet2`."""
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    qdot = np.atleast_1d(np.asarray(qdot, dtype=np.float64))
    if q.shape != qdot.shape or q.shape[0] != params.arch.n:
        raise ValueError("q and qdot must both have length n")
    L, _ = forward_batch(params, np.concatenate([q, qdot])[None, :])
    D = params.arch.input_dim
    return jets.Jet2(L[0, 0], L[0, 1:1 + D].copy(), L[0, 1 + D:].copy())


# ---------------------------------------------------------------------------
# scalar-jet reference program


def _act_jet(kind, x, k):
    if kind == "gelu":
        return x * (0.5 * (1.0 + jets.erf(x * (1.0 / math.sqrt(2.0)))))
    if kind == "softplus":
        return jets.log(1.0 + jets.exp(x))
    if kind == "xtanhk":
        return x * jets.tanh(x * k)
    raise ValueError(kind)


def mlp_program(params_or_arch):
    """Jet program ``f(param_jets, input_jets)`` equivalent to the fused net."""
    arch = getattr(params_or_arch, "arch", params_or_arch)
    slots, _ = _layout(arch)

    def f(pj, xj):
        def tensor(name):
            off, shape = slots[name]
            size = int(np.prod(shape))
            return np.array(pj[off:off + size], dtype=object).reshape(shape)

        total = None
        for s, (act, _, squared) in enumerate(arch.subnets()):
            h = list(xj)
            for l in range(arch.layers):
                W = tensor(f"net{s}.W{l}")
                b = tensor(f"net{s}.b{l}")
                z = []
                for i in range(W.shape[0]):
                    acc = b[i]
                    for j in range(W.shape[1]):
                        acc = acc + W[i, j] * h[j]
                    z.append(acc)
                if l < arch.layers - 1:
                    if arch.dyt:
                        a = tensor(f"net{s}.dyt{l}")
                        z = [jets.tanh(a[i] * z[i]) for i in range(len(z))]
                    h = [_act_jet(act, zi, arch.k) for zi in z]
                else:
                    h = z
            out = h[0] * h[0] if squared else h[0]
            total = out if total is None else total + out
        n = arch.n
        if arch.quadratic_alpha:
            for v in xj[n:]:
                total = total + arch.quadratic_alpha * (v * v)
        return total

    return f


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params, extra=None):
    """Write a versioned JSON checkpoint.

    Floats are written with ``repr`` precision so the round trip is bit-exact.
    """
    doc = {
        "format": "stable_lnn.checkpoint",
        "version": CHECKPOINT_VERSION,
        "architecture": params.arch.to_dict(),
        "tensors": {
            name: {"shape": list(shape), "data": params.tensor(name).ravel().tolist()}
            for name, (_, shape) in params.slots.items()
        },
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(params, extra)``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "stable_lnn.checkpoint":
        raise ValueError(f"{path}: not a stable_lnn checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arch = Architecture(**doc["architecture"])
    params = zeros_params(arch)
    for name, t in doc["tensors"].items():
        if name not in params.slots or tuple(t["shape"]) != tuple(params.slots[name][1]):
            raise ValueError(f"{path}: tensor {name} does not match the architecture")
        params.tensor(name)[...] = np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])
    return params, doc.get("extra", {})
