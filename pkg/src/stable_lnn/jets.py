"""Second-order multivariate jets with a reverse sweep over parameters.

A :class:`Jet2` carries the value, gradient and (packed) Hessian of a scalar
with respect to ``d`` tracked input directions.  When a :class:`JetTape` is
recording, every primitive is logged so that :func:`backprop_params` can
return gradients of any linear functional of ``(value, grad, hess)`` with
respect to the parameter leaves -- reverse mode over forward-forward jets.

The primitive set is deliberately small: ``add, sub, mul, div, neg`` and the
unary functions ``exp, log, tanh, erf, sin, cos, sqrt``.
"""
from __future__ import annotations

import contextvars
import math
from dataclasses import dataclass, field

import numpy as np

from ._packing import n_packed, sym_contract, sym_outer, triu, unpack
from .errors import JetDomainError, NonFiniteJetError

_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("active_jet_tape", default=None)

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


class Jet2:
    """Truncated second-order Taylor expansion of a scalar.

    Attributes
    ----------
    value : float
    grad : ndarray, shape (d,)
    hess : ndarray, shape (d (d + 1) / 2,)
        Upper triangle of the symmetric Hessian, row-major.
    """

    __slots__ = ("value", "grad", "hess", "_node")

    def __init__(self, value, grad, hess, _node=None):
        self.value = float(value)
        self.grad = grad
        self.hess = hess
        self._node = _node

    @property
    def d(self):
        return self.grad.shape[0]

    def hess_matrix(self):
        """Full symmetric Hessian."""
        return unpack(self.hess, self.d)

    def __repr__(self):
        return f"Jet2(value={self.value!r}, grad={self.grad!r}, hess={self.hess!r})"

    # arithmetic -----------------------------------------------------------
    def _lift(self, other):
        if isinstance(other, Jet2):
            if other.d != self.d:
                raise ValueError(f"jet dimension mismatch: {self.d} vs {other.d}")
            return other
        return jet_const(other, self.d)

    def __add__(self, other):
        return _binary("add", self, self._lift(other))

    def __radd__(self, other):
        return _binary("add", self._lift(other), self)

    def __sub__(self, other):
        return _binary("sub", self, self._lift(other))

    def __rsub__(self, other):
        return _binary("sub", self._lift(other), self)

    def __mul__(self, other):
        return _binary("mul", self, self._lift(other))

    def __rmul__(self, other):
        return _binary("mul", self._lift(other), self)

    def __truediv__(self, other):
        return _div(self, self._lift(other))

    def __rtruediv__(self, other):
        return _div(self._lift(other), self)

    def __neg__(self):
        return _unary_linear_neg(self)

    def __pos__(self):
        return self

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise TypeError("Jet2 only supports non-negative integer powers")
        if k == 0:
            return jet_const(1.0, self.d)
        out = self
        for _ in range(k - 1):
            out = out * self
        return out


def jet_const(x, d):
    """Constant jet: zero gradient and Hessian."""
    if d < 0:
        raise ValueError("direction count must be non-negative")
    return Jet2(x, np.zeros(d), np.zeros(n_packed(d)))


def jet_seed(x, direction, d):
    """Independent variable along ``direction`` (unit gradient)."""
    if not 0 <= direction < d:
        raise IndexError(f"direction {direction} out of range for d={d}")
    g = np.zeros(d)
    g[direction] = 1.0
    return Jet2(x, g, np.zeros(n_packed(d)))


def seed_vector(x):
    """Seed every entry of ``x`` as its own direction."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    return [jet_seed(float(v), i, d) for i, v in enumerate(x)]


# ---------------------------------------------------------------------------
# tape


@dataclass
class _Entry:
    kind: str
    operands: tuple
    node: int
    extra: tuple = ()


@dataclass
class JetTape:
    """Topologically ordered log of primitives for one forward evaluation."""

    entries: list = field(default_factory=list)
    param_nodes: list = field(default_factory=list)
    output: Jet2 | None = None
    _next: int = 0

    def new_node(self):
        n = self._next
        self._next += 1
        return n

    def param(self, value, d):
        j = jet_const(value, d)
        j._node = self.new_node()
        self.param_nodes.append(j._node)
        return j

    @property
    def n_params(self):
        return len(self.param_nodes)


def _tracked(*jets):
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return None
    if any(j._node is not None for j in jets):
        return tape
    return None


def _finish(kind, out, operands, extra=()):
    tape = _tracked(*operands)
    index = len(tape.entries) if tape is not None else None
    if not (math.isfinite(out.value) and np.all(np.isfinite(out.grad)) and np.all(np.isfinite(out.hess))):
        raise NonFiniteJetError(kind, index)
    if tape is not None:
        out._node = tape.new_node()
        tape.entries.append(_Entry(kind, operands, out._node, extra))
    return out


def _binary(kind, a, b):
    if kind == "add":
        out = Jet2(a.value + b.value, a.grad + b.grad, a.hess + b.hess)
    elif kind == "sub":
        out = Jet2(a.value - b.value, a.grad - b.grad, a.hess - b.hess)
    elif kind == "mul":
        out = Jet2(
            a.value * b.value,
            a.value * b.grad + b.value * a.grad,
            a.value * b.hess + b.value * a.hess + sym_outer(a.grad, b.grad),
        )
    else:
        raise ValueError(f"unknown binary primitive {kind!r}")
    return _finish(kind, out, (a, b))


def _unary_linear_neg(a):
    return _finish("neg", Jet2(-a.value, -a.grad, -a.hess), (a,))


def _div(a, b):
    if b.value == 0.0:
        raise JetDomainError("jet division by zero value")
    return _binary("mul", a, _unary("recip", b))


def _derivs(kind, v):
    """f, f', f'', f''' of the unary primitive at ``v``."""
    if kind == "exp":
        e = math.exp(v)
        return e, e, e, e
    if kind == "log":
        if v <= 0.0:
            raise JetDomainError(f"log of non-positive value {v}")
        return math.log(v), 1.0 / v, -1.0 / v ** 2, 2.0 / v ** 3
    if kind == "tanh":
        t = math.tanh(v)
        s = 1.0 - t * t
        return t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)
    if kind == "erf":
        f1 = _TWO_OVER_SQRT_PI * math.exp(-v * v)
        return math.erf(v), f1, -2.0 * v * f1, (4.0 * v * v - 2.0) * f1
    if kind == "sin":
        s, c = math.sin(v), math.cos(v)
        return s, c, -s, -c
    if kind == "cos":
        s, c = math.sin(v), math.cos(v)
        return c, -s, -c, s
    if kind == "sqrt":
        if v <= 0.0:
            raise JetDomainError(f"sqrt of non-positive value {v}")
        r = math.sqrt(v)
        return r, 0.5 / r, -0.25 / (r * v), 0.375 / (r * v * v)
    if kind == "recip":
        return 1.0 / v, -1.0 / v ** 2, 2.0 / v ** 3, -6.0 / v ** 4
    raise ValueError(f"unknown unary primitive {kind!r}")


def _unary(kind, a):
    try:
        f0, f1, f2, f3 = _derivs(kind, a.value)
    except OverflowError:
        tape = _tracked(a)
        raise NonFiniteJetError(kind, len(tape.entries) if tape is not None else None) from None
    out = Jet2(f0, f1 * a.grad, f1 * a.hess + 0.5 * f2 * sym_outer(a.grad, a.grad))
    return _finish(kind, out, (a,), (f1, f2, f3))


UNARY_KINDS = ("exp", "log", "tanh", "erf", "sin", "cos", "sqrt")
ARITH_KINDS = ("add", "sub", "mul", "div", "neg")


def jet_arith(kind, a, b=None):
    """Arithmetic primitive by name (``b`` is ignored for ``neg``)."""
    if kind == "neg":
        return -a
    if a.d != b.d:
        raise ValueError(f"jet dimension mismatch: {a.d} vs {b.d}")
    if kind == "div":
        return _div(a, b)
    return _binary(kind, a, b)


def jet_unary(kind, a):
    """Unary primitive by name, see :data:`UNARY_KINDS`."""
    if kind not in UNARY_KINDS:
        raise ValueError(f"unknown unary primitive {kind!r}")
    return _unary(kind, a)


# math-style helpers that accept floats or jets, so Lagrangians can be written
# once and evaluated on either.
def _dispatch(kind, fn):
    def op(x):
        if isinstance(x, Jet2):
            return _unary(kind, x)
        return fn(x)

    op.__name__ = kind
    return op


exp = _dispatch("exp", np.exp)
log = _dispatch("log", np.log)
tanh = _dispatch("tanh", np.tanh)
sin = _dispatch("sin", np.sin)
cos = _dispatch("cos", np.cos)
sqrt = _dispatch("sqrt", np.sqrt)


def erf(x):
    if isinstance(x, Jet2):
        return _unary("erf", x)
    from scipy.special import erf as _erf

    return _erf(x)


# ---------------------------------------------------------------------------
# forward recording and reverse sweep


def record_forward(f, params, input_jets):
    """Evaluate ``f(param_jets, input_jets)`` while recording a tape.

    Parameters
    ----------
    f : callable
        Jet program; receives a list of parameter jets (one per scalar
        parameter, constant w.r.t. the inputs) and ``input_jets``.
    params : array_like or NetworkParams
        Flat parameter values, or an object exposing ``flatten()``.
    input_jets : sequence of Jet2

    Returns
    -------
    output : Jet2
    tape : JetTape
    """
    if hasattr(params, "flatten") and not isinstance(params, np.ndarray):
        flat = params.flatten()
    else:
        flat = np.asarray(params, dtype=np.float64).ravel()
    d = input_jets[0].d if len(input_jets) else 0
    tape = JetTape()
    token = _ACTIVE_TAPE.set(tape)
    try:
        pjets = [tape.param(float(v), d) for v in flat]
        out = f(pjets, input_jets)
    finally:
        _ACTIVE_TAPE.reset(token)
    if not isinstance(out, Jet2):
        out = jet_const(out, d)
    tape.output = out
    return out, tape


def backprop_params(tape, adjoint):
    """Gradient of ``<adjoint, output>`` with respect to every parameter.

    ``adjoint`` is a :class:`Jet2` (or ``(value, grad, hess_packed)`` tuple)
    weighting the output coefficients; the result has one entry per parameter
    leaf in the order they were created.
    """
    out = tape.output
    if isinstance(adjoint, Jet2):
        V, G, H = adjoint.value, adjoint.grad, adjoint.hess
    else:
        V, G, H = adjoint
    G = np.asarray(G, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if G.shape != out.grad.shape or H.shape != out.hess.shape:
        raise ValueError("adjoint shape does not match tape output")
    grads = np.zeros(tape.n_params)
    if out._node is None:
        return grads
    adj = {out._node: [float(V), G.copy(), H.copy()]}

    def acc(j, v, g, h):
        if j._node is None:
            return
        slot = adj.get(j._node)
        if slot is None:
            adj[j._node] = [v, np.array(g, dtype=np.float64), np.array(h, dtype=np.float64)]
        else:
            slot[0] += v
            slot[1] += g
            slot[2] += h

    for e in reversed(tape.entries):
        a_ = adj.pop(e.node, None)
        if a_ is None:
            continue
        v, g, h = a_
        if e.kind == "add":
            a, b = e.operands
            acc(a, v, g, h)
            acc(b, v, g, h)
        elif e.kind == "sub":
            a, b = e.operands
            acc(a, v, g, h)
            acc(b, -v, -g, -h)
        elif e.kind == "neg":
            (a,) = e.operands
            acc(a, -v, -g, -h)
        elif e.kind == "mul":
            a, b = e.operands
            if a._node is not None:
                acc(
                    a,
                    v * b.value + g @ b.grad + h @ b.hess,
                    g * b.value + sym_contract(h, b.grad),
                    h * b.value,
                )
            if b._node is not None:
                acc(
                    b,
                    v * a.value + g @ a.grad + h @ a.hess,
                    g * a.value + sym_contract(h, a.grad),
                    h * a.value,
                )
        else:
            (a,) = e.operands
            f1, f2, f3 = e.extra
            ag = a.grad
            acc(
                a,
                f1 * v + f2 * (g @ ag) + f2 * (h @ a.hess) + 0.5 * f3 * (h @ sym_outer(ag, ag)),
                f1 * g + f2 * sym_contract(h, ag),
                f1 * h,
            )
    index = {node: i for i, node in enumerate(tape.param_nodes)}
    for node, (v, _, _) in adj.items():
        i = index.get(node)
        if i is not None:
            grads[i] += v
    return grads


def evaluate_plain(f, x):
    """Evaluate a jet-compatible scalar function on plain floats."""
    return float(f(np.asarray(x, dtype=np.float64)))


def jet_eval(f, x):
    """Evaluate ``f`` on seeded jets of ``x``; returns ``(value, grad, hess)``."""
    out = f(seed_vector(x))
    if not isinstance(out, Jet2):
        d = len(x)
        return float(out), np.zeros(d), np.zeros((d, d))
    return out.value, out.grad.copy(), out.hess_matrix()


__all__ = [
    "Jet2",
    "JetTape",
    "jet_const",
    "jet_seed",
    "jet_arith",
    "jet_unary",
    "seed_vector",
    "record_forward",
    "backprop_params",
    "jet_eval",
    "triu",
]
