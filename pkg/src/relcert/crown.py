"""Parametric backward linear-bound propagation for dense ReLU networks.

A bound is a :class:`LinearForm` ``(L, b)`` with ``L @ (x + d) + b <= c @ N(x + d)``
for every perturbation ``d`` in the p-norm ball used to build the
:class:`BoundsCache`.  The only free parameters are the lower-relaxation slopes
``alpha`` of unstable neurons, stored as one flat vector per cache.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import forward


def dual_exponent(p):
    if math.isinf(p):
        return 1.0
    if p == 1.0:
        return math.inf
    return p / (p - 1.0)


def dual_norm(v, p):
    """``||v||_q`` along the last axis with ``1/p + 1/q = 1``."""
    q = dual_exponent(p)
    v = np.asarray(v, dtype=np.float64)
    if q == 1.0:
        return np.abs(v).sum(axis=-1)
    if math.isinf(q):
        return np.abs(v).max(axis=-1)
    return np.linalg.norm(v, ord=q, axis=-1)


def dual_norm_subgradient(v, p):
    """An element of the subdifferential of ``||.||_q`` at ``v`` (sign(0) = 0)."""
    q = dual_exponent(p)
    v = np.asarray(v, dtype=np.float64)
    if q == 1.0:
        return np.sign(v)
    if math.isinf(q):
        g = np.zeros_like(v)
        if v.size and np.any(v != 0):
            j = int(np.argmax(np.abs(v)))
            g[j] = np.sign(v[j])
        return g
    norm = np.linalg.norm(v, ord=q)
    if norm == 0.0:
        return np.zeros_like(v)
    return np.sign(v) * (np.abs(v) / norm) ** (q - 1.0)


def worst_case_delta(L, epsilon, p):
    """A minimiser of ``L @ d`` over the ball ``||d||_p <= epsilon``."""
    L = np.asarray(L, dtype=np.float64)
    if math.isinf(p):
        return -epsilon * np.sign(L)
    if p == 1.0:
        d = np.zeros_like(L)
        if np.any(L != 0):
            j = int(np.argmax(np.abs(L)))
            d[j] = -epsilon * np.sign(L[j])
        return d
    q = dual_exponent(p)
    norm = np.linalg.norm(L, ord=q)
    if norm == 0.0:
        return np.zeros_like(L)
    d = np.sign(L) * np.abs(L) ** (q - 1.0)
    return -epsilon * d / np.linalg.norm(d, ord=p)


@dataclass(frozen=True)
class LinearForm:
    L: np.ndarray
    b: float

    def value(self, x):
        return float(np.asarray(x) @ self.L + self.b)


def concretize(form, x, epsilon, norm_p):
    """Exact minimum of ``L @ (x + d) + b`` over ``||d||_p <= epsilon``."""
    return float(form.L @ np.asarray(x, dtype=np.float64) + form.b - epsilon * dual_norm(form.L, norm_p))


def concretize_upper(form, x, epsilon, norm_p):
    return float(form.L @ np.asarray(x, dtype=np.float64) + form.b + epsilon * dual_norm(form.L, norm_p))


def relu_relaxation(l, u, alpha):
    """Linear lower/upper lines ``(slope, intercept)`` enclosing ReLU on ``[l, u]``."""
    if l > u:
        raise ValueError(f"invalid interval [{l}, {u}]")
    if u <= 0.0:
        return (0.0, 0.0), (0.0, 0.0)
    if l >= 0.0:
        return (1.0, 0.0), (1.0, 0.0)
    slope = u / (u - l)
    return (float(alpha), 0.0), (slope, -l * slope)


def heuristic_slope(lower, upper):
    return (upper > -lower).astype(np.float64)


@dataclass(frozen=True)
class BoundsCache:
    """Frozen pre-activation bounds for every ReLU layer around one center."""

    center: np.ndarray
    epsilon: float
    norm_p: float
    lower: tuple
    upper: tuple

    def __post_init__(self):
        unstable = tuple((lo < 0.0) & (up > 0.0) for lo, up in zip(self.lower, self.upper))
        sizes = [int(mask.sum()) for mask in unstable]
        object.__setattr__(self, "unstable", unstable)
        object.__setattr__(self, "offsets", tuple(np.cumsum([0] + sizes)[:-1].tolist()))
        object.__setattr__(self, "n_alpha", int(sum(sizes)))

    def heuristic_alpha(self):
        parts = [heuristic_slope(lo, up)[mask] for lo, up, mask in zip(self.lower, self.upper, self.unstable)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def relaxations(self, alpha):
        """Per-layer arrays ``(lower_slope, upper_slope, upper_intercept)``."""
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != (self.n_alpha,):
            raise ValueError(f"alpha has shape {alpha.shape}, cache has {self.n_alpha} unstable neurons")
        out = []
        for lo, up, mask, off in zip(self.lower, self.upper, self.unstable, self.offsets):
            active = lo >= 0.0
            lower_slope = active.astype(np.float64)
            lower_slope[mask] = alpha[off:off + int(mask.sum())]
            upper_slope = active.astype(np.float64)
            upper_int = np.zeros_like(lo)
            s = up[mask] / (up[mask] - lo[mask])
            upper_slope[mask] = s
            upper_int[mask] = -lo[mask] * s
            out.append((lower_slope, upper_slope, upper_int))
        return out


def _backward(layers, relax, coeffs, tape=None):
    """Substitute ``coeffs @ h`` back through ``layers`` to the network input.

    ``coeffs`` has one row per bound; positive coefficients at a ReLU take its
    lower line, negative ones its upper line.  Returns ``(L, b)`` row-wise.
    """
    lam = np.array(coeffs, dtype=np.float64, ndmin=2)
    bias = np.zeros(lam.shape[0])
    r = len(relax) - 1
    for layer in reversed(layers):
        if layer.kind == "affine":
            if tape is not None:
                tape.append(("affine", layer))
            bias = bias + lam @ layer.bias
            lam = lam @ layer.weight
        else:
            lo_s, up_s, up_t = relax[r]
            pos = lam > 0.0
            neg = lam < 0.0
            if tape is not None:
                tape.append(("relu", r, lam, pos, neg))
            bias = bias + np.where(neg, lam, 0.0) @ up_t
            lam = np.where(pos, lam * lo_s, np.where(neg, lam * up_s, 0.0))
            r -= 1
    return lam, bias


def _interval_bounds(net, x, epsilon, norm_p):
    lowers, uppers = [], []
    lo = hi = None
    for layer in net.layers:
        if layer.kind == "affine":
            W, b = layer.weight, layer.bias
            if lo is None:
                center = W @ x + b
                radius = epsilon * dual_norm(W, norm_p)
            else:
                mid, rad = (hi + lo) / 2.0, (hi - lo) / 2.0
                center = W @ mid + b
                radius = np.abs(W) @ rad
            lo, hi = center - radius, center + radius
        else:
            lowers.append(lo)
            uppers.append(hi)
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    return lowers, uppers


def preactivation_bounds(net, x, epsilon, norm_p, interval=False):
    """Sound ``[l, u]`` for the input of every ReLU layer over the perturbation ball.

    Each layer is bounded by a full backward pass through the layers below it,
    using the heuristic slope (1 if ``u > -l`` else 0) at already-bounded
    unstable neurons.  ``interval=True`` switches to plain interval arithmetic.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ValueError(f"center has shape {x.shape}, network expects ({net.input_dim},)")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if interval:
        lowers, uppers = _interval_bounds(net, x, epsilon, norm_p)
    else:
        lowers, uppers, relax = [], [], []
        width = net.input_dim
        for idx, layer in enumerate(net.layers):
            if layer.kind == "affine":
                width = layer.weight.shape[0]
                continue
            eye = np.eye(width)
            L, b = _backward(net.layers[:idx], relax, np.vstack([eye, -eye]))
            vals = L @ x + b - epsilon * dual_norm(L, norm_p)
            lo, up = vals[:width], -vals[width:]
            up = np.maximum(up, lo)
            lowers.append(lo)
            uppers.append(up)
            partial = BoundsCache(x, epsilon, norm_p, (lo,), (up,))
            relax.append(partial.relaxations(partial.heuristic_alpha())[0])
    for arr in (*lowers, *uppers):
        arr.setflags(write=False)
    return BoundsCache(x, float(epsilon), norm_p, tuple(lowers), tuple(uppers))


def linear_bounds(net, cache, coeffs, alpha, tape=None):
    """Row-wise ``(L, b)`` for a matrix of output coefficient vectors."""
    coeffs = np.array(coeffs, dtype=np.float64, ndmin=2)
    if coeffs.shape[1] != net.output_dim:
        raise ValueError(f"coefficient vector has length {coeffs.shape[1]}, network has {net.output_dim} outputs")
    return _backward(net.layers, cache.relaxations(alpha), coeffs, tape)


def backward_linear_bound(net, cache, c, alpha):
    L, b = linear_bounds(net, cache, np.asarray(c, dtype=np.float64)[None, :], alpha)
    return LinearForm(L[0], float(b[0]))


def clause_forms(net, cache, rows, alpha):
    L, b = linear_bounds(net, cache, rows, alpha)
    return [LinearForm(L[i], float(b[i])) for i in range(L.shape[0])]


def upper_linear_bound(net, cache, c, alpha=None):
    """A form ``(L, b)`` with ``c @ N(x + d) <= L @ (x + d) + b`` on the ball."""
    alpha = cache.heuristic_alpha() if alpha is None else alpha
    form = backward_linear_bound(net, cache, -np.asarray(c, dtype=np.float64), alpha)
    return LinearForm(-form.L, -form.b)


def margin_upper_bound(net, cache, c):
    form = upper_linear_bound(net, cache, c)
    return concretize_upper(form, cache.center, cache.epsilon, cache.norm_p)


def form_with_vjp(net, cache, c, alpha):
    """``(form, vjp)`` where ``vjp(grad_L, grad_b)`` returns ``dV/dalpha``.

    The positive/negative line selection at each ReLU is held fixed at the
    evaluation point, so this is the gradient wherever no coefficient is 0.
    """
    tape = []
    relax = cache.relaxations(alpha)
    L, b = _backward(net.layers, relax, np.asarray(c, dtype=np.float64)[None, :], tape)

    def vjp(grad_L, grad_b):
        g = np.array(grad_L, dtype=np.float64, ndmin=2)
        gb = float(grad_b)
        dalpha = np.zeros(cache.n_alpha)
        for entry in reversed(tape):
            if entry[0] == "affine":
                layer = entry[1]
                g = g @ layer.weight.T + gb * layer.bias
            else:
                _, r, lam, pos, neg = entry
                lo_s, up_s, up_t = relax[r]
                mask = cache.unstable[r]
                off = cache.offsets[r]
                contrib = (g * lam * pos).sum(axis=0)
                dalpha[off:off + int(mask.sum())] = contrib[mask]
                g = np.where(pos, g * lo_s, np.where(neg, g * up_s + gb * up_t, 0.0))
        return dalpha

    return LinearForm(L[0], float(b[0])), vjp


def form_vjp(net, cache, c, alpha, grad_L, grad_b):
    """Pull ``(dV/dL, dV/db)`` back to ``dV/dalpha`` through the backward pass."""
    return form_with_vjp(net, cache, c, alpha)[1](grad_L, grad_b)


def bound_value_and_gradient(net, cache, c, alpha, x, epsilon, norm_p):
    form, vjp = form_with_vjp(net, cache, c, alpha)
    value = concretize(form, x, epsilon, norm_p)
    grad_L = np.asarray(x, dtype=np.float64) - epsilon * dual_norm_subgradient(form.L, norm_p)
    return value, vjp(grad_L, 1.0)


def bound_gradient(net, cache, c, alpha, x, epsilon, norm_p):
    """d/dalpha of ``concretize(backward_linear_bound(...))`` (subgradient at kinks)."""
    return bound_value_and_gradient(net, cache, c, alpha, x, epsilon, norm_p)[1]


def exact_affine_restriction(net, x):
    """Jacobian and offset of the network at ``x`` for a fixed activation pattern."""
    x = np.asarray(x, dtype=np.float64)
    J = np.eye(net.input_dim)
    h = x
    off = np.zeros(net.input_dim)
    for layer in net.layers:
        if layer.kind == "affine":
            J = layer.weight @ J
            off = layer.weight @ off + layer.bias
            h = layer.weight @ h + layer.bias
        else:
            on = (h > 0).astype(np.float64)
            J = on[:, None] * J
            off = on * off
            h = np.maximum(h, 0.0)
    return J, off, forward(net, x)


def switch_margin(net, cache, c, alpha):
    """Smallest non-zero ``|coefficient|`` whose sign decides a line choice or an ``|L_j|`` term.

    Gradients are exact derivatives only while this stays away from zero.
    """
    tape = []
    L, _ = linear_bounds(net, cache, np.asarray(c, dtype=np.float64)[None, :], alpha, tape)
    values = [np.abs(L[L != 0])]
    for entry in tape:
        if entry[0] == "relu":
            lam = entry[2]
            mask = cache.unstable[entry[1]]
            values.append(np.abs(lam[:, mask][lam[:, mask] != 0]))
    values = np.concatenate(values)
    return float(values.min()) if values.size else math.inf
