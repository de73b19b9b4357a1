"""Brute-force reference computations used to check the solvers.

Nothing here calls into the bound propagation, refinement or simplex code:
networks are evaluated by a separate loop, LPs go to scipy's HiGHS, and
gradients come from central differences.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

MAX_GRID_DIM = 4
MAX_ENUM_BINARIES = 12


@dataclass(frozen=True)
class GridSpec:
    resolution: int
    norm_p: float
    epsilon: float

    def __post_init__(self):
        if self.resolution < 3 or self.resolution % 2 == 0:
            raise ValueError("grid resolution must be an odd integer >= 3")

    def points(self, dim):
        if dim > MAX_GRID_DIM:
            raise ValueError(f"grid attack supports at most {MAX_GRID_DIM} input dimensions, got {dim}")
        axis = np.linspace(-self.epsilon, self.epsilon, self.resolution)
        axis[self.resolution // 2] = 0.0
        pts = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
        if not math.isinf(self.norm_p):
            keep = np.sum(np.abs(pts) ** self.norm_p, axis=1) ** (1.0 / self.norm_p) <= self.epsilon * (1 + 1e-12)
            pts = pts[keep]
        return pts


def _evaluate(net, X):
    """Straight-line evaluation, one layer dict at a time."""
    H = np.array(X, dtype=np.float64)
    for layer in net.layers:
        if layer.kind == "relu":
            H = np.where(H > 0.0, H, 0.0)
        else:
            W = np.asarray(layer.weight)
            H = np.einsum("...j,ij->...i", H, W) + np.asarray(layer.bias)
    return H


def grid_attack(net, instance, grid):
    """``(min correct count, its delta, max misclassified count)`` over the grid."""
    X = np.asarray(instance.inputs)
    deltas = grid.points(X.shape[1])
    labels = np.asarray(instance.labels)
    correct = np.zeros(len(deltas), dtype=int)
    for i in range(X.shape[0]):
        Y = _evaluate(net, X[i][None, :] + deltas)
        correct += (Y[:, labels[i]] >= Y.max(axis=1)).astype(int)
    worst = int(np.argmin(correct))
    return int(correct[worst]), deltas[worst], int(X.shape[0] - correct.min())


def _linprog(c, rows, lower, upper):
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for coeffs, rel, rhs in rows:
        if rel == "<=":
            A_ub.append(coeffs)
            b_ub.append(rhs)
        elif rel == ">=":
            A_ub.append(-np.asarray(coeffs))
            b_ub.append(-rhs)
        else:
            A_eq.append(coeffs)
            b_eq.append(rhs)
    bounds = [(None if math.isinf(lo) else lo, None if math.isinf(hi) else hi) for lo, hi in zip(lower, upper)]
    return linprog(c, A_ub=np.array(A_ub) if A_ub else None, b_ub=b_ub or None,
                   A_eq=np.array(A_eq) if A_eq else None, b_eq=b_eq or None, bounds=bounds, method="highs")


def enumerate_milp(model):
    """Exact optimum by fixing every binary assignment and solving the remaining LP."""
    lp = model.lp
    binaries = list(model.binaries)
    if len(binaries) > MAX_ENUM_BINARIES:
        raise ValueError(f"{len(binaries)} binaries exceed the enumeration limit of {MAX_ENUM_BINARIES}")
    c = np.asarray(lp.objective, dtype=np.float64)
    sign = 1.0 if lp.sense == "min" else -1.0
    continuous = np.ones(len(c), dtype=bool)
    continuous[binaries] = False
    assignments = list(itertools.product((0.0, 1.0), repeat=len(binaries)))
    pure = not np.any(c[continuous])
    if pure:
        # objective fixed by the binaries: the first feasible assignment in order is optimal
        assignments.sort(key=lambda a: sign * float(np.dot(c[binaries], a)))
    best = None
    for a in assignments:
        lo = np.array(lp.lower, dtype=np.float64)
        hi = np.array(lp.upper, dtype=np.float64)
        lo[binaries] = a
        hi[binaries] = a
        res = _linprog(sign * c, lp.rows, lo, hi)
        if res.status == 3:
            return math.inf * -sign
        if res.status != 0:
            continue
        value = sign * res.fun + lp.offset
        if best is None or sign * value < sign * best:
            best = value
        if pure:
            break
    return best


def lp_optimum(lp):
    """Reference LP value (HiGHS); ``None`` when infeasible."""
    sign = 1.0 if lp.sense == "min" else -1.0
    res = _linprog(sign * np.asarray(lp.objective), lp.rows, lp.lower, lp.upper)
    if res.status == 2:
        return None
    if res.status == 3:
        return -sign * math.inf
    return sign * res.fun + lp.offset


def lp_vertices(lp, tol=1e-9):
    """Best objective over all basic feasible points of a bounded LP."""
    n = lp.n_vars
    A, b, eq = [], [], []
    for coeffs, rel, rhs in lp.rows:
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if rel == ">=":
            coeffs, rhs = -coeffs, -rhs
        A.append(coeffs)
        b.append(rhs)
        eq.append(rel == "=")
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if math.isfinite(lp.upper[j]):
            A.append(e)
            b.append(lp.upper[j])
            eq.append(False)
        if math.isfinite(lp.lower[j]):
            A.append(-e)
            b.append(-lp.lower[j])
            eq.append(False)
    A = np.array(A)
    b = np.array(b)
    eq = np.array(eq)
    sign = 1.0 if lp.sense == "min" else -1.0
    best = None
    for active in itertools.combinations(range(len(b)), n):
        sub = A[list(active)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, b[list(active)])
        slack = b - A @ x
        if np.any(slack < -1e-7) or np.any(np.abs(slack[eq]) > 1e-7):
            continue
        value = float(np.dot(lp.objective, x)) + lp.offset
        if best is None or sign * value < sign * best - tol:
            best = value
    return best


def finite_diff(f, point, h=1e-5):
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    for idx in range(point.size):
        e = np.zeros_like(point)
        e.flat[idx] = h
        grad.flat[idx] = (f(point + e) - f(point - e)) / (2.0 * h)
    return grad


def straight_line_forward(net, x):
    """Per-neuron scalar loop; slow but shares nothing with the vectorised forward."""
    h = [float(v) for v in np.asarray(x).reshape(-1)]
    for layer in net.layers:
        if layer.kind == "relu":
            h = [v if v > 0.0 else 0.0 for v in h]
        else:
            W = np.asarray(layer.weight)
            h = [sum(float(W[r, c]) * h[c] for c in range(len(h))) + float(layer.bias[r]) for r in range(W.shape[0])]
    return np.array(h)
