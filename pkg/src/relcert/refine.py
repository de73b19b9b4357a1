"""Cross-execution refinement of linear bounds through simplex-weighted duals.

For executions sharing one perturbation ``d``, the weighted sum
``sum_i lam_i (L_i @ (x_i + d) + b_i)`` lower-bounds ``max_i`` of the forms for
every ``lam`` on the simplex, and its minimum over the ball has the closed form
``G(lam) = sum_i lam_i a_i - eps * ||sum_i lam_i L_i||_q``.  ``G`` is maximised
jointly with the ReLU slopes of every member by projected Adam.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .crown import (concretize, clause_forms, dual_norm, dual_norm_subgradient, form_with_vjp,
                    preactivation_bounds)
from .milp import build_lp_pairwise, lp_solve


@dataclass
class RefineConfig:
    adam_iters: int = 20
    lr_alpha: float = 0.1
    lr_lambda: float = 0.1
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    k0: int = 6
    k1: int = 4
    seed: int = 0
    max_tuples: int = 4096  # cap on clause tuples checked for a conjunction certificate
    interval_bounds: bool = False

    def __post_init__(self):
        if self.adam_iters < 0:
            raise ValueError("adam_iters must be non-negative")
        if not self.k0 >= self.k1 >= 1:
            raise ValueError(f"need k0 >= k1 >= 1, got k0={self.k0}, k1={self.k1}")


@dataclass
class DualPoint:
    alphas: dict  # execution -> flat slope vector
    lambdas: np.ndarray

    def check(self, tol=1e-9):
        lam = np.asarray(self.lambdas)
        if np.any(lam < -tol) or np.any(lam > 1 + tol) or abs(lam.sum() - 1.0) > tol:
            raise ValueError("lambdas must lie on the probability simplex")
        for i, a in self.alphas.items():
            if np.any(a < 0) or np.any(a > 1):
                raise ValueError(f"alpha of execution {i} leaves [0, 1]")


@dataclass
class RefinementResult:
    subset: tuple
    clause_targets: tuple
    bound: float  # G at the returned point for the target clauses
    point: DualPoint
    forms: dict  # (execution, clause) -> LinearForm with the learned slopes
    certified_bound: float  # >= 0 iff no shared d misclassifies every member
    history: list = field(default_factory=list)

    @property
    def verified(self):
        return self.certified_bound >= 0.0


def project_simplex(v):
    """Euclidean projection onto ``{w >= 0, sum w = 1}`` by sort and threshold."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _offsets(forms, centers):
    return np.array([float(f.L @ np.asarray(x)) + f.b for f, x in zip(forms, centers, strict=True)])


def g_closed_form(point, forms, centers, epsilon, norm_p):
    lam = np.asarray(point.lambdas if isinstance(point, DualPoint) else point, dtype=np.float64)
    if lam.shape != (len(forms),) or len(forms) != len(centers):
        raise ValueError("lambdas, forms and centers must be aligned")
    a = _offsets(forms, centers)
    S = lam @ np.stack([f.L for f in forms])
    return float(lam @ a - epsilon * dual_norm(S, norm_p))


def g_gradient(lambdas, forms, centers, epsilon, norm_p):
    """``(dG/dlam, [dG/dL_i], [dG/db_i])`` with the dual-norm subgradient held fixed."""
    lam = np.asarray(lambdas, dtype=np.float64)
    Ls = np.stack([f.L for f in forms])
    X = np.stack([np.asarray(x, dtype=np.float64) for x in centers])
    a = _offsets(forms, centers)
    g = dual_norm_subgradient(lam @ Ls, norm_p)
    d_lam = a - epsilon * (Ls @ g)
    d_L = [lam[i] * (X[i] - epsilon * g) for i in range(len(forms))]
    return d_lam, d_L, list(lam)


def g_naive(alphas, forms, centers, epsilon, norm_p):
    """Best single-execution bound ``max_i concretize(form_i)``; ``alphas`` is informational."""
    if not forms:
        raise ValueError("empty subset")
    return max(concretize(f, x, epsilon, norm_p) for f, x in zip(forms, centers, strict=True))


class RefineContext:
    """Per-instance caches shared by every refinement of one verification run."""

    def __init__(self, net, instance, config=None):
        self.net = net
        self.instance = instance
        self.config = config or RefineConfig()
        self._caches = {}
        self._heuristic = {}
        self._individual = {}

    def cache(self, i):
        if i not in self._caches:
            inst = self.instance
            self._caches[i] = preactivation_bounds(self.net, inst.inputs[i], inst.epsilon, inst.norm_p,
                                                   interval=self.config.interval_bounds)
        return self._caches[i]

    def heuristic_forms(self, i):
        if i not in self._heuristic:
            cache = self.cache(i)
            self._heuristic[i] = clause_forms(self.net, cache, self.instance.clauses[i].rows,
                                              cache.heuristic_alpha())
        return self._heuristic[i]

    def heuristic_values(self, i):
        inst = self.instance
        return [concretize(f, inst.inputs[i], inst.epsilon, inst.norm_p) for f in self.heuristic_forms(i)]

    def individual(self, i, j):
        """Slope-optimised single-execution bound for clause ``j`` of execution ``i``."""
        if (i, j) not in self._individual:
            value, alphas, _, history = _optimize(self, (i,), (j,))
            self._individual[(i, j)] = (value, alphas[i], history)
        return self._individual[(i, j)]

    def individual_form(self, i, j):
        alpha = self.individual(i, j)[1]
        return clause_forms(self.net, self.cache(i), self.instance.clauses[i].rows[j:j + 1], alpha)[0]


def _adam_step(param, grad, state, lr, config, t):
    b1, b2 = config.betas
    state["m"] = b1 * state["m"] + (1 - b1) * grad
    state["v"] = b2 * state["v"] + (1 - b2) * grad * grad
    m_hat = state["m"] / (1 - b1 ** t)
    v_hat = state["v"] / (1 - b2 ** t)
    return param + lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)  # ascent on G


def joint_value_and_gradient(ctx, subset, targets, alphas, lam, want_grad=True):
    """``G`` for the target clauses and its gradient w.r.t. each member's slopes and ``lam``."""
    inst = ctx.instance
    forms, vjps = [], []
    for i, j, a in zip(subset, targets, alphas, strict=True):
        f, vjp = form_with_vjp(ctx.net, ctx.cache(i), inst.clauses[i].rows[j], a)
        forms.append(f)
        vjps.append(vjp)
    centers = [inst.inputs[i] for i in subset]
    value = g_closed_form(lam, forms, centers, inst.epsilon, inst.norm_p)
    if not want_grad:
        return value, None, None
    d_lam, d_L, d_b = g_gradient(lam, forms, centers, inst.epsilon, inst.norm_p)
    return value, [vjps[r](d_L[r], d_b[r]) for r in range(len(subset))], d_lam


def _optimize(ctx, subset, targets):
    """Projected Adam ascent of ``G`` over member slopes and simplex weights.

    Returns the best evaluated ``(G, alphas, lambdas, history)``; the starting
    point (heuristic slopes, uniform weights) is one of the candidates.
    """
    cfg = ctx.config
    n = len(subset)
    caches = [ctx.cache(i) for i in subset]
    cuts = np.cumsum([0] + [c.n_alpha for c in caches])
    alpha = np.concatenate([c.heuristic_alpha() for c in caches])
    lam = np.full(n, 1.0 / n)
    state_a = {"m": np.zeros_like(alpha), "v": np.zeros_like(alpha)}
    state_l = {"m": np.zeros(n), "v": np.zeros(n)}

    def split(vec):
        return [vec[cuts[r]:cuts[r + 1]] for r in range(n)]

    best = None
    history = []
    for t in range(1, cfg.adam_iters + 2):
        last = t == cfg.adam_iters + 1
        value, d_alpha, d_lam = joint_value_and_gradient(ctx, subset, targets, split(alpha), lam, not last)
        history.append(value)
        if best is None or value > best[0]:
            best = (value, alpha.copy(), lam.copy())
        if last:
            break
        if alpha.size:
            alpha = np.clip(_adam_step(alpha, np.concatenate(d_alpha), state_a, cfg.lr_alpha, cfg, t), 0.0, 1.0)
        if n > 1:
            lam = project_simplex(_adam_step(lam, d_lam, state_l, cfg.lr_lambda, cfg, t))
    value, alpha, lam = best
    alphas = {i: a.copy() for i, a in zip(subset, split(alpha))}
    return value, alphas, lam, history


def select_clause_targets(net, instance, subset, ctx=None):
    """Per member, the clause whose heuristic bound is lowest (first on ties)."""
    ctx = ctx or RefineContext(net, instance)
    return tuple(int(np.argmin(ctx.heuristic_values(i))) for i in subset)


def _tuple_value(ctx, subset, tup, pools, cross_forms, lam):
    """A lower bound on ``min_d max_i`` margin of clause ``tup[i]`` of each member."""
    inst = ctx.instance
    centers = [inst.inputs[i] for i in subset]
    eps, p = inst.epsilon, inst.norm_p
    chosen = [cross_forms[(i, j)] for i, j in zip(subset, tup)]
    value = g_closed_form(lam, chosen, centers, eps, p)
    for i, j in zip(subset, tup):
        for f in pools[(i, j)]:
            value = max(value, concretize(f, inst.inputs[i], eps, p))
    if value >= 0.0 or not math.isinf(p):
        return value
    forms, xs = [], []
    for i, j in zip(subset, tup):
        for f in pools[(i, j)]:
            forms.append(f)
            xs.append(inst.inputs[i])
    res = lp_solve(build_lp_pairwise(forms, xs, eps))
    if res.status == "optimal":
        value = max(value, res.value)
    return value


def conjunction_certificate(ctx, subset, targets, cross_forms, lam):
    """``>= 0`` iff the members provably cannot all be misclassified together.

    A member is misclassified when any of its clauses fails, so every tuple of
    clauses is checked; the greedy target tuple goes first.  Early exit on the
    first tuple that cannot be certified, whose value is then returned.
    """
    inst = ctx.instance
    ms = [inst.clauses[i].m for i in subset]
    pools = {}
    for i in subset:
        for j in range(inst.clauses[i].m):
            pools[(i, j)] = [ctx.heuristic_forms(i)[j], cross_forms[(i, j)]]
    for i, j in zip(subset, targets):
        pools[(i, j)].append(ctx.individual_form(i, j))
    if math.prod(ms) > ctx.config.max_tuples:
        # too many tuples: fall back to the single-execution argument
        return max(min(max(concretize(f, inst.inputs[i], inst.epsilon, inst.norm_p) for f in pools[(i, j)])
                       for j in range(inst.clauses[i].m)) for i in subset)
    tuples = [tuple(targets)] + [t for t in itertools.product(*[range(m) for m in ms]) if t != tuple(targets)]
    worst = math.inf
    for tup in tuples:
        worst = min(worst, _tuple_value(ctx, subset, tup, pools, cross_forms, lam))
        if worst < 0.0:
            break
    return worst


def refine_cross(net, instance, subset, config=None, ctx=None):
    """Jointly refine the members of ``subset`` and return the best dual point found."""
    subset = tuple(int(i) for i in subset)
    if not subset:
        raise ValueError("empty subset")
    ctx = ctx or RefineContext(net, instance, config)
    for i in subset:
        if min(ctx.heuristic_values(i)) >= 0.0:
            raise ValueError(f"execution {i} is already verified individually")
    targets = select_clause_targets(net, instance, subset, ctx)
    n = len(subset)
    if n == 1:
        value, alpha, history = ctx.individual(subset[0], targets[0])
        best = (value, {subset[0]: alpha}, np.ones(1))
    else:
        value, alphas, lam, history = _optimize(ctx, subset, targets)
        best = (value, alphas, lam)
        indiv = {i: ctx.individual(i, j) for i, j in zip(subset, targets)}
        one_hot_alphas = {i: indiv[i][1] for i in subset}
        for r, i in enumerate(subset):
            if indiv[i][0] > best[0]:
                best = (indiv[i][0], one_hot_alphas, np.eye(n)[r])
    bound, alphas, lam = best
    forms = {}
    for i in subset:
        for j, f in enumerate(clause_forms(net, ctx.cache(i), instance.clauses[i].rows, alphas[i])):
            forms[(i, j)] = f
    certified = conjunction_certificate(ctx, subset, targets, forms, lam)
    return RefinementResult(subset, targets, float(bound), DualPoint(alphas, lam), forms, float(certified),
                            history)


def schedule_subsets(scores, k0, k1):
    """All non-empty subsets of size <= k1 of the k0 highest-scoring executions.

    ``scores`` maps execution -> s_i.  Ties in score go to the lower index;
    subsets come out by size, then lexicographically.
    """
    if k0 < 1 or k1 < 1:
        raise ValueError("k0 and k1 must be positive")
    ranked = sorted(scores, key=lambda i: (-scores[i], i))
    pool = sorted(ranked[:k0])
    out = []
    for size in range(1, min(k1, len(pool)) + 1):
        out.extend(itertools.combinations(pool, size))
    return out


def count_bound_from_proofs(k, verified_count, unverified, safe_subsets):
    """Sound k-UAP count from subsets proved not to be jointly misclassifiable.

    The adversary may misclassify any set of unverified executions that
    contains no proved subset; the largest such set is found exhaustively.
    """
    unverified = set(unverified)
    safe = [frozenset(s) for s in safe_subsets]
    for s in safe:
        if not s or not s <= unverified:
            raise ValueError(f"safe subset {sorted(s)} is empty or contains non-unverified executions")
    if verified_count + len(unverified) > k:
        raise ValueError("verified and unverified executions exceed k")
    pool = sorted(set().union(*safe)) if safe else []
    if len(pool) > 20:
        raise ValueError("proof pool too large for exhaustive search")
    pos = {i: b for b, i in enumerate(pool)}
    masks = [sum(1 << pos[i] for i in s) for s in safe]
    largest = 0
    for A in range(1 << len(pool)):
        if all(A & m != m for m in masks):
            largest = max(largest, bin(A).count("1"))
    T = len(unverified) - len(pool) + largest
    return verified_count + len(unverified) - T
