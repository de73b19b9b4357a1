"""Dense two-phase simplex, best-first branch-and-bound, and the relational encodings.

The LP solver works on a dense tableau with Bland's rule.  Problem sizes here
are tens of variables, so there is no presolve, no sparse algebra and no cuts.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .crown import concretize, concretize_upper
from .errors import SolverError

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-8
INT_TOL = 1e-6
MAX_PIVOTS = 100_000


@dataclass
class LinearProgram:
    """``sense c @ x + offset`` subject to row constraints and box bounds."""

    objective: np.ndarray
    sense: str = "min"
    rows: list = field(default_factory=list)  # (coeffs, rel, rhs), rel in {"<=", ">=", "="}
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    offset: float = 0.0
    names: list | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=np.float64)
        n = self.objective.shape[0]
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=np.float64)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=np.float64)
        if self.sense not in ("min", "max"):
            raise ValueError(f"unknown sense {self.sense!r}")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bound vectors must match the objective length")
        if self.names is None:
            self.names = [f"x{j}" for j in range(n)]

    @property
    def n_vars(self):
        return self.objective.shape[0]

    def add_row(self, coeffs, rel, rhs):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (self.n_vars,):
            raise ValueError(f"row has {coeffs.shape[0]} coefficients, LP has {self.n_vars} variables")
        if rel not in ("<=", ">=", "="):
            raise ValueError(f"unknown relation {rel!r}")
        if not math.isfinite(rhs):
            raise ValueError("right-hand side must be finite")
        self.rows.append((coeffs, rel, float(rhs)))

    def copy(self):
        return LinearProgram(self.objective.copy(), self.sense, list(self.rows), self.lower.copy(),
                             self.upper.copy(), self.offset, list(self.names))


@dataclass
class LPResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    value: float = math.nan
    x: np.ndarray | None = None


def _pivot(T, r, e):
    T[r] /= T[r, e]
    col = T[:, e].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run_simplex(T, basis, n_cols):
    """Bland's rule on tableau ``T`` whose last row holds reduced costs."""
    for _ in range(MAX_PIVOTS):
        cost = T[-1, :n_cols]
        entering = np.flatnonzero(cost < -PIVOT_TOL)
        if entering.size == 0:
            return "optimal"
        e = entering[0]
        col = T[:-1, e]
        pos = col > PIVOT_TOL
        if not pos.any():
            return "unbounded"
        ratios = np.full(col.shape, np.inf)
        ratios[pos] = T[:-1, -1][pos] / col[pos]
        rmin = ratios.min()
        ties = np.flatnonzero(pos & (ratios <= rmin + PIVOT_TOL * (1.0 + abs(rmin))))
        r = ties[np.argmin(basis[ties])]
        _pivot(T, r, e)
        basis[r] = e
    return "iteration_limit"


def _standard_form(lp):
    """Map to ``min c@y, A@y = b, y >= 0``; returns a recovery function too."""
    n = lp.n_vars
    lo, hi = lp.lower, lp.upper
    if np.any(lo > hi + FEAS_TOL) or np.any(lo == np.inf) or np.any(hi == -np.inf):
        return None
    # x = const + M @ y
    const = np.zeros(n)
    cols = []
    extra_rows = []  # (std column, bound)
    for j in range(n):
        if math.isfinite(lo[j]) and math.isfinite(hi[j]) and hi[j] - lo[j] <= FEAS_TOL:
            const[j] = lo[j]
        elif math.isfinite(lo[j]):
            const[j] = lo[j]
            cols.append((j, 1.0))
            if math.isfinite(hi[j]):
                extra_rows.append((len(cols) - 1, hi[j] - lo[j]))
        elif math.isfinite(hi[j]):
            const[j] = hi[j]
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    M = np.zeros((n, len(cols)))
    for k, (j, s) in enumerate(cols):
        M[j, k] = s
    n_y = len(cols)
    A_rows, b, slack_sign = [], [], []
    for coeffs, rel, rhs in lp.rows:
        A_rows.append(coeffs @ M)
        b.append(rhs - coeffs @ const)
        slack_sign.append({"<=": 1.0, ">=": -1.0, "=": 0.0}[rel])
    for k, bound in extra_rows:
        row = np.zeros(n_y)
        row[k] = 1.0
        A_rows.append(row)
        b.append(bound)
        slack_sign.append(1.0)
    n_slack = sum(1 for s in slack_sign if s != 0.0)
    A = np.zeros((len(A_rows), n_y + n_slack))
    k = n_y
    for i, row in enumerate(A_rows):
        A[i, :n_y] = row
        if slack_sign[i] != 0.0:
            A[i, k] = slack_sign[i]
            k += 1
    b = np.asarray(b, dtype=np.float64)
    sign = lp.objective if lp.sense == "min" else -lp.objective
    c = np.zeros(A.shape[1])
    c[:n_y] = sign @ M

    def recover(y):
        return const + M @ y[:n_y]

    return A, b, c, recover


def lp_solve(lp):
    """Solve ``lp`` exactly up to tolerance; never raises on infeasible/unbounded."""
    std = _standard_form(lp)
    if std is None:
        return LPResult("infeasible")
    A, b, c, recover = std
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    if m == 0:
        if np.any(c < -PIVOT_TOL):
            return LPResult("unbounded")
        x = recover(np.zeros(n))
        return LPResult("optimal", float(lp.objective @ x + lp.offset), x)
    # phase 1 with one artificial per row
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = np.arange(n, n + m)
    status = _run_simplex(T, basis, n + m)
    if status == "iteration_limit":
        return LPResult(status)
    if -T[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max()):
        return LPResult("infeasible")
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] >= n:
            candidates = np.flatnonzero(np.abs(T[r, :n]) > PIVOT_TOL)
            if candidates.size:
                _pivot(T, r, candidates[0])
                basis[r] = candidates[0]
            else:
                keep[r] = False
    T = np.vstack([T[:m][keep][:, list(range(n)) + [-1]], np.zeros((1, n + 1))])
    basis = basis[keep]
    T[-1, :n] = c
    for r, j in enumerate(basis):
        T[-1] -= c[j] * T[r]
    status = _run_simplex(T, basis, n)
    if status != "optimal":
        return LPResult(status)
    y = np.zeros(n)
    y[basis] = T[:-1, -1]
    x = recover(y)
    return LPResult("optimal", float(lp.objective @ x + lp.offset), x)


def build_lp_pairwise(forms, centers, epsilon, norm_p=math.inf):
    """``min t`` over ``|d|_inf <= eps`` with ``L_i @ (x_i + d) + b_i <= t`` for each form.

    Variables are ``(d_1..d_n0, t)``.  The optimum is ``min_d max_i`` of the
    forms, so its sign decides whether a common violating perturbation exists.
    """
    if not math.isinf(norm_p):
        raise ValueError("the pairwise LP is only defined for the infinity norm")
    if not forms:
        raise ValueError("need at least one form")
    n0 = forms[0].L.shape[0]
    obj = np.zeros(n0 + 1)
    obj[-1] = 1.0
    lower = np.concatenate([np.full(n0, -epsilon), [-np.inf]])
    upper = np.concatenate([np.full(n0, epsilon), [np.inf]])
    names = [f"d{j}" for j in range(n0)] + ["t"]
    lp = LinearProgram(obj, "min", [], lower, upper, names=names)
    for form, x in zip(forms, centers, strict=True):
        row = np.append(form.L, -1.0)
        lp.add_row(row, "<=", -(float(form.L @ x) + form.b))
    return lp


@dataclass
class MilpModel:
    lp: LinearProgram
    binaries: list
    n_delta: int
    z_index: dict = field(default_factory=dict)  # execution -> variable
    s_index: dict = field(default_factory=dict)  # (execution, clause) -> variable
    integral_objective: bool = True

    @property
    def sense(self):
        return self.lp.sense


@dataclass
class MilpResult:
    status: str
    objective: float = math.nan
    witness_delta: np.ndarray | None = None
    x: np.ndarray | None = None
    nodes: int = 0


def build_milp(instance, approximations, unverified, margins_upper, kind=None):
    """Indicator MILP over a shared box perturbation.

    ``approximations[(i, j)]`` lists lower-bounding forms of clause ``j`` of
    execution ``i``; ``margins_upper[(i, j)]`` is a valid upper bound of the
    clause margin over the ball.  Executions outside ``unverified`` are counted
    as correct through the constant ``k - |I|``.
    """
    kind = instance.kind if kind is None else kind
    if not math.isinf(instance.norm_p):
        raise ValueError("MILP encodings support only the infinity norm")
    eps = instance.epsilon
    n0 = instance.input_dim
    I = sorted(unverified)
    names = [f"d{j}" for j in range(n0)]
    lower = [-eps] * n0
    upper = [eps] * n0
    o_index, z_index, s_index = {}, {}, {}
    U = {}
    for i in I:
        x = instance.inputs[i]
        for j in range(instance.clauses[i].m):
            forms = approximations.get((i, j), [])
            if not forms:
                raise ValueError(f"execution {i} clause {j}: no linear approximation available")
            u = max([0.0, float(margins_upper[(i, j)])] +
                    [concretize_upper(f, x, eps, instance.norm_p) for f in forms])
            U[(i, j)] = u
            o_index[(i, j)] = len(names)
            names.append(f"o{i}_{j}")
            lower.append(max(concretize(f, x, eps, instance.norm_p) for f in forms))
            upper.append(u)
    for i in I:
        z_index[i] = len(names)
        names.append(f"z{i}")
        lower.append(0.0)
        upper.append(1.0)
    for i in I:
        for j in range(instance.clauses[i].m):
            s_index[(i, j)] = len(names)
            names.append(f"s{i}_{j}")
            lower.append(0.0)
            upper.append(1.0)
    n = len(names)
    obj = np.zeros(n)
    k_bar = instance.k - len(I)
    if kind == "kuap":
        sense, offset = "min", float(k_bar)
        for i in I:
            obj[z_index[i]] = 1.0
    elif kind == "hamming":
        sense, offset = "max", float(len(I))
        for i in I:
            obj[z_index[i]] = -1.0
    else:
        raise ValueError(f"unknown property kind {kind!r}")
    lp = LinearProgram(obj, sense, [], np.array(lower), np.array(upper), offset, names)
    for i in I:
        x = instance.inputs[i]
        cover = np.zeros(n)
        cover[z_index[i]] = 1.0
        for j in range(instance.clauses[i].m):
            o = o_index[(i, j)]
            seen = set()
            for f in approximations[(i, j)]:
                key = (f.L.tobytes(), f.b)
                if key in seen:
                    continue
                seen.add(key)
                row = np.zeros(n)
                row[:n0] = f.L
                row[o] = -1.0
                lp.add_row(row, "<=", -(float(f.L @ x) + f.b))
            row = np.zeros(n)
            row[o] = 1.0
            row[s_index[(i, j)]] = U[(i, j)]
            lp.add_row(row, "<=", U[(i, j)])
            cover[s_index[(i, j)]] = 1.0
        lp.add_row(cover, ">=", 1.0)
    binaries = [z_index[i] for i in I] + [s_index[key] for key in sorted(s_index)]
    return MilpModel(lp, binaries, n0, z_index, s_index, True)


def milp_solve(model):
    """Best-first branch-and-bound over the model's binaries."""
    lp = model.lp
    maximize = lp.sense == "max"
    first_z = set(model.z_index.values())
    order = sorted(model.binaries, key=lambda v: (v not in first_z, v))
    root = lp.copy()
    for v in model.binaries:
        root.lower[v] = max(root.lower[v], 0.0)
        root.upper[v] = min(root.upper[v], 1.0)

    def key(value):
        return -value if maximize else value

    def prunable(bound, incumbent):
        if incumbent is None:
            return False
        if model.integral_objective:
            if maximize:
                return math.floor(bound + INT_TOL) <= incumbent
            return math.ceil(bound - INT_TOL) >= incumbent
        return key(bound) >= key(incumbent) - INT_TOL

    best = None
    best_x = None
    counter = 0
    nodes = 0
    res = lp_solve(root)
    if res.status == "unbounded":
        return MilpResult("unbounded")
    if res.status not in ("optimal", "infeasible"):
        raise SolverError(f"LP relaxation failed at root: {res.status}")
    heap = []
    if res.status == "optimal":
        heap.append((key(res.value), counter, root.lower, root.upper, res))
    while heap:
        _, _, lo, hi, res = heapq.heappop(heap)
        nodes += 1
        if prunable(res.value, best):
            continue
        frac = None
        for v in order:
            val = res.x[v]
            if abs(val - round(val)) > INT_TOL:
                frac = v
                break
        if frac is None:
            value = res.value
            if model.integral_objective:
                value = float(round(value))
            if best is None or key(value) < key(best):
                best, best_x = value, res.x
            continue
        branches = (1.0, 0.0) if maximize else (0.0, 1.0)
        for b in branches:
            child_lo, child_hi = lo.copy(), hi.copy()
            child_lo[frac] = child_hi[frac] = b
            child = LinearProgram(lp.objective, lp.sense, lp.rows, child_lo, child_hi, lp.offset, lp.names)
            cres = lp_solve(child)
            if cres.status == "optimal" and not prunable(cres.value, best):
                counter += 1
                heapq.heappush(heap, (key(cres.value), counter, child_lo, child_hi, cres))
            elif cres.status not in ("optimal", "infeasible"):
                raise SolverError(f"LP relaxation failed during branch-and-bound: {cres.status}")
    if best is None:
        return MilpResult("infeasible", nodes=nodes)
    return MilpResult("optimal", best, best_x[:model.n_delta].copy(), best_x, nodes)


def _fmt(v):
    return repr(float(v))


def dump_model(model_or_lp):
    """LP-file-like text: objective, constraints, bounds, binaries."""
    model = model_or_lp if isinstance(model_or_lp, MilpModel) else None
    lp = model.lp if model else model_or_lp
    names = lp.names

    def expr(coeffs):
        terms = [f"{'+' if c >= 0 else '-'} {_fmt(abs(c))} {names[j]}" for j, c in enumerate(coeffs) if c != 0]
        return " ".join(terms) if terms else "0"

    lines = ["Minimize" if lp.sense == "min" else "Maximize", f" obj: {expr(lp.objective)} + {_fmt(lp.offset)}",
             "Subject To"]
    for r, (coeffs, rel, rhs) in enumerate(lp.rows):
        lines.append(f" c{r}: {expr(coeffs)} {rel} {_fmt(rhs)}")
    lines.append("Bounds")
    for j, name in enumerate(names):
        lines.append(f" {_fmt(lp.lower[j])} <= {name} <= {_fmt(lp.upper[j])}")
    if model and model.binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(names[v] for v in model.binaries))
    lines.append("End")
    return "\n".join(lines) + "\n"
