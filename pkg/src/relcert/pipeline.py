"""End-to-end relational verification: elimination, subset refinement, MILP, counting."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .crown import concretize, margin_upper_bound
from .errors import DominanceViolation, PropertyError, SolverError
from .milp import build_milp, milp_solve
from .model import load_network
from .refine import RefineConfig, RefineContext, count_bound_from_proofs, refine_cross, schedule_subsets
from .relspec import HAMMING, KUAP, load_instance, parse_norm

METHODS = ("nonrel", "io", "indiv", "indiv-milp", "cross", "racoon")

VERIFIED = "verified-individually"
COVERED = "covered-by-subset"
UNVERIFIED = "unverified"


@dataclass
class RunConfig:
    network: str
    data: str
    property: str = KUAP
    epsilon: float | None = None
    norm: str | float | None = None
    k: int | None = None
    k0: int = 6
    k1: int = 4
    adam_iters: int = 20
    lr_alpha: float = 0.1
    lr_lambda: float = 0.1
    method: str = "racoon"
    seed: int = 0
    out: str | None = None
    csv: str | None = None
    timings: bool = True
    elimination: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise PropertyError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.property not in (KUAP, HAMMING):
            raise PropertyError(f"unknown property {self.property!r}")
        if not self.k0 >= self.k1 >= 1:
            raise PropertyError(f"need k0 >= k1 >= 1, got k0={self.k0}, k1={self.k1}")

    def refine_config(self):
        return RefineConfig(adam_iters=self.adam_iters, lr_alpha=self.lr_alpha, lr_lambda=self.lr_lambda,
                            k0=self.k0, k1=self.k1, seed=self.seed)


@dataclass
class VerificationReport:
    method: str
    property: str
    k: int
    epsilon: float
    bound: int
    executions: list
    subsets: list = field(default_factory=list)
    milp: dict | None = None
    timings: dict = field(default_factory=dict)

    def to_dict(self, timings=True):
        out = {"method": self.method, "property": self.property, "k": self.k, "epsilon": self.epsilon,
               "bound": self.bound, "executions": self.executions, "subsets": self.subsets, "milp": self.milp}
        if timings:
            out["timings_sec"] = {k: round(v, 6) for k, v in self.timings.items()}
        return out


def verify_individual(net, instance, i, ctx=None):
    """``(s_i, verified, forms)`` from the heuristic-slope backward bounds."""
    if not 0 <= i < instance.k:
        raise IndexError(f"execution {i} outside 0..{instance.k - 1}")
    ctx = ctx or RefineContext(net, instance)
    try:
        values = ctx.heuristic_values(i)
    except ValueError as exc:
        raise ValueError(f"execution {i}: {exc}") from exc
    s_i = float(min(values))
    return s_i, s_i >= 0.0, list(ctx.heuristic_forms(i))


class _Clock:
    def __init__(self):
        self.totals = {}

    def __call__(self, phase):
        clock = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                clock.totals[phase] = clock.totals.get(phase, 0.0) + time.perf_counter() - self.t0

        return _Span()


class _Run:
    """State shared by all methods on one instance (bounds, refinements, forms)."""

    def __init__(self, net, instance, config):
        self.net = net
        self.instance = instance
        self.ctx = RefineContext(net, instance, config)
        self.config = config
        self.clock = _Clock()
        with self.clock("bounds"):
            self.scores = [verify_individual(net, instance, i, self.ctx)[0] for i in range(instance.k)]
        self.verified = {i for i, s in enumerate(self.scores) if s >= 0.0}
        self.unverified = sorted(set(range(instance.k)) - self.verified)
        self._subsets = None
        self._upper = {}

    def value(self, i, form):
        inst = self.instance
        return concretize(form, inst.inputs[i], inst.epsilon, inst.norm_p)

    def individual_verified(self):
        out = set()
        with self.clock("refine"):
            for i in self.unverified:
                if all(self.ctx.individual(i, j)[0] >= 0.0 for j in range(self.instance.clauses[i].m)):
                    out.add(i)
        return out

    def subsets(self):
        if self._subsets is None:
            scores = {i: self.scores[i] for i in self.unverified}
            with self.clock("refine"):
                self._subsets = [refine_cross(self.net, self.instance, s, ctx=self.ctx)
                                 for s in schedule_subsets(scores, self.config.k0, self.config.k1)]
        return self._subsets

    def margin_upper(self, i, j):
        if (i, j) not in self._upper:
            self._upper[(i, j)] = margin_upper_bound(self.net, self.ctx.cache(i), self.instance.clauses[i].rows[j])
        return self._upper[(i, j)]

    def forms(self, individual=False, subsets=False):
        approx = {}
        for i in range(self.instance.k):
            for j, f in enumerate(self.ctx.heuristic_forms(i)):
                approx[(i, j)] = [f]
        if individual:
            with self.clock("refine"):
                for i in self.unverified:
                    for j in range(self.instance.clauses[i].m):
                        approx[(i, j)].append(self.ctx.individual_form(i, j))
        if subsets:
            for res in self.subsets():
                for key, f in res.forms.items():
                    approx[key].append(f)
        return approx

    def certified_by_forms(self, approx):
        return {i for i in self.unverified
                if all(max(self.value(i, f) for f in approx[(i, j)]) >= 0.0
                       for j in range(self.instance.clauses[i].m))}

    def solve(self, approx, eliminated):
        inst = self.instance
        if not math.isinf(inst.norm_p):
            raise SolverError("MILP-based methods require the infinity norm")
        active = [i for i in range(inst.k) if i not in eliminated]
        uppers = {(i, j): self.margin_upper(i, j) for i in active for j in range(inst.clauses[i].m)}
        with self.clock("milp"):
            model = build_milp(inst, approx, active, uppers)
            if not active:
                return float(model.lp.offset), np.zeros(inst.input_dim)
            res = milp_solve(model)
        if res.status != "optimal":
            raise SolverError(f"MILP ended with status {res.status}")
        return res.objective, res.witness_delta


def _to_property(instance, correct_count):
    return correct_count if instance.kind == KUAP else instance.k - correct_count


def _statuses(run, covered):
    out = []
    for i, s in enumerate(run.scores):
        status = VERIFIED if i in run.verified else COVERED if i in covered else UNVERIFIED
        out.append({"index": i, "status": status, "s_i": float(s)})
    return out


def _run_method(run, method, elimination=True):
    inst = run.instance
    covered = set()
    subsets = []
    milp = None
    if method == "nonrel":
        bound = _to_property(inst, len(run.verified))
    elif method == "indiv":
        covered = run.individual_verified()
        bound = _to_property(inst, len(run.verified) + len(covered))
    elif method == "cross":
        results = run.subsets()
        safe = [r.subset for r in results if r.verified]
        covered = set().union(*safe) if safe else set()
        count = count_bound_from_proofs(inst.k, len(run.verified), run.unverified, safe)
        bound = _to_property(inst, count)
        subsets = results
    elif method in ("io", "indiv-milp", "racoon"):
        approx = run.forms(individual=method != "io", subsets=method == "racoon")
        if method == "racoon":
            subsets = run.subsets()
            covered = set().union(*[r.subset for r in subsets if r.verified])
        if elimination:
            certified = run.certified_by_forms(approx)
            covered |= certified
            eliminated = run.verified | certified
        else:
            eliminated = set()
        objective, witness = run.solve(approx, eliminated)
        bound = int(round(objective))
        milp = {"objective": bound, "witness_delta": [float(v) for v in witness]}
    else:
        raise PropertyError(f"unknown method {method!r}")
    report = VerificationReport(method, inst.kind, inst.k, inst.epsilon, int(bound), _statuses(run, covered),
                                [{"members": list(r.subset), "clause_targets": list(r.clause_targets),
                                  "bound": float(r.bound)} for r in subsets], milp,
                                dict(run.clock.totals))
    return report


def run_instance(net, instance, method="racoon", config=None, elimination=True):
    run = _Run(net, instance, config or RefineConfig())
    return _run_method(run, method, elimination)


def run_all(net, instance, config=None, methods=METHODS, elimination=True):
    """Every requested method on one shared state; MILP methods need p = inf."""
    run = _Run(net, instance, config or RefineConfig())
    return {m: _run_method(run, m, elimination) for m in methods}


def check_dominance(reports, kind):
    """Raise unless racoon >= io, racoon >= indiv-milp >= indiv >= nonrel (reversed for hamming)."""
    b = {m: r.bound for m, r in reports.items()}
    chain = [("racoon", "io"), ("racoon", "indiv-milp"), ("indiv-milp", "indiv"), ("indiv", "nonrel")]
    for hi, lo in chain:
        if hi not in b or lo not in b:
            continue
        ok = b[hi] >= b[lo] if kind == KUAP else b[hi] <= b[lo]
        if not ok:
            raise DominanceViolation(f"{hi} bound {b[hi]} vs {lo} bound {b[lo]} breaks the method ordering")


def load_inputs(config):
    net = load_network(config.network)
    norm = None if config.norm is None else parse_norm(config.norm)
    instance = load_instance(config.data, config.property, net.output_dim, config.epsilon, norm)
    if config.k is not None:
        instance = instance.restrict(config.k)
    return net, instance


def run(config, check=False):
    """Load files and run ``config.method``; with ``check`` every method runs and the ordering is asserted."""
    net, instance = load_inputs(config)
    if config.method in ("io", "indiv-milp", "racoon") and not math.isinf(instance.norm_p):
        raise SolverError(f"method {config.method} needs the infinity norm, got p={instance.norm_p}")
    if check:
        methods = METHODS if math.isinf(instance.norm_p) else ("nonrel", "indiv", "cross")
        reports = run_all(net, instance, config.refine_config(), methods, config.elimination)
        check_dominance(reports, instance.kind)
        return reports[config.method]
    return run_instance(net, instance, config.method, config.refine_config(), config.elimination)
