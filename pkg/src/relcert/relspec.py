"""Relational property instances: k-UAP accuracy and worst-case hamming distance."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PropertyError
from .model import clause_matrix, forward

KUAP = "kuap"
HAMMING = "hamming"


def parse_norm(value):
    """Accept ``"inf"``, ``math.inf`` or a real ``p >= 1``."""
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "linf", "infinity"):
            return math.inf
        try:
            value = float(value)
        except ValueError as exc:
            raise PropertyError(f"unrecognised norm {value!r}") from exc
    p = float(value)
    if not p >= 1.0:
        raise PropertyError(f"norm p must be >= 1, got {p}")
    return p


@dataclass(frozen=True)
class PropertyInstance:
    kind: str
    inputs: np.ndarray  # (k, n0)
    labels: tuple
    epsilon: float
    norm_p: float
    clauses: tuple

    @property
    def k(self):
        return len(self.labels)

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def restrict(self, k):
        """First ``k`` executions as a new instance."""
        if not 1 <= k <= self.k:
            raise PropertyError(f"k={k} outside 1..{self.k}")
        return PropertyInstance(self.kind, self.inputs[:k], self.labels[:k], self.epsilon,
                                self.norm_p, self.clauses[:k])

    def with_epsilon(self, epsilon):
        return PropertyInstance(self.kind, self.inputs, self.labels, float(epsilon), self.norm_p, self.clauses)


def _check_common(inputs, labels, epsilon, norm_p):
    try:
        x = np.array(inputs, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise PropertyError(f"inputs must be equal-length numeric vectors: {exc}") from exc
    if x.ndim != 2 or x.shape[0] < 1:
        raise PropertyError("inputs must be a non-empty list of equal-length vectors")
    if not np.all(np.isfinite(x)):
        raise PropertyError("inputs contain non-finite values")
    try:
        labels = tuple(int(v) for v in labels)
    except (TypeError, ValueError) as exc:
        raise PropertyError(f"labels must be integers: {exc}") from exc
    if len(labels) != x.shape[0]:
        raise PropertyError(f"{x.shape[0]} inputs but {len(labels)} labels")
    eps = float(epsilon)
    if not (eps >= 0.0 and math.isfinite(eps)):
        raise PropertyError(f"epsilon must be a finite non-negative number, got {epsilon}")
    x.setflags(write=False)
    return x, labels, eps, parse_norm(norm_p)


def build_kuap(inputs, labels, epsilon, norm_p, n_outputs):
    x, labels, eps, p = _check_common(inputs, labels, epsilon, norm_p)
    try:
        clauses = tuple(clause_matrix(lab, n_outputs) for lab in labels)
    except ValueError as exc:
        raise PropertyError(str(exc)) from exc
    return PropertyInstance(KUAP, x, labels, eps, p, clauses)


def build_hamming(inputs, labels, epsilon, norm_p):
    x, labels, eps, p = _check_common(inputs, labels, epsilon, norm_p)
    bad = [lab for lab in labels if lab not in (0, 1)]
    if bad:
        raise PropertyError(f"hamming labels must be binary, got {bad[0]}")
    clauses = tuple(clause_matrix(lab, 2) for lab in labels)
    return PropertyInstance(HAMMING, x, labels, eps, p, clauses)


def build_instance(kind, inputs, labels, epsilon, norm_p, n_outputs):
    if kind == KUAP:
        return build_kuap(inputs, labels, epsilon, norm_p, n_outputs)
    if kind == HAMMING:
        if n_outputs != 2:
            raise PropertyError(f"hamming needs a binary classifier, network has {n_outputs} outputs")
        return build_hamming(inputs, labels, epsilon, norm_p)
    raise PropertyError(f"unknown property kind {kind!r}")


def load_instance(path, kind, n_outputs, epsilon=None, norm_p=None):
    """Read the data JSON; explicit ``epsilon``/``norm_p`` override the file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise PropertyError(f"data file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise PropertyError(f"{path}: invalid JSON ({exc})") from exc
    try:
        inputs, labels = data["inputs"], data["labels"]
    except (KeyError, TypeError) as exc:
        raise PropertyError(f"{path}: missing key {exc}") from exc
    eps = data.get("epsilon") if epsilon is None else epsilon
    norm = data.get("norm", "inf") if norm_p is None else norm_p
    if eps is None:
        raise PropertyError(f"{path}: no epsilon given")
    return build_instance(kind, inputs, labels, eps, norm, n_outputs)


def correct_mask(instance, outputs):
    """Per-execution clause satisfaction for outputs of shape (..., k, n_l)."""
    rows = np.stack([c.rows for c in instance.clauses])  # (k, m, n_l)
    margins = np.einsum("...kn,kmn->...km", outputs, rows)
    return np.all(margins >= 0.0, axis=-1)


def mu(instance, delta, net):
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (instance.input_dim,):
        raise ValueError(f"delta has shape {delta.shape}, expected ({instance.input_dim},)")
    y = forward(net, instance.inputs + delta)
    return int(correct_mask(instance, y).sum())
