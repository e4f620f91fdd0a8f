"""Coupling matrices and the penalty pairs (f, delta) behind attention weights.

Each attention family is defined by a scalar penalty function delta of the
squared pairwise distance; its derivative f is the un-normalized attention
score. Valid squared distances lie in [0, 4] (unit-norm embeddings).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, ParameterError
from .graphs import Graph, normalized_adjacency
from .numerics import as_matrix, row_norms

log = logging.getLogger(__name__)

PENALTY_KINDS = ("simple", "advanced", "softmax", "quadratic")
STATIC_FAMILIES = ("identity", "all_one", "gcn_sym", "gin")
ATTENTION_FAMILIES = ("attention", "gat_masked")
COUPLING_FAMILIES = STATIC_FAMILIES + ATTENTION_FAMILIES

Z_SQ_MAX = 4.0
_DOMAIN_SLACK = 1e-9


@dataclass(frozen=True)
class PenaltyFamily:
    kind: str = "simple"
    dim_scale: float = 1.0  # d in the softmax family's exp(1/sqrt(d)) factor

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ParameterError(f"unknown penalty kind {self.kind!r}")
        if self.dim_scale <= 0:
            raise ParameterError("dim_scale must be positive")


def _check_domain(z_sq: float) -> float:
    z_sq = float(z_sq)
    if not (-_DOMAIN_SLACK <= z_sq <= Z_SQ_MAX + _DOMAIN_SLACK):
        raise DomainError(f"z_sq={z_sq} outside [0, {Z_SQ_MAX}]")
    return min(max(z_sq, 0.0), Z_SQ_MAX)


def penalty_f(p: PenaltyFamily, z_sq: float) -> float:
    """Un-normalized attention score f(z^2), the derivative of delta."""
    u = _check_domain(z_sq)
    if p.kind == "simple":
        return 2.0 - 0.5 * u
    if p.kind == "advanced":
        return 1.0 / (1.0 + math.exp(0.5 * u - 1.0))
    if p.kind == "softmax":
        return math.exp(1.0 - 0.5 * u) * math.exp(1.0 / math.sqrt(p.dim_scale))
    return 1.0  # quadratic: delta(u) = u


def penalty_delta(p: PenaltyFamily, z_sq: float) -> float:
    """Penalty delta(z^2); the softmax family is the antiderivative of f
    anchored at delta(0) = 0."""
    u = _check_domain(z_sq)
    if p.kind == "simple":
        return 2.0 * u - 0.25 * u * u
    if p.kind == "advanced":
        return u - 2.0 * math.log(math.exp(0.5 * u - 1.0) + 1.0)
    if p.kind == "softmax":
        scale = math.exp(1.0 / math.sqrt(p.dim_scale))
        return 2.0 * scale * (math.e - math.exp(1.0 - 0.5 * u))
    return u


def penalty_delta_array(p: PenaltyFamily, z_sq: np.ndarray) -> np.ndarray:
    """Vectorized penalty_delta over an array of squared distances."""
    u = np.asarray(z_sq, dtype=np.float64)
    if np.any(u < -_DOMAIN_SLACK) or np.any(u > Z_SQ_MAX + _DOMAIN_SLACK):
        raise DomainError(f"z_sq values outside [0, {Z_SQ_MAX}]")
    u = np.clip(u, 0.0, Z_SQ_MAX)
    if p.kind == "simple":
        return 2.0 * u - 0.25 * u * u
    if p.kind == "advanced":
        return u - 2.0 * np.log(np.exp(0.5 * u - 1.0) + 1.0)
    if p.kind == "softmax":
        scale = math.exp(1.0 / math.sqrt(p.dim_scale))
        return 2.0 * scale * (math.e - np.exp(1.0 - 0.5 * u))
    return u


def penalty_f_range(p: PenaltyFamily) -> tuple[float, float]:
    """Range of f over the valid interval (f is non-increasing)."""
    return penalty_f(p, Z_SQ_MAX), penalty_f(p, 0.0)


def penalty_conjugate(p: PenaltyFamily, omega: float, tol: float = 1e-10) -> float:
    """Concave conjugate delta~(omega) = inf_{y in [0,4]} (omega*y - delta(y)).

    Closed form for the simple family; bracketed golden-section search
    otherwise (the objective is unimodal because f is monotone).
    """
    lo, hi = penalty_f_range(p)
    if not (lo - 1e-9 <= omega <= hi + 1e-9):
        raise DomainError(f"omega={omega} outside the range of f [{lo}, {hi}]")
    if p.kind == "simple":
        y = 2.0 * (2.0 - omega)
        y = min(max(y, 0.0), Z_SQ_MAX)
        return omega * y - penalty_delta(p, y)

    def objective(y):
        return omega * y - penalty_delta(p, y)

    a, b = 0.0, Z_SQ_MAX
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = objective(d)
    y = 0.5 * (a + b)
    return min(objective(y), objective(0.0), objective(Z_SQ_MAX))


@dataclass(frozen=True)
class CouplingSpec:
    family: str
    penalty: PenaltyFamily | None = None
    graph_mask: Graph | None = None

    def __post_init__(self):
        if self.family not in COUPLING_FAMILIES:
            raise ParameterError(f"unknown coupling family {self.family!r}")
        if self.family in ATTENTION_FAMILIES:
            if self.penalty is None:
                raise ParameterError(f"{self.family} requires a penalty family")
        elif self.penalty is not None:
            raise ParameterError(f"{self.family} does not take a penalty")
        if self.family == "gat_masked" and self.graph_mask is None:
            raise ParameterError("gat_masked requires graph_mask")

    @property
    def is_attention(self) -> bool:
        return self.family in ATTENTION_FAMILIES


def attention_scores(p: PenaltyFamily, z: np.ndarray) -> np.ndarray:
    """Pairwise scores f(||z_i - z_j||^2) via the dot-product identity
    ||z_i - z_j||^2 = 2 - 2 z_i.z_j, valid for unit-norm rows."""
    z = as_matrix(z)
    gram = z @ z.T
    z_sq = np.clip(2.0 - 2.0 * gram, 0.0, Z_SQ_MAX)
    if p.kind == "simple":
        return 2.0 - 0.5 * z_sq
    if p.kind == "advanced":
        return 1.0 / (1.0 + np.exp(0.5 * z_sq - 1.0))
    if p.kind == "softmax":
        return np.exp(1.0 - 0.5 * z_sq) * math.exp(1.0 / math.sqrt(p.dim_scale))
    return np.ones_like(z_sq)


def build_coupling(spec: CouplingSpec, z: np.ndarray | None = None,
                   g: Graph | None = None) -> np.ndarray:
    """Coupling matrix for one layer.

    Static families delegate to normalized_adjacency; attention families
    row-normalize the pairwise scores of the current embeddings, optionally
    masked to graph edges plus self-loops (gat_masked).
    """
    if spec.family in STATIC_FAMILIES:
        if spec.family in ("identity", "all_one"):
            if g is None and z is None:
                raise ParameterError(f"{spec.family} needs a graph or embeddings for N")
            n = g.n if g is not None else as_matrix(z).shape[0]
            return normalized_adjacency(Graph(n=n, edges=()), spec.family)
        if g is None:
            raise ParameterError(f"{spec.family} requires a graph")
        mode = "sym" if spec.family == "gcn_sym" else "gin"
        return normalized_adjacency(g, mode)

    z = as_matrix(z)
    norms = row_norms(z)
    if np.max(np.abs(norms - 1.0)) > 1e-6:
        raise ContractError("attention couplings require unit-norm embedding rows")
    omega = attention_scores(spec.penalty, z)
    if spec.family == "gat_masked":
        mask_graph = spec.graph_mask if spec.graph_mask is not None else g
        mask = mask_graph.adjacency() + np.eye(mask_graph.n)
        omega = omega * mask
    sums = omega.sum(axis=1)
    dead = sums <= 0.0
    if np.any(dead):
        log.warning("build_coupling: %d degenerate row(s) fell back to self-loops",
                    int(dead.sum()))
        omega[dead, :] = 0.0
        omega[dead, dead] = 1.0
        sums = omega.sum(axis=1)
    return omega / sums[:, None]


def penalty_landscape(p: PenaltyFamily, step: float = 0.01) -> np.ndarray:
    """Table of (z_sq, f, delta) rows over [0, 4]."""
    grid = np.arange(0.0, Z_SQ_MAX + step / 2, step)
    rows = [(u, penalty_f(p, u), penalty_delta(p, u)) for u in grid]
    return np.array(rows)


def write_penalty_landscape(path, p: PenaltyFamily, step: float = 0.01) -> None:
    table = penalty_landscape(p, step)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("z_sq,f,delta\n")
        for u, f_val, d_val in table:
            fh.write(f"{u:.2f},{f_val:.17g},{d_val:.17g}\n")
