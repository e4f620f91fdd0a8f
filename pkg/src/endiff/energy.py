"""Energy functionals and the descent / bound / over-smoothing audits.

Pairwise sums follow the all-ordered-pairs convention (i and j both range
over all nodes, diagonal included), which matches the row-normalization
denominators of the attention couplings. For a symmetric coupling the
weighted pairwise term equals 2 * tr(Z^T (D - S) Z).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .coupling import (CouplingSpec, PenaltyFamily, attention_scores,
                       penalty_delta_array)
from .diffusion import Trajectory
from .errors import ContractError, DimensionError, ParameterError
from .graphs import Graph, normalized_adjacency
from .numerics import as_matrix, laplacian, laplacian_spectral_bracket, row_l2_normalize

DESCENT_SLACK = 1e-9
BOUND_REL_SLACK = 1e-8


def _pairwise_sq_dists(z: np.ndarray) -> np.ndarray:
    gram = z @ z.T
    sq = np.diag(gram)
    return np.maximum(sq[:, None] + sq[None, :] - 2.0 * gram, 0.0)


def _check_same_shape(z: np.ndarray, z_prev: np.ndarray) -> None:
    if z.shape != z_prev.shape:
        raise DimensionError(f"shape mismatch: {z.shape} vs {z_prev.shape}")


def quadratic_energy(z, z_prev, s, lam: float) -> float:
    """||Z - Z_prev||_F^2 + lam * sum_ij s_ij ||z_i - z_j||^2.

    The pairwise term is evaluated through the trace identity
    2 * lam * tr(Z^T (D - S) Z); the double-loop form is kept as the test
    oracle.
    """
    z = as_matrix(z)
    z_prev = as_matrix(z_prev)
    s = as_matrix(s)
    _check_same_shape(z, z_prev)
    if s.shape != (z.shape[0], z.shape[0]):
        raise DimensionError(f"coupling {s.shape} does not match {z.shape}")
    if lam < 0:
        raise ParameterError("lam must be >= 0")
    local = float(np.sum((z - z_prev) ** 2))
    # the distance sum only sees the symmetric part of s
    sym = 0.5 * (s + s.T)
    smooth = 2.0 * lam * float(np.trace(z.T @ laplacian(sym) @ z))
    return local + smooth


def source_energy(z, z_prev, s, lam: float, eta: float, h) -> float:
    """Quadratic energy with the anchor shifted to Z_prev + eta * H."""
    z_prev = as_matrix(z_prev)
    h = as_matrix(h)
    _check_same_shape(z_prev, h)
    return quadratic_energy(z, z_prev + eta * h, s, lam)


def regularized_energy(z, z_prev, penalty: PenaltyFamily, lam: float) -> float:
    """||Z - Z_prev||_F^2 + lam * sum_ij delta(||z_i - z_j||^2)."""
    z = as_matrix(z)
    z_prev = as_matrix(z_prev)
    _check_same_shape(z, z_prev)
    d2 = _pairwise_sq_dists(z)
    local = float(np.sum((z - z_prev) ** 2))
    pen = float(np.sum(penalty_delta_array(penalty, d2)))
    return local + lam * pen


def surrogate_energy(z, z_prev, omega, penalty: PenaltyFamily, lam: float) -> float:
    """Variational upper bound: the pairwise penalty is replaced by
    omega_ij * ||z_i - z_j||^2 - delta~(omega_ij) with the concave
    conjugate delta~."""
    from .coupling import penalty_conjugate

    z = as_matrix(z)
    z_prev = as_matrix(z_prev)
    omega = as_matrix(omega)
    _check_same_shape(z, z_prev)
    if omega.shape != (z.shape[0], z.shape[0]):
        raise DimensionError(f"omega {omega.shape} does not match {z.shape}")
    d2 = _pairwise_sq_dists(z)
    local = float(np.sum((z - z_prev) ** 2))
    pair = float(np.sum(omega * d2))
    conj = sum(penalty_conjugate(penalty, w) for w in omega.ravel())
    return local + lam * (pair - conj)


def graph_regularized_energy(z, z_prev, penalty: PenaltyFamily, g: Graph,
                             lam: float) -> float:
    """Regularized energy plus a quadratic penalty on observed edges,
    each half-weighted (the graph-blended dynamics descend this form)."""
    z = as_matrix(z)
    z_prev = as_matrix(z_prev)
    _check_same_shape(z, z_prev)
    if g.n != z.shape[0]:
        raise DimensionError(f"graph n={g.n} does not match {z.shape}")
    d2 = _pairwise_sq_dists(z)
    local = float(np.sum((z - z_prev) ** 2))
    pen = float(np.sum(penalty_delta_array(penalty, d2)))
    a_tilde = normalized_adjacency(g, "sym")
    edge_term = float(np.sum(a_tilde * d2))
    return local + 0.5 * lam * pen + 0.5 * lam * edge_term


def diversity(z) -> float:
    """sum_{i<j} ||z_i - z_j||^2, the embedding-collapse diagnostic."""
    z = as_matrix(z)
    return 0.5 * float(np.sum(_pairwise_sq_dists(z)))


@dataclass
class EnergyReport:
    energies: list[float]
    descent_ok: list[bool]
    violations: list[dict] = field(default_factory=list)
    diversity_series: list[float] = field(default_factory=list)
    lam: float = 0.0
    tau: float = 0.0
    bracket: tuple[float, float] | None = None
    min_ratio: float | None = None
    max_ratio: float | None = None
    notes: dict = field(default_factory=dict)

    @property
    def num_violations(self) -> int:
        return len(self.violations)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=float)


def _require_dense_recording(traj: Trajectory) -> None:
    if traj.config.record_every != 1:
        raise ContractError("audits need record_every = 1")
    steps = traj.steps
    if steps != list(range(len(steps))):
        raise ContractError("audits need every step recorded")


def _trajectory_energy(traj: Trajectory, k_next: int, lam: float) -> float:
    """E(Z^(k_next), k_next-1) with the energy form matching the trajectory:
    quadratic for static couplings, regularized for attention, source /
    graph-regularized variants when configured."""
    cfg = traj.config
    spec = traj.spec
    z = traj.matrices[k_next]
    z_prev = traj.matrices[k_next - 1]
    eta = lam * cfg.beta
    if spec.is_attention:
        anchor = z_prev if cfg.beta == 0 else z_prev + eta * traj.source
        if cfg.graph_blend:
            return graph_regularized_energy(z, anchor, spec.penalty, traj.graph, lam)
        return regularized_energy(z, anchor, spec.penalty, lam)
    s = traj.static_coupling
    if cfg.beta > 0:
        return source_energy(z, z_prev, s, lam, eta, traj.source)
    return quadratic_energy(z, z_prev, s, lam)


def audit_descent(traj: Trajectory, spec: CouplingSpec | None = None,
                  lam: float | None = None,
                  slack: float = DESCENT_SLACK) -> EnergyReport:
    """Check E(Z^(k+1), k) <= E(Z^(k), k-1) along a fully recorded
    trajectory; lam defaults to tau (gradient step fixed at one)."""
    _require_dense_recording(traj)
    spec = spec or traj.spec
    if lam is None:
        lam = traj.config.tau
    mats = traj.matrices
    if len(mats) < 3:
        raise ContractError("descent audit needs at least two steps")
    energies = [_trajectory_energy(traj, k, lam) for k in range(1, len(mats))]
    flags = []
    violations = []
    for k in range(1, len(energies)):
        ok = energies[k] <= energies[k - 1] + slack
        flags.append(bool(ok))
        if not ok:
            violations.append({
                "step": k,
                "energy_prev": energies[k - 1],
                "energy_next": energies[k],
                "excess": energies[k] - energies[k - 1],
            })
    return EnergyReport(
        energies=energies,
        descent_ok=flags,
        violations=violations,
        diversity_series=[diversity(m) for m in mats],
        lam=lam,
        tau=traj.config.tau,
        notes={"lam_rule": "lam = tau (gradient step alpha fixed at 1)"},
    )


def audit_bounds(traj: Trajectory, s: np.ndarray | None = None,
                 lam: float | None = None, tau: float | None = None) -> EnergyReport:
    """Check the per-step energy bracket
    (1 - tau*l1)^2 E_k <= E_{k+1} <= (1 - tau*l2)^2 E_k for a static
    coupling, with l1/l2 the largest/smallest singular values of its
    Laplacian."""
    _require_dense_recording(traj)
    if traj.spec.is_attention or traj.config.beta > 0 or traj.config.graph_blend:
        raise ContractError("bound audit applies to plain static-coupling runs")
    s = as_matrix(s) if s is not None else traj.static_coupling
    tau = tau if tau is not None else traj.config.tau
    if lam is None:
        lam = tau
    bracket = laplacian_spectral_bracket(s)
    if tau > 1.0 / bracket.lambda_max + 1e-12:
        raise ContractError(
            f"tau={tau} exceeds 1/lambda_max={1.0 / bracket.lambda_max}"
        )
    lo = (1.0 - tau * bracket.lambda_max) ** 2
    hi = (1.0 - tau * bracket.lambda_min) ** 2
    mats = traj.matrices
    energies = [_trajectory_energy(traj, k, lam) for k in range(1, len(mats))]
    flags = []
    violations = []
    ratios = []
    for k in range(1, len(energies)):
        e_prev, e_next = energies[k - 1], energies[k]
        slack = BOUND_REL_SLACK * max(e_prev, 1e-300)
        ok = (lo * e_prev - slack <= e_next <= hi * e_prev + slack)
        if e_prev > 0:
            ratios.append(e_next / e_prev)
        flags.append(bool(ok))
        if not ok:
            violations.append({
                "step": k,
                "ratio": e_next / e_prev if e_prev > 0 else float("inf"),
                "bracket": [lo, hi],
            })
    return EnergyReport(
        energies=energies,
        descent_ok=flags,
        violations=violations,
        diversity_series=[diversity(m) for m in mats],
        lam=lam,
        tau=tau,
        bracket=(bracket.lambda_max, bracket.lambda_min),
        min_ratio=min(ratios) if ratios else None,
        max_ratio=max(ratios) if ratios else None,
    )


def quadratic_energy_loop(z, z_prev, s, lam: float) -> float:
    """Double-loop oracle form of quadratic_energy (audit cross-check)."""
    z = as_matrix(z)
    z_prev = as_matrix(z_prev)
    s = as_matrix(s)
    total = float(np.sum((z - z_prev) ** 2))
    n = z.shape[0]
    for i in range(n):
        for j in range(n):
            total += lam * s[i, j] * float(np.sum((z[i] - z[j]) ** 2))
    return total


def inferred_omega(penalty: PenaltyFamily, z) -> np.ndarray:
    """Variational parameters from the diffusivity inference: the raw
    pairwise scores f(||z_i - z_j||^2) before row normalization."""
    return attention_scores(penalty, row_l2_normalize(as_matrix(z)))


def write_trajectory_csv(traj: Trajectory, path, lam: float | None = None) -> None:
    """Trajectory CSV: step, energy, diversity, min_row_sum, max_row_sum."""
    if lam is None:
        lam = traj.config.tau
    mats = traj.matrices
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,energy,diversity,min_row_sum,max_row_sum\n")
        for pos, (k, z) in enumerate(traj.snapshots):
            if pos == 0:
                energy = float("nan")
            else:
                energy = _trajectory_energy(traj, pos, lam)
            if traj.spec.is_attention:
                from .coupling import build_coupling

                s = build_coupling(traj.spec, row_l2_normalize(z), traj.graph)
            else:
                s = traj.static_coupling
            sums = s.sum(axis=1)
            fh.write(f"{k},{energy:.17g},{diversity(z):.17g},"
                     f"{sums.min():.17g},{sums.max():.17g}\n")
