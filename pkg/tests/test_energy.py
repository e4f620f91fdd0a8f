import json

import numpy as np
import pytest

from endiff.coupling import CouplingSpec, PenaltyFamily, penalty_delta
from endiff.diffusion import DiffusionConfig, run_trajectory
from endiff.energy import (audit_bounds, audit_descent, diversity,
                           graph_regularized_energy, inferred_omega,
                           quadratic_energy, quadratic_energy_loop,
                           regularized_energy, source_energy,
                           surrogate_energy, write_trajectory_csv)
from endiff.errors import ContractError, DimensionError, ParameterError
from endiff.graphs import er_graph, normalized_adjacency
from endiff.numerics import row_l2_normalize


def test_quadratic_energy_matches_double_loop():
    # trace identity against the explicit pairwise sum
    rng = np.random.default_rng(0)
    z = rng.standard_normal((7, 3))
    zp = rng.standard_normal((7, 3))
    s = np.abs(rng.standard_normal((7, 7)))
    fast = quadratic_energy(z, zp, s, 0.7)
    slow = quadratic_energy_loop(z, zp, s, 0.7)
    assert fast == pytest.approx(slow, rel=1e-12)


def test_quadratic_energy_zero_at_rest_with_identity_coupling():
    z = np.random.default_rng(1).standard_normal((4, 2))
    assert quadratic_energy(z, z, np.eye(4), 1.0) == pytest.approx(0.0, abs=1e-12)


def test_quadratic_energy_errors():
    z = np.ones((3, 2))
    with pytest.raises(DimensionError):
        quadratic_energy(z, np.ones((4, 2)), np.ones((3, 3)), 1.0)
    with pytest.raises(DimensionError):
        quadratic_energy(z, z, np.ones((4, 4)), 1.0)
    with pytest.raises(ParameterError):
        quadratic_energy(z, z, np.ones((3, 3)), -1.0)


def test_source_energy_shifts_anchor():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((5, 3))
    zp = rng.standard_normal((5, 3))
    h = rng.standard_normal((5, 3))
    s = np.abs(rng.standard_normal((5, 5)))
    direct = source_energy(z, zp, s, 0.5, 0.3, h)
    assert direct == pytest.approx(quadratic_energy(z, zp + 0.3 * h, s, 0.5))


def test_regularized_energy_quadratic_family_matches_quadratic_form():
    # delta(u) = u makes the penalty the unweighted pairwise energy
    rng = np.random.default_rng(3)
    z = row_l2_normalize(rng.standard_normal((6, 3)))
    zp = rng.standard_normal((6, 3))
    p = PenaltyFamily("quadratic")
    reg = regularized_energy(z, zp, p, 0.4)
    ones = np.ones((6, 6))
    # sum_ij ||z_i - z_j||^2 = 2 * tr(Z^T (N I - 11^T) Z)
    assert reg == pytest.approx(quadratic_energy(z, zp, 0.5 * ones, 0.8), rel=1e-10)


def test_surrogate_tight_at_inferred_omega():
    rng = np.random.default_rng(4)
    z = row_l2_normalize(rng.standard_normal((8, 4)))
    zp = rng.standard_normal((8, 4))
    for kind in ("simple", "advanced"):
        p = PenaltyFamily(kind)
        omega = inferred_omega(p, z)
        sur = surrogate_energy(z, zp, omega, p, 0.6)
        reg = regularized_energy(z, zp, p, 0.6)
        assert abs(sur - reg) <= 1e-7


def test_surrogate_upper_bounds_regularized():
    rng = np.random.default_rng(5)
    z = row_l2_normalize(rng.standard_normal((6, 3)))
    zp = rng.standard_normal((6, 3))
    p = PenaltyFamily("simple")
    lo, hi = 0.0, 2.0
    reg = regularized_energy(z, zp, p, 0.6)
    for _ in range(50):
        omega = rng.uniform(lo, hi, size=(6, 6))
        assert surrogate_energy(z, zp, omega, p, 0.6) >= reg - 1e-9


def test_graph_regularized_energy_half_weights():
    rng = np.random.default_rng(6)
    g = er_graph(5, 0.6, 0)
    z = row_l2_normalize(rng.standard_normal((5, 3)))
    zp = rng.standard_normal((5, 3))
    p = PenaltyFamily("simple")
    val = graph_regularized_energy(z, zp, p, g, 0.8)
    # oracle: explicit double loop with lam/2 on both terms
    a = normalized_adjacency(g, "sym")
    expect = float(np.sum((z - zp) ** 2))
    for i in range(5):
        for j in range(5):
            d2 = float(np.sum((z[i] - z[j]) ** 2))
            expect += 0.4 * penalty_delta(p, d2) + 0.4 * a[i, j] * d2
    assert val == pytest.approx(expect, rel=1e-10)


def test_diversity_hand_value():
    z = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    # pairs: 1 + 4 + 5
    assert diversity(z) == pytest.approx(10.0)
    assert diversity(np.ones((5, 3))) == pytest.approx(0.0, abs=1e-12)


def _static_traj(seed=0, steps=6, tau=0.4):
    g = er_graph(10, 0.4, seed)
    z0 = np.random.default_rng(seed).standard_normal((10, 3))
    return run_trajectory(z0, CouplingSpec("gcn_sym"),
                          DiffusionConfig(tau=tau, steps=steps), g)


def test_audit_descent_static_passes():
    rep = audit_descent(_static_traj())
    assert rep.num_violations == 0
    assert all(rep.descent_ok)
    assert len(rep.energies) == 6
    assert rep.lam == rep.tau == 0.4


def test_audit_descent_flags_fabricated_violation():
    traj = _static_traj()
    # corrupt a middle snapshot so the energy must jump
    traj.snapshots[3] = (3, traj.snapshots[3][1] + 50.0)
    rep = audit_descent(traj)
    assert rep.num_violations >= 1
    assert rep.violations[0]["excess"] > 0


def test_audit_descent_requires_dense_recording():
    g = er_graph(8, 0.4, 1)
    z0 = np.random.default_rng(1).standard_normal((8, 3))
    traj = run_trajectory(z0, CouplingSpec("gcn_sym"),
                          DiffusionConfig(steps=6, record_every=2), g)
    with pytest.raises(ContractError):
        audit_descent(traj)


def test_audit_descent_attention():
    rng = np.random.default_rng(2)
    z0 = row_l2_normalize(rng.standard_normal((12, 5)))
    spec = CouplingSpec("attention", PenaltyFamily("simple"))
    traj = run_trajectory(z0, spec, DiffusionConfig(tau=0.25, steps=8))
    rep = audit_descent(traj, slack=1e-8)
    assert rep.num_violations == 0
    assert rep.diversity_series[0] > 0


def test_audit_bounds_bracket_holds():
    from endiff.numerics import laplacian_spectral_bracket
    from endiff.graphs import normalized_adjacency as na

    g = er_graph(10, 0.4, 3)
    s = na(g, "sym")
    bracket = laplacian_spectral_bracket(s)
    tau = 0.9 / bracket.lambda_max
    z0 = np.random.default_rng(3).standard_normal((10, 3))
    traj = run_trajectory(z0, CouplingSpec("gcn_sym"),
                          DiffusionConfig(tau=tau, steps=10), g)
    rep = audit_bounds(traj)
    assert rep.num_violations == 0
    lo = (1 - tau * bracket.lambda_max) ** 2
    hi = (1 - tau * bracket.lambda_min) ** 2
    assert rep.min_ratio >= lo - 1e-8
    assert rep.max_ratio <= hi + 1e-8


def test_audit_bounds_rejects_excessive_tau():
    traj = _static_traj(tau=1.0)
    with pytest.raises(ContractError):
        audit_bounds(traj)


def test_audit_bounds_rejects_attention_runs():
    rng = np.random.default_rng(4)
    z0 = row_l2_normalize(rng.standard_normal((8, 3)))
    spec = CouplingSpec("attention", PenaltyFamily("simple"))
    traj = run_trajectory(z0, spec, DiffusionConfig(tau=0.25, steps=3))
    with pytest.raises(ContractError):
        audit_bounds(traj)


def test_energy_report_json_round_trips():
    rep = audit_descent(_static_traj())
    payload = json.loads(rep.to_json())
    assert payload["lam"] == pytest.approx(0.4)
    assert payload["violations"] == []
    assert len(payload["energies"]) == len(rep.energies)


def test_write_trajectory_csv(tmp_path):
    traj = _static_traj(steps=4)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,energy,diversity,min_row_sum,max_row_sum"
    assert len(lines) == 6  # header + snapshots 0..4
    first = lines[1].split(",")
    assert first[0] == "0" and first[1] == "nan"
