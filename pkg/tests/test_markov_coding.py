"""Interval partition, transition structure, periodic orbits, potential."""

import copy
import json

import numpy as np
import pytest

from limitset import group_models as gm
from limitset import markov_coding as mc
from limitset import mobius

RESIDUAL_TOL = 1e-12
BIRKHOFF_TOL = 1e-9
TRACE_POWERS = (8, 56, 344, 2376, 16568, 115664)
CYLINDER_SLACK = 1e-11


# ---------------------------------------------------------------------------
# partition construction


def test_octagon_partition_cell_count(octagon_partition):
    assert octagon_partition.n_cells == 608


def test_partition_tiles_the_circle(octagon_partition):
    p = octagon_partition
    gaps = p.starts[1:] - p.ends[:-1]
    assert np.abs(gaps).max() < RESIDUAL_TOL
    wrap = (p.starts[0] + 2 * np.pi) - p.ends[-1]
    assert abs(wrap) < RESIDUAL_TOL


def test_cells_fit_their_branch_intervals(octagon_partition):
    p = octagon_partition
    alpha = p.presentation.interval_half_angle
    lo = p.presentation.tangency_angles[p.branch] - alpha
    d1 = (p.starts - lo) % (2 * np.pi)
    d2 = (p.ends - lo) % (2 * np.pi)
    assert d1.max() <= 2 * alpha + 1e-9
    assert d2.max() <= 2 * alpha + 1e-9


def test_branch_assignment_prefers_smallest_side(octagon_partition):
    # where two side intervals overlap, the kept branch is the lower index
    p = octagon_partition
    alpha = p.presentation.interval_half_angle
    mids = (p.starts + p.ends) / 2
    for k in range(0, p.n_cells, 37):
        lo = p.presentation.tangency_angles - alpha
        inside = ((mids[k] - lo) % (2 * np.pi)) <= 2 * alpha
        starts_in = ((p.starts[k] - lo) % (2 * np.pi)) <= 2 * alpha + 1e-12
        ends_in = ((p.ends[k] - lo) % (2 * np.pi)) <= 2 * alpha + 1e-12
        ok = np.flatnonzero(inside & starts_in & ends_in)
        assert p.branch[k] == ok[0]


def test_degenerate_representation_is_rejected(octagon):
    pres, rho = octagon
    flat = gm.Representation(rho.names, [np.eye(2, dtype=complex)] * 4)
    with pytest.raises(mc.BranchAssignmentFailure):
        mc.build_bowen_series_partition(pres, flat)


def test_relator_violating_representation_is_rejected(octagon):
    pres, rho = octagon
    bad = [m.m.copy() for m in rho.maps]
    bad[0] = bad[0] + np.array([[1e-4, 0.0], [0.0, -1e-4]])
    with pytest.raises(ValueError):
        mc.build_bowen_series_partition(pres, gm.Representation(rho.names, bad))


# ---------------------------------------------------------------------------
# transition matrix


def test_markov_residual_is_tiny(octagon_tm):
    assert octagon_tm.markov_residual < RESIDUAL_TOL


def test_transition_row_counts_match_trace_powers(octagon_tm):
    A = octagon_tm.A.astype(np.int64)
    P = np.eye(A.shape[0], dtype=np.int64)
    for n, expected in enumerate(TRACE_POWERS, start=1):
        P = P @ A
        assert int(np.trace(P)) == expected


def test_aperiodicity_witness(octagon_tm):
    w = octagon_tm.aperiodicity_witness
    assert w == 9
    A = octagon_tm.A.astype(np.int64)
    P = np.eye(A.shape[0], dtype=np.int64)
    for _ in range(w):
        P = np.minimum(P @ A, 1)
    assert P.min() == 1


def test_perturbed_endpoints_raise_markov_violation(octagon_partition):
    p2 = copy.copy(octagon_partition)
    p2.starts = octagon_partition.starts.copy()
    p2.ends = octagon_partition.ends.copy()
    p2.starts[40] += 3e-4
    p2.ends[39] += 3e-4
    with pytest.raises(mc.MarkovViolation):
        mc.transition_matrix(p2)


# ---------------------------------------------------------------------------
# validation report


def test_octagon_coding_report(octagon_partition):
    r = mc.validate_coding(octagon_partition, depth=1)
    assert r.passed
    assert r.markov_residual < RESIDUAL_TOL
    assert r.expansion_constant > 1
    assert r.aperiodicity_witness == 9
    assert r.geodesic_pass_fraction == 1.0
    assert r.geodesic_samples >= 200
    assert r.geodesic_candidate_pool >= 4000


def test_schottky_coding_report(schottky_coding):
    r = mc.validate_coding(schottky_coding)
    assert r.passed
    assert r.aperiodicity_witness == 2
    # unit circles with gap 2 between closest pair: contraction factor
    # r^2 / gap(gap + 2r)^... measured on level-two boundaries
    assert abs(r.expansion_constant - 9.0) < 0.01


def test_schottky_transition_forbids_backtracking(schottky_coding):
    A = schottky_coding.transition()
    n = A.shape[0]
    for s in range(n):
        for s2 in range(n):
            assert A[s, s2] == (0 if s2 == s ^ 1 else 1)


# ---------------------------------------------------------------------------
# refinement


def test_refined_cell_counts(octagon_partition):
    p2 = mc.refine_cylinders(octagon_partition, 2)
    p3 = mc.refine_cylinders(octagon_partition, 3)
    assert p2.n_cells == 4048
    assert p3.n_cells == 28128


def test_refinement_shrinks_widths(octagon_partition):
    w1 = float((octagon_partition.ends - octagon_partition.starts).max())
    p2 = mc.refine_cylinders(octagon_partition, 2)
    p3 = mc.refine_cylinders(octagon_partition, 3)
    w2 = float((p2.ends - p2.starts).max())
    w3 = float((p3.ends - p3.starts).max())
    assert w1 > w2 > w3
    assert w1 < 0.06 and w2 < 0.025 and w3 < 0.017


def test_refined_partition_tiles_the_circle(octagon_partition):
    p2 = mc.refine_cylinders(octagon_partition, 2)
    gaps = p2.starts[1:] - p2.ends[:-1]
    assert np.abs(gaps).max() < RESIDUAL_TOL


def test_refined_words_match_symbolic_count(octagon_partition, octagon_tm):
    words = mc.refined_words(octagon_tm.A, 2)
    p2 = mc.refine_cylinders(octagon_partition, 2)
    assert len(words) == p2.n_cells == 4048


def test_full_shift_refined_word_count():
    A = np.ones((2, 2), dtype=np.int64)
    assert len(mc.refined_words(A, 3)) == 8


def test_depth_one_refinement_is_identity(octagon_partition):
    assert mc.refine_cylinders(octagon_partition, 1) is octagon_partition


# ---------------------------------------------------------------------------
# periodic orbits


def test_primitive_period_counts_sum_to_traces(octagon_tm):
    # every closed walk of length n is a rotation of some cycle, counted
    # once per primitive period, so the periods sum to trace(A^n)
    A = octagon_tm.A.astype(np.int64)
    for n in range(1, 5):
        cycles, prim = mc.periodic_cycle_arrays(A, n)
        assert cycles.shape[1] == n
        assert int(prim.sum()) == TRACE_POWERS[n - 1]


def test_periodic_orbit_representatives_are_lex_minimal(octagon_tm):
    for orb in mc.periodic_orbits(octagon_tm, 3, primitive_only=True)[:100]:
        c = orb.cells
        rots = [c[i:] + c[:i] for i in range(len(c))]
        assert c == min(rots)


def test_orbit_elements_are_loxodromic_with_interior_fixed_point(
        octagon_partition, octagon_tm):
    p = octagon_partition
    for n in (1, 2, 3):
        for orb in mc.periodic_orbits(octagon_tm, n, primitive_only=True)[:60]:
            gam, fix = mc.orbit_group_element(p, orb)
            assert mobius.classify(gam) == "loxodromic"
            theta = float(np.angle(fix.value) % (2 * np.pi))
            k0 = orb.cells[0]
            lo, hi = float(p.starts[k0]), float(p.ends[k0])
            if theta < lo - np.pi:
                theta += 2 * np.pi
            assert lo - 1e-8 <= theta <= hi + 1e-8


def test_birkhoff_sums_equal_negative_translation_lengths(
        octagon_partition, octagon_tm):
    p = octagon_partition
    phi = mc.potential_phi(p)
    worst = 0.0
    for n in (1, 2, 3, 4):
        for orb in mc.periodic_orbits(octagon_tm, n, primitive_only=True)[:300]:
            gam, _ = mc.orbit_group_element(p, orb)
            s = phi.periodic_birkhoff_sum(orb)
            worst = max(worst, abs(s + mobius.translation_length(gam)))
    assert worst < BIRKHOFF_TOL


def test_rotated_orbits_give_conjugate_elements(octagon_partition, octagon_tm):
    p = octagon_partition
    phi = mc.potential_phi(p)
    for orb in mc.periodic_orbits(octagon_tm, 3, primitive_only=True)[:40]:
        gam, _ = mc.orbit_group_element(p, orb)
        rot = mc.SymbolicOrbit(orb.cells[1:] + orb.cells[:1], orb.primitive_period)
        gam2, _ = mc.orbit_group_element(p, rot)
        assert abs(mobius.eigenvalue_and_trace(gam)[1]
                   - mobius.eigenvalue_and_trace(gam2)[1]) < 1e-9
        assert abs(phi.periodic_birkhoff_sum(orb)
                   - phi.periodic_birkhoff_sum(rot)) < BIRKHOFF_TOL


def test_periodic_sums_survive_conjugation(octagon, octagon_partition,
                                           octagon_tm):
    # the length spectrum is a conjugacy invariant, so periodic data from
    # the base coding must match any conjugated copy of the group
    pres, rho = octagon
    p = octagon_partition
    phi = mc.potential_phi(p)
    orbits = mc.periodic_orbits(octagon_tm, 3, primitive_only=True)[:40]
    base = [phi.periodic_birkhoff_sum(o) for o in orbits]
    rng = np.random.default_rng(3)
    for _ in range(3):
        v = rng.normal(size=4)
        K = np.array([[1 + 0.1 * v[0], 0.1 * v[1]],
                      [0.1 * v[2], 1 + 0.1 * v[3]]], dtype=complex)
        Ki = np.linalg.inv(K)
        conj = gm.Representation(rho.names, [K @ M.m @ Ki for M in rho.maps])
        for orb, s0 in zip(orbits, base):
            m = np.eye(2, dtype=complex)
            for k in orb.cells:
                sym = int(pres.side_symbols[p.branch[k]])
                m = conj.generator(sym).m @ m
            L = mobius.translation_length(mobius.MoebiusMap(m))
            assert abs(s0 + L) < BIRKHOFF_TOL


def test_nonloxodromic_cycle_is_reported(octagon_partition):
    p2 = copy.copy(octagon_partition)
    ell = np.array([[1.0, 1.0], [0.0, 1.0]], dtype=complex)
    p2.side_matrices = octagon_partition.side_matrices.copy()
    p2.side_matrices[int(octagon_partition.branch[0])] = ell
    orb = mc.SymbolicOrbit((0,), 1)
    with pytest.raises(mc.NonLoxodromicCycle):
        mc.orbit_group_element(p2, orb)


# ---------------------------------------------------------------------------
# potential


def test_potential_is_negative_on_samples(octagon_partition):
    phi = mc.potential_phi(octagon_partition)
    vals = phi.on_samples()
    assert vals.max() < 0
    assert vals.min() > -4.0


def test_potential_matches_derivative_oracle(octagon_partition):
    p = octagon_partition
    phi = mc.potential_phi(p)
    rng = np.random.default_rng(11)
    for _ in range(50):
        k = int(rng.integers(p.n_cells))
        t = rng.uniform(float(p.starts[k]), float(p.ends[k]))
        z = np.exp(1j * t)
        M = mobius.MoebiusMap(p.side_matrices[p.branch[k]])
        _, deriv = mobius.apply_and_derivative(M, z)
        assert abs(phi.at_angle(t, k) + np.log(abs(deriv))) < 1e-10


def test_potential_on_pure_scaling_branch(schottky_coding):
    # det-one branch with lower row (c, d): the value is 2 log |c z + d|
    phi = mc.potential_phi(schottky_coding)
    pts = schottky_coding.sample_points()
    for s in range(4):
        branch = schottky_coding.branch_elements[s].m
        z = pts[s][7]
        expected = 2 * np.log(abs(branch[1, 0] * z + branch[1, 1]))
        assert abs(phi.at_point(z, s) - expected) < 1e-12


# ---------------------------------------------------------------------------
# cylinders and coding map


def test_cylinders_are_nested(octagon_partition, octagon_tm):
    p = octagon_partition
    A = octagon_tm.A
    rng = np.random.default_rng(5)
    for _ in range(20):
        i0 = int(rng.integers(p.n_cells))
        succ = np.flatnonzero(A[i0])
        j = int(succ[rng.integers(len(succ))])
        lo1, hi1 = mc.coding_project_pi(p, [i0])
        lo2, hi2 = mc.coding_project_pi(p, [i0, j])
        assert lo1 - CYLINDER_SLACK <= lo2
        assert hi2 <= hi1 + CYLINDER_SLACK
        assert (hi2 - lo2) < (hi1 - lo1) + CYLINDER_SLACK


def test_depth_one_cylinder_is_the_cell(octagon_partition):
    p = octagon_partition
    lo, hi = mc.coding_project_pi(p, [77])
    assert abs(lo - float(p.starts[77])) < 1e-14
    assert abs(hi - float(p.ends[77])) < 1e-14


def test_empty_prefix_gives_full_circle(octagon_partition):
    assert mc.coding_project_pi(octagon_partition, []) == (0.0, 2 * np.pi)


def test_inadmissible_prefix_raises(octagon_partition, octagon_tm):
    A = octagon_tm.A
    pair = None
    for i in range(A.shape[0]):
        zeros = np.flatnonzero(A[i] == 0)
        if len(zeros):
            pair = (i, int(zeros[0]))
            break
    with pytest.raises(mc.EmptyCylinder):
        mc.coding_project_pi(octagon_partition, list(pair))


def test_bad_points_are_endpoint_preimages(octagon_partition):
    p = octagon_partition
    assert mc.is_bad_point(p, float(p.starts[5]), 4)
    assert not mc.is_bad_point(p, 0.7234, 4)


# ---------------------------------------------------------------------------
# serialization


def test_partition_json_is_deterministic(octagon, octagon_partition):
    pres, rho = octagon
    rebuilt = mc.build_bowen_series_partition(pres, rho)
    assert mc.partition_json_text(octagon_partition) \
        == mc.partition_json_text(rebuilt)


def test_partition_json_round_trip_values(octagon_partition):
    p = octagon_partition
    doc = json.loads(mc.partition_json_text(p))
    assert doc["kind"] == "interval_partition"
    assert doc["n_cells"] == p.n_cells
    starts = np.array([c["start"] for c in doc["cells"]])
    branch = [c["branch"] for c in doc["cells"]]
    assert np.array_equal(starts, p.starts)
    assert branch == p.branch.tolist()
    A = mc.transition_matrix(p).A
    assert doc["transitions"][0] == np.flatnonzero(A[0]).tolist()


# ---------------------------------------------------------------------------
# sampling helpers


def test_chebyshev_fractions_are_interior_and_symmetric():
    f = mc.chebyshev_fractions(32)
    assert len(f) == 32
    assert f.min() > 0 and f.max() < 1
    assert np.allclose(f + f[::-1], 1.0)
