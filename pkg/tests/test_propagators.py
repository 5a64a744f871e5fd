import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from magnusctl import fields, linalg, system
from magnusctl import propagators as P
from magnusctl.errors import ConfigError, DimensionError, UnsupportedStructureError
from magnusctl.instrument import track

from conftest import random_hermitian, random_spec, random_unit


def random_field(rng, n, T, amp=1.0):
    return fields.FieldGrid(amp * rng.normal(size=n), T / n)


def exact_oracle(spec, field, psi):
    """Dense product of step exponentials."""
    for eps in field.values:
        psi = scipy.linalg.expm(-1j * system.full_hamiltonian(spec, eps) * field.dt / spec.hbar) @ psi
    return psi


def interaction_picture_stack(spec, field):
    hist = P.compute_local_histories(spec, field)
    W = spec.interaction()
    out = []
    for k in range(1, field.n + 1):
        U = linalg.kron_all([hist.U[i][k] for i in range(spec.N)])
        out.append(U.conj().T @ W @ U)
    return hist, out


def omega2_oracle(spec, field):
    """Brute-force double sum over all k' <= k of full-space commutators."""
    _, HI = interaction_picture_stack(spec, field)
    acc = np.zeros_like(HI[0])
    for k in range(len(HI)):
        for kp in range(k + 1):
            acc += HI[k] @ HI[kp] - HI[kp] @ HI[k]
    return -(field.dt**2) / (2 * spec.hbar**2) * acc


def rel_frob(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


class TestLocalHistories:
    def test_identity_at_zero_and_unitary(self, rng):
        spec = random_spec(rng, (2, 3))
        hist = P.compute_local_histories(spec, random_field(rng, 7, 1.0))
        for i in range(2):
            np.testing.assert_array_equal(hist.U[i][0], np.eye(spec.dims[i]))
            assert linalg.unitarity_defect(hist.final(i)) < 1e-13
        assert hist.n == 7

    def test_matches_step_products(self, rng):
        spec = random_spec(rng, (3,))
        f = random_field(rng, 5, 1.0)
        hist = P.compute_local_histories(spec, f)
        U = np.eye(3)
        for k, eps in enumerate(f.values, start=1):
            U = scipy.linalg.expm(-1j * system.local_hamiltonian(spec, 0, eps) * f.dt) @ U
            np.testing.assert_allclose(hist.U[0][k], U, atol=1e-13)

    def test_identical_factors_share_history(self):
        spec = system.build_rotor_system(system.RotorGeometry.equilateral(5e-9), 1)
        hist = P.compute_local_histories(spec, fields.FieldGrid.constant(1.0, 4, 1.0))
        assert hist.U[0] is hist.U[1] is hist.U[2]


class TestExact:
    def test_against_dense_oracle(self, rng):
        spec = random_spec(rng, (2, 3), coupling_scale=0.5)
        f = random_field(rng, 20, 2.0)
        psi0 = random_unit(rng, 6)
        np.testing.assert_allclose(P.propagate_exact(spec, f, psi0), exact_oracle(spec, f, psi0), atol=1e-9)

    def test_sparse_equals_dense(self, rng):
        spec = random_spec(rng, (2, 2, 2), with_terms=True)
        f = random_field(rng, 10, 1.0)
        psi0 = random_unit(rng, 8)
        a = P.propagate_exact(spec, f, psi0)
        b = P.propagate_exact(spec, f, psi0, sparse=False)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_sparse_operators(self):
        spec = system.build_rotor_system(system.RotorGeometry.equilateral(5e-9), 1)
        H, C = P.sparse_operators(spec)
        np.testing.assert_allclose(H.toarray(), system.static_hamiltonian(spec), atol=1e-16)
        np.testing.assert_allclose(C.toarray(), system.control_operator(spec), atol=0)

    def test_norm_over_long_grid(self):
        # truncation losses must not pile up over ~1000 steps
        spec = system.build_rotor_system(system.RotorGeometry.two_rotor(5e-9), 4)
        c = system.PhysicalConstants()
        n = 999
        f = fields.random_test_field(np.random.default_rng(0), n, 1.306e-9 / c.time_unit / n, 5e6 / c.field_unit)
        psi = P.propagate_exact(spec, f, system.ground_product_state(spec))
        assert abs(np.linalg.norm(psi) - 1.0) <= 1e-9

    def test_time_independent_single_exponential(self, rng):
        spec = random_spec(rng, (2, 3), coupling_scale=0.5)
        f = fields.FieldGrid.constant(0.7, 25, 2.0)
        psi0 = random_unit(rng, 6)
        H = system.full_hamiltonian(spec, 0.7)
        want = scipy.linalg.expm(-1j * H * 2.0) @ psi0
        np.testing.assert_allclose(P.propagate_exact(spec, f, psi0), want, atol=1e-10)

    def test_observer_sees_every_step(self, rng):
        spec = random_spec(rng, (2, 2))
        seen = []
        P.propagate_exact(spec, random_field(rng, 6, 1.0), random_unit(rng, 4), observe=lambda k, psi: seen.append(k))
        assert seen == list(range(7))

    def test_factor_list_input(self, rng):
        spec = random_spec(rng, (2, 3))
        a, b = random_unit(rng, 2), random_unit(rng, 3)
        f = random_field(rng, 4, 1.0)
        np.testing.assert_array_equal(P.propagate_exact(spec, f, [a, b]), P.propagate_exact(spec, f, np.kron(a, b)))

    def test_shape_errors(self, rng):
        spec = random_spec(rng, (2, 3))
        f = random_field(rng, 4, 1.0)
        with pytest.raises(DimensionError):
            P.propagate_exact(spec, f, np.ones(5))
        with pytest.raises(DimensionError):
            P.propagate_exact(spec, f, [np.ones(2)])

    def test_hbar_scaling(self, rng):
        # doubling hbar and every Hamiltonian term leaves the dynamics unchanged
        spec = random_spec(rng, (2, 2), with_terms=True)
        f = random_field(rng, 8, 1.0)
        doubled = system.SystemSpec(
            spec.dims,
            tuple(2 * k for k in spec.kinetic),
            tuple(2 * c for c in spec.control),
            tuple(c.scaled(2.0) for c in spec.couplings),
            hbar=2.0,
        )
        psi0 = random_unit(rng, 4)
        for method in ("exact", "magnus1", "magnus2"):
            np.testing.assert_allclose(
                P.propagate(method, spec, f, psi0), P.propagate(method, doubled, f, psi0), atol=1e-12
            )


class TestStepGuard:
    def test_rejects_coarse_grid(self):
        spec = system.build_rotor_system(system.RotorGeometry.two_rotor(5e-9), 4)
        f = fields.FieldGrid.constant(1.0, 10, 50.0)
        with pytest.raises(ConfigError, match="increase n"):
            P.propagate_exact(spec, f, system.ground_product_state(spec))
        with pytest.raises(ConfigError):
            P.compute_local_histories(spec, f)

    def test_guard_can_be_disabled(self):
        spec = system.build_rotor_system(system.RotorGeometry.two_rotor(5e-9), 1)
        f = fields.FieldGrid.constant(1.0, 2, 20.0)
        psi = P.propagate_exact(spec, f, system.ground_product_state(spec), max_step_phase=None)
        assert abs(np.linalg.norm(psi) - 1) < 1e-9

    def test_step_phase_bound(self, rng):
        spec = random_spec(rng, (2, 3))
        f = random_field(rng, 12, 3.0)
        actual = max(np.linalg.norm(system.full_hamiltonian(spec, e), 2) for e in f.values) * f.dt
        assert actual <= P.step_phase(spec, f) * (1 + 1e-12)


class TestZeroth:
    def test_is_product_of_local_evolutions(self, rng):
        spec = random_spec(rng, (2, 3))
        f = random_field(rng, 9, 1.0)
        a, b = random_unit(rng, 2), random_unit(rng, 3)
        decoupled = system.SystemSpec(spec.dims, spec.kinetic, spec.control)
        np.testing.assert_allclose(P.propagate_zeroth(spec, f, [a, b]), exact_oracle(decoupled, f, np.kron(a, b)), atol=1e-12)

    def test_needs_factors(self, rng):
        spec = random_spec(rng, (2, 2))
        f = random_field(rng, 3, 1.0)
        with pytest.raises(DimensionError):
            P.propagate_zeroth(spec, f, np.ones(4) / 2)
        with pytest.raises(DimensionError):
            P.propagate_zeroth(spec, f, [np.ones(2), np.ones(3)])


class TestOmega1:
    @given(st.sampled_from([(2, 2), (3, 2), (2, 3, 2), (3, 3, 3), (5, 5)]), st.integers(1, 12), st.booleans(), st.integers(0, 2**31))
    def test_pairwise_matches_naive(self, dims, n, with_terms, seed):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, dims, with_terms=with_terms)
        hist = P.compute_local_histories(spec, random_field(rng, n, 0.2 * n))
        assert rel_frob(P.compute_omega1_pairwise(hist, spec), P.compute_omega1_naive(hist, spec)) <= 1e-12

    def test_dense_and_separable_paths_agree(self, rng):
        spec = random_spec(rng, (3, 3, 3), with_terms=True)
        hist = P.compute_local_histories(spec, random_field(rng, 300, 3.0))
        a = P.compute_omega1_pairwise(hist, spec, use_terms=True)
        b = P.compute_omega1_pairwise(hist, spec, use_terms=False)
        assert rel_frob(a, b) <= 1e-13

    def test_anti_hermitian(self, rng):
        spec = random_spec(rng, (2, 3, 2))
        hist = P.compute_local_histories(spec, random_field(rng, 10, 1.0))
        omega = P.compute_omega1_pairwise(hist, spec)
        assert linalg.hermiticity_defect(1j * omega) < 1e-13

    def test_many_body_term(self, rng):
        spec = random_spec(rng, (2, 2, 2))
        mb = system.SystemSpec(spec.dims, spec.kinetic, spec.control, spec.couplings, many_body=random_hermitian(rng, 8, 0.1))
        hist = P.compute_local_histories(mb, random_field(rng, 5, 1.0))
        P.compute_omega1_naive(hist, mb)
        with pytest.raises(UnsupportedStructureError):
            P.compute_omega1_pairwise(hist, mb)
        with pytest.raises(UnsupportedStructureError):
            P.compute_omega2(hist, mb)

    def test_no_couplings(self, rng):
        spec = system.SystemSpec((2, 2), (random_hermitian(rng, 2),) * 2, (random_hermitian(rng, 2),) * 2)
        hist = P.compute_local_histories(spec, random_field(rng, 4, 1.0))
        assert not np.any(P.compute_omega1_pairwise(hist, spec))
        assert not np.any(P.compute_omega2(hist, spec))


class TestOmega2:
    @pytest.mark.parametrize("dims", [(2, 2), (2, 3, 2), (3, 3, 3)])
    def test_matches_double_sum(self, rng, dims):
        spec = random_spec(rng, dims, coupling_scale=0.3, with_terms=True)
        f = random_field(rng, 9, 2.0)
        hist = P.compute_local_histories(spec, f)
        assert rel_frob(P.compute_omega2(hist, spec), omega2_oracle(spec, f)) <= 1e-12

    def test_counters(self, rng):
        # chain 0-1-2-3 with only nearest-neighbour couplings: (0,1) and (2,3) are disjoint
        dims = (2, 2, 2, 2)
        h = random_hermitian(rng, 2)
        couplings = tuple(system.Coupling(i, i + 1, random_hermitian(rng, 4, 0.1)) for i in range(3))
        spec = system.SystemSpec(dims, (h,) * 4, (h,) * 4, couplings)
        f = random_field(rng, 4, 1.0)
        hist = P.compute_local_histories(spec, f)
        with track() as counts:
            omega = P.compute_omega2(hist, spec)
        assert counts["kappa_pair"] == 3
        assert counts["kappa_triple"] == 4
        assert counts["kappa_disjoint_skipped"] == 2
        # skipping disjoint pairs loses nothing
        assert rel_frob(omega, omega2_oracle(spec, f)) <= 1e-12

    def test_recompute_mode(self, rng):
        spec = random_spec(rng, (2, 3, 2), with_terms=True)
        f = random_field(rng, 6, 1.0)
        psi0 = random_unit(rng, 12)
        a = P.propagate_magnus2(spec, f, psi0)
        b = P.propagate_magnus2(spec, f, psi0, recompute=True)
        np.testing.assert_allclose(a, b, atol=1e-13)


class TestMagnus:
    def test_zero_coupling_collapse(self, rng):
        spec = random_spec(rng, (2, 3), coupling_scale=0.0)
        f = random_field(rng, 15, 2.0)
        factors = [random_unit(rng, 2), random_unit(rng, 3)]
        ex = P.propagate_exact(spec, f, factors)
        for method in ("zeroth", "magnus1", "magnus2"):
            assert P.overlap(P.propagate(method, spec, f, factors), ex) >= 1 - 1e-12

    def test_first_order_for_weak_coupling(self, rng):
        spec = random_spec(rng, (2, 2), coupling_scale=1e-3)
        f = random_field(rng, 200, 2.0)
        psi0 = random_unit(rng, 4)
        ex = P.propagate_exact(spec, f, psi0)
        free = P.propagate_exact(system.SystemSpec(spec.dims, spec.kinetic, spec.control), f, psi0)
        # dropping the coupling costs O(lambda); the first-order exponent recovers all but O(lambda^2)
        assert np.linalg.norm(P.propagate_magnus1(spec, f, psi0) - ex) < 0.02 * np.linalg.norm(free - ex)

    @given(st.integers(0, 2**31), st.sampled_from(["exact", "zeroth", "magnus1", "magnus2"]))
    def test_unit_norm(self, seed, method):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, (3, 2), coupling_scale=0.5, with_terms=True)
        f = random_field(rng, 10, 2.0)
        factors = [random_unit(rng, 3), random_unit(rng, 2)]
        assert abs(np.linalg.norm(P.propagate(method, spec, f, factors)) - 1) <= 1e-9

    def test_counts_one_full_space_action(self):
        spec = system.build_rotor_system(system.RotorGeometry.two_rotor(5e-9), 2)
        f = fields.trial_field(fields.TrialFieldParams(3.0, (0.2, 0.3), 10.0), 100)
        for method, want in (("magnus1", 1), ("magnus2", 1), ("exact", 100), ("zeroth", 0)):
            with track() as counts:
                P.propagate(method, spec, f, system.ground_product_state(spec))
            assert counts["expm_multiply"] == want, method

    def test_unknown_method(self, rng):
        spec = random_spec(rng, (2,))
        with pytest.raises(ConfigError):
            P.propagate("rk4", spec, random_field(rng, 2, 1.0), np.array([1.0, 0.0]))

    def test_magnus2_improves_weak_coupling(self):
        spec = system.build_rotor_system(system.RotorGeometry.two_rotor(7e-9), 2)
        f = fields.random_test_field(np.random.default_rng(5), 400, 20.0 / 400, 3.0)
        x = system.ground_product_state(spec)
        ex = P.propagate_exact(spec, f, x)
        d1 = 1 - P.overlap(P.propagate_magnus1(spec, f, x), ex)
        d2 = 1 - P.overlap(P.propagate_magnus2(spec, f, x), ex)
        assert d2 < d1


def test_overlap():
    a = np.array([1, 0], dtype=complex)
    assert P.overlap(a, 1j * a) == 1.0
    assert P.overlap(a, np.array([0, 1])) == 0.0
    assert math.isclose(P.overlap(a, np.array([1, 1]) / math.sqrt(2)), 1 / math.sqrt(2))
