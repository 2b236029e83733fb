import math

import numpy as np
import pytest

from starkzz.errors import DimensionCapError, MultiFrequencyFrameError
from starkzz.operators import (CouplingKind, CouplingSpec, DriveTone, SystemSpec,
                               TransmonSpec, build_rwa_hamiltonian,
                               build_static_hamiltonian, bus_coupling,
                               direct_coupling, embed, is_hermitian, ladder_ops)


def two_transmon_system(nu0=4.96, nu1=5.016, al0=-0.283, al1=-0.287,
                        j=0.007745, levels=5, drives=()):
    return SystemSpec(
        transmons=(TransmonSpec(nu0, al0, levels), TransmonSpec(nu1, al1, levels)),
        couplings=(direct_coupling(0, 1, j),),
        drives=drives)


class TestLadderOps:
    def test_qubit_case(self):
        lowering, raising = ladder_ops(2)
        assert np.allclose(lowering, [[0, 1], [0, 0]])
        assert np.allclose(raising, lowering.conj().T)

    def test_three_levels(self):
        lowering, _ = ladder_ops(3)
        assert lowering[0, 1] == 1.0
        assert lowering[1, 2] == pytest.approx(math.sqrt(2))
        assert np.count_nonzero(lowering) == 2

    @pytest.mark.parametrize("levels", [2, 3, 5, 8])
    def test_number_operator_identity(self, levels):
        lowering, raising = ladder_ops(levels)
        assert np.allclose(raising @ lowering, np.diag(np.arange(levels)))

    def test_invalid_dimension(self):
        with pytest.raises(ValueError):
            ladder_ops(1)


class TestEmbed:
    def test_first_slot_is_left_kron_factor(self):
        x = np.array([[0, 1], [1, 0]], dtype=complex)
        assert np.allclose(embed(x, 0, [2, 2]), np.kron(x, np.eye(2)))
        assert np.allclose(embed(x, 1, [2, 2]), np.kron(np.eye(2), x))

    def test_identity_embeds_to_identity(self):
        dims = [2, 3, 4]
        for slot, d in enumerate(dims):
            assert np.allclose(embed(np.eye(d), slot, dims), np.eye(24))

    def test_disjoint_slots_commute(self):
        a, _ = ladder_ops(3)
        a0 = embed(a, 0, [3, 3])
        a1 = embed(a, 1, [3, 3])
        assert np.allclose(a0 @ a1 - a1 @ a0, 0)

    def test_errors(self):
        with pytest.raises(ValueError):
            embed(np.eye(2), 2, [2, 2])
        with pytest.raises(ValueError):
            embed(np.eye(3), 0, [2, 2])


class TestSpecValidation:
    def test_transmon_invariants(self):
        with pytest.raises(ValueError):
            TransmonSpec(5.0, -0.3, levels=1)
        with pytest.raises(ValueError):
            TransmonSpec(-5.0, -0.3)
        with pytest.raises(ValueError):
            TransmonSpec(5.0, 0.0)

    def test_coupling_field_discipline(self):
        with pytest.raises(ValueError):
            CouplingSpec(CouplingKind.DIRECT, (0, 1))  # missing strength
        with pytest.raises(ValueError):
            CouplingSpec(CouplingKind.BUS, (0, 1), strength=0.01)
        with pytest.raises(ValueError):
            CouplingSpec(CouplingKind.DIRECT, (1, 1), strength=0.01)

    def test_drive_phase_normalized(self):
        d = DriveTone(0, 0.01, 5.0, phase=-math.pi)
        assert 0.0 <= d.phase < 2 * math.pi
        assert d.phase == pytest.approx(math.pi)

    def test_duplicate_same_kind_coupling_rejected(self):
        with pytest.raises(ValueError):
            SystemSpec(
                transmons=(TransmonSpec(4.9, -0.3), TransmonSpec(5.0, -0.3)),
                couplings=(direct_coupling(0, 1, 0.01), direct_coupling(1, 0, 0.02)))

    def test_direct_plus_bus_on_same_pair_allowed(self):
        sys_b = SystemSpec(
            transmons=(TransmonSpec(4.85, -0.29), TransmonSpec(4.95, -0.29)),
            couplings=(direct_coupling(0, 1, 0.0106),
                       bus_coupling(0, 1, 6.35, (0.135, 0.135))))
        assert sys_b.dims == (5, 5, 3)

    def test_dimension_cap(self):
        with pytest.raises(DimensionCapError):
            SystemSpec(transmons=tuple(TransmonSpec(5.0, -0.3, 8) for _ in range(5)))
        # explicit override
        big = SystemSpec(transmons=tuple(TransmonSpec(5.0, -0.3, 8) for _ in range(5)),
                         dimension_cap=None)
        assert big.total_dimension == 8 ** 5


class TestStaticHamiltonian:
    def test_uncoupled_is_bare_duffing(self):
        system = two_transmon_system(j=0.0)
        h = build_static_hamiltonian(system)
        vals = np.sort(np.linalg.eigvalsh(h))
        expected = []
        for n0 in range(5):
            for n1 in range(5):
                expected.append(4.96 * n0 + 0.5 * -0.283 * n0 * (n0 - 1)
                                + 5.016 * n1 + 0.5 * -0.287 * n1 * (n1 - 1))
        assert np.allclose(vals, np.sort(expected), atol=1e-12)

    def test_hermitian(self):
        h = build_static_hamiltonian(two_transmon_system())
        assert is_hermitian(h)

    def test_device_b_matches_elementwise_oracle(self):
        """Independent index-by-index construction of the bus Hamiltonian."""
        nu0, nu1, al = 4.85, 4.95, -0.29
        j, g, nub = 0.0106, 0.135, 6.35
        lv, lb = 4, 3
        system = SystemSpec(
            transmons=(TransmonSpec(nu0, al, lv), TransmonSpec(nu1, al, lv)),
            couplings=(direct_coupling(0, 1, j), bus_coupling(0, 1, nub, (g, g), lb)))
        h = build_static_hamiltonian(system)

        dims = (lv, lv, lb)
        dim = lv * lv * lb

        def idx(n0, n1, nb):
            return (n0 * lv + n1) * lb + nb

        oracle = np.zeros((dim, dim), dtype=complex)
        for n0 in range(lv):
            for n1 in range(lv):
                for nb in range(lb):
                    i = idx(n0, n1, nb)
                    oracle[i, i] = (nu0 * n0 + 0.5 * al * n0 * (n0 - 1)
                                    + nu1 * n1 + 0.5 * al * n1 * (n1 - 1)
                                    + nub * nb)
                    # direct (a0+ + a0)(a1+ + a1): four ladder combinations
                    for s0, s1 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                        m0, m1 = n0 + s0, n1 + s1
                        if 0 <= m0 < lv and 0 <= m1 < lv:
                            w0 = math.sqrt(max(n0, m0))
                            w1 = math.sqrt(max(n1, m1))
                            oracle[idx(m0, m1, nb), i] += j * w0 * w1
                    # bus couplings
                    for (nq, qslot) in ((n0, 0), (n1, 1)):
                        for sq, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                            mq, mb = nq + sq, nb + sb
                            if 0 <= mq < lv and 0 <= mb < lb:
                                wq = math.sqrt(max(nq, mq))
                                wb = math.sqrt(max(nb, mb))
                                if qslot == 0:
                                    oracle[idx(mq, n1, mb), i] += g * wq * wb
                                else:
                                    oracle[idx(n0, mq, mb), i] += g * wq * wb
        assert h.shape == oracle.shape == (dim, dim)
        assert np.allclose(h, oracle, atol=1e-14)


class TestRwaHamiltonian:
    def test_diagonal_case(self):
        system = two_transmon_system(j=0.0)
        h = build_rwa_hamiltonian(system, 5.0)
        assert np.allclose(h, np.diag(np.diag(h)))
        n = np.arange(5)
        d0 = (4.96 - 5.0) * n + 0.5 * -0.283 * n * (n - 1)
        assert np.allclose(np.diag(h)[::5][:5].real, d0 + 0.0)

    def test_phase_periodicity(self):
        drives = (DriveTone(0, 0.02, 5.075, 0.7), DriveTone(1, 0.01, 5.075, 0.3))
        system = two_transmon_system(drives=drives)
        h1 = build_rwa_hamiltonian(system, 5.075)
        shifted = (DriveTone(0, 0.02, 5.075, 0.7 + 2 * math.pi),
                   DriveTone(1, 0.01, 5.075, 0.3))
        h2 = build_rwa_hamiltonian(system.with_drives(shifted), 5.075)
        assert np.allclose(h1, h2, atol=1e-14)

    def test_global_phase_gauge(self):
        """Only the phase difference is physical: spectra agree to 1e-12."""
        base = (DriveTone(0, 0.04, 5.075, math.pi), DriveTone(1, 0.02, 5.075, 0.0))
        offset = (DriveTone(0, 0.04, 5.075, math.pi + 1.234),
                  DriveTone(1, 0.02, 5.075, 1.234))
        system = two_transmon_system()
        e1 = np.linalg.eigvalsh(build_rwa_hamiltonian(system.with_drives(base), 5.075))
        e2 = np.linalg.eigvalsh(build_rwa_hamiltonian(system.with_drives(offset), 5.075))
        assert np.max(np.abs(e1 - e2)) < 1e-12

    def test_mixed_frequencies_rejected(self):
        drives = (DriveTone(0, 0.02, 5.1), DriveTone(1, 0.01, 4.9))
        system = two_transmon_system(drives=drives)
        with pytest.raises(MultiFrequencyFrameError):
            build_rwa_hamiltonian(system, 5.1)

    def test_frame_consistency_uncoupled(self):
        """Without coupling the frame shift is exactly -f per excitation."""
        from starkzz.spectrum import labeled_spectrum
        system = two_transmon_system(j=0.0)
        f = 5.05
        static_spec = labeled_spectrum(build_static_hamiltonian(system), system.dims)
        rwa_spec = labeled_spectrum(build_rwa_hamiltonian(system, f), system.dims,
                                    frame_frequency=f)
        for label in static_spec.labels:
            expected = static_spec.energy(label) - f * sum(label)
            assert rwa_spec.energy(label) == pytest.approx(expected, abs=1e-10)

    def test_frame_consistency_coupled_within_counterrotating_budget(self):
        """With J on, RWA and lab spectra differ only by counter-rotating
        level shifts, of order J^2 over the sum frequency."""
        from starkzz.spectrum import labeled_spectrum
        system = two_transmon_system()
        f = 5.0
        static_spec = labeled_spectrum(build_static_hamiltonian(system), system.dims)
        rwa_spec = labeled_spectrum(build_rwa_hamiltonian(system, f), system.dims,
                                    frame_frequency=f)
        budget = 20 * 0.007745 ** 2 / (4.96 + 5.016)
        for label in static_spec.labels:
            if sum(label) > 2:
                continue
            diff = abs(rwa_spec.energy(label) + f * sum(label) - static_spec.energy(label))
            assert diff < budget

    def test_drive_term_structure(self):
        system = SystemSpec(transmons=(TransmonSpec(5.0, -0.3, 2),),
                            drives=(DriveTone(0, 0.02, 5.0, 0.5),))
        h = build_rwa_hamiltonian(system, 5.0)
        assert h[1, 0] == pytest.approx(0.01 * np.exp(1j * 0.5))
        assert h[0, 1] == pytest.approx(0.01 * np.exp(-1j * 0.5))
