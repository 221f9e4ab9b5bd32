import numpy as np
import pytest

from blendqc.cauchy_born import (CBDensity, InvertedElementError,
                                 calibrate_lattice_constant,
                                 calibrate_potential, cb_energy_density,
                                 cb_stress, perfect_shell)
from blendqc.potentials import MorsePair, ToyEAM, make_potential, site_energy


@pytest.fixture(scope="module")
def morse():
    return calibrate_potential(make_potential("morse_pair"))


@pytest.fixture(scope="module")
def eam():
    return calibrate_potential(make_potential("toy_eam"))


def test_shell_counts():
    # cutoff 1.4a reaches the third FCC shell: 12 + 6 + 24 vectors
    shell = perfect_shell(1.0, 1.4)
    assert shell.shape == (42, 3)
    d = np.sort(np.linalg.norm(shell, axis=1))
    assert d[0] == pytest.approx(1 / np.sqrt(2))
    assert np.sum(np.abs(d - d[0]) < 1e-9) == 12
    assert np.sum(np.abs(d - 1.0) < 1e-9) == 6
    assert np.sum(np.abs(d - np.sqrt(1.5)) < 1e-9) == 24


def test_shell_inversion_symmetric():
    shell = perfect_shell(1.3, 1.4 * 1.3)
    s = set(map(tuple, np.round(shell * 1e9).astype(np.int64)))
    assert all((-i, -j, -k) in s for i, j, k in s)


class TestCalibration:
    def test_stationarity(self, morse):
        # scan oracle: energy of the scaled shell is stationary at a*
        pot, a = morse
        shell = perfect_shell(a, pot.cutoff)
        h = 1e-6

        def e(s):
            return site_energy(pot, shell * s)

        deriv = (e(1 + h) - e(1 - h)) / (2 * h)
        assert abs(deriv) < 1e-7
        assert e(1.0) < min(e(0.99), e(1.01))

    def test_scan_oracle_locates_same_minimum(self, morse):
        pot, a = morse
        gen = perfect_shell(1.0, pot.cutoff / a)
        s = np.linspace(1.2, 1.6, 2001)
        e = np.array([site_energy(pot, gen * si) for si in s])
        assert abs(s[int(np.argmin(e))] - a) < 1e-3

    def test_rerun_deterministic(self):
        a1 = calibrate_potential(make_potential("morse_pair"))[1]
        a2 = calibrate_potential(make_potential("morse_pair"))[1]
        assert abs(a1 - a2) < 1e-12

    def test_sanity_window(self, morse, eam):
        assert 1.2 < morse[1] < 1.6
        # the embedding term contracts the lattice, so only positivity here
        assert 0.5 < eam[1] < 1.6

    def test_monotone_in_alpha(self):
        # stiffer wells pull the equilibrium spacing toward r_nn * sqrt(2)
        avals = [calibrate_potential(MorsePair(alpha=al))[1]
                 for al in (4.0, 4.4, 5.0, 6.0)]
        diffs = np.diff(avals)
        assert np.all(diffs < 0) or np.all(diffs > 0)

    def test_bracket_invalid_error(self):
        with pytest.raises(ValueError, match="bracket invalid"):
            calibrate_lattice_constant(MorsePair(), bracket=(1.7, 1.8))


class TestEnergyDensity:
    def test_identity_matches_site_energy(self, morse):
        pot, a = morse
        cb = CBDensity(pot, a)
        w = cb_energy_density(cb, np.eye(3))
        direct = site_energy(pot, cb.reference_shell) / cb.cell_volume
        assert w == pytest.approx(direct, rel=1e-14)

    def test_cell_volume(self, morse):
        pot, a = morse
        assert CBDensity(pot, a).cell_volume == pytest.approx(a**3 / 4)

    def test_frame_indifference_under_rotation(self, morse):
        pot, a = morse
        cb = CBDensity(pot, a)
        rng = np.random.default_rng(5)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        F = np.eye(3) + 0.02 * rng.standard_normal((3, 3))
        assert cb_energy_density(cb, q @ F) == pytest.approx(
            cb_energy_density(cb, F), rel=1e-12)

    def test_batched_matches_scalar(self, eam):
        pot, a = eam
        cb = CBDensity(pot, a)
        rng = np.random.default_rng(8)
        Fs = np.eye(3) + 0.03 * rng.standard_normal((6, 3, 3))
        batch = cb_energy_density(cb, Fs)
        for k in range(6):
            assert batch[k] == pytest.approx(cb_energy_density(cb, Fs[k]), rel=1e-13)

    def test_inverted_element_error(self, morse):
        pot, a = morse
        cb = CBDensity(pot, a)
        with pytest.raises(InvertedElementError, match="inverted element"):
            cb_energy_density(cb, np.diag([1.0, 1.0, -1.0]))


class TestStress:
    @pytest.mark.parametrize("fix", ["morse", "eam"])
    def test_fd_oracle(self, fix, request):
        pot, a = request.getfixturevalue(fix)
        cb = CBDensity(pot, a)
        rng = np.random.default_rng(21)
        h = 1e-6
        for _ in range(5):
            F = np.eye(3) + 0.03 * rng.standard_normal((3, 3))
            S = cb_stress(cb, F)
            fd = np.zeros((3, 3))
            for i in range(3):
                for j in range(3):
                    P = F.copy(); P[i, j] += h
                    M = F.copy(); M[i, j] -= h
                    fd[i, j] = (cb_energy_density(cb, P)
                                - cb_energy_density(cb, M)) / (2 * h)
            assert np.abs(S - fd).max() < 1e-6

    def test_zero_at_equilibrium(self, morse):
        pot, a = morse
        S = cb_stress(CBDensity(pot, a), np.eye(3))
        assert np.abs(S).max() < 1e-10
