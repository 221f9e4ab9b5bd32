import numpy as np
import pytest

from blendqc.cauchy_born import calibrate_potential
from blendqc.lattice import DefectSpec
from blendqc.metrics import (ErrorReport, defect_energy,
                             discrete_energy_norm_error,
                             fit_convergence_slope)
from blendqc.models import build_model
from blendqc.potentials import make_potential
from blendqc.solvers import minimize_energy


@pytest.fixture(scope="module")
def atm_pair():
    pot, a = calibrate_potential(make_potential("morse_pair"))
    defect = DefectSpec(kind="vacancy", core_radius=1.5 * a)
    model = build_model("ATM", pot, a, r_domain=6 * a, defect=defect)
    return model, a


class TestEnergyNorm:
    def test_identical_solutions_zero(self, atm_pair):
        model, a = atm_pair
        rng = np.random.default_rng(0)
        x = 0.01 * rng.standard_normal(model.n_free)
        assert discrete_energy_norm_error(model, x, model, x, 3 * a) == 0.0

    def test_translation_invariance(self, atm_pair):
        # seminorm: a rigid shift of either field is invisible
        model, a = atm_pair
        rng = np.random.default_rng(1)
        x = 0.01 * rng.standard_normal(model.n_free)
        shift = np.tile([0.03, -0.01, 0.02], model.n_free // 3)
        err = discrete_energy_norm_error(model, x + shift, model, x, 3 * a)
        assert err < 1e-12

    def test_single_site_perturbation(self, atm_pair):
        # perturbing one interior site by delta changes 12 NN bonds
        model, a = atm_pair
        x = np.zeros(model.n_free)
        pos = model.lattice.positions[model.free_nodes]
        # pick the free site closest to a point well inside the ball
        target = np.array([1.5 * a, 0.0, 0.0])
        k = int(np.argmin(np.linalg.norm(pos - target, axis=1)))
        delta = np.array([1e-3, -2e-3, 5e-4])
        y = x.copy()
        y[3 * k:3 * k + 3] = delta
        err = discrete_energy_norm_error(model, y, model, x, 3 * a)
        assert err == pytest.approx(np.sqrt(12) * np.linalg.norm(delta), rel=1e-12)

    def test_homogeneity(self, atm_pair):
        model, a = atm_pair
        rng = np.random.default_rng(2)
        x = 0.01 * rng.standard_normal(model.n_free)
        z = np.zeros_like(x)
        e1 = discrete_energy_norm_error(model, x, model, z, 3 * a)
        e2 = discrete_energy_norm_error(model, 2.0 * x, model, z, 3 * a)
        assert e2 == pytest.approx(2.0 * e1, rel=1e-12)


class TestDefectEnergy:
    def test_relaxation_releases_energy(self, atm_pair):
        model, a = atm_pair
        res = minimize_energy(model)
        assert res.converged
        e = defect_energy(model, res.displacement)
        assert e < 0

    def test_two_radius_truncation(self):
        # far-field truncation: defect energies agree better as R grows
        pot, a = calibrate_potential(make_potential("morse_pair"))
        defect = DefectSpec(kind="vacancy", core_radius=1.5 * a)
        vals = []
        for rd in (5, 7, 10):
            m = build_model("ATM", pot, a, r_domain=rd * a, defect=defect)
            r = minimize_energy(m)
            assert r.converged
            vals.append(defect_energy(m, r.displacement))
        assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])


class TestSlopeFit:
    def test_exact_power_law(self):
        pts = [(10.0, 0.1), (100.0, 0.01), (1000.0, 0.001)]
        assert fit_convergence_slope(pts) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_error(self):
        pts = [(10.0, 0.5), (100.0, 0.5), (1000.0, 0.5)]
        assert fit_convergence_slope(pts) == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_point_error(self):
        with pytest.raises(ValueError, match="degenerate point"):
            fit_convergence_slope([(10.0, 0.1), (100.0, 0.0), (1000.0, 0.001)])

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_convergence_slope([(10.0, 0.1), (100.0, 0.01)])


class TestErrorReport:
    def test_valid(self):
        r = ErrorReport("BGFC", 4.0, 300, 1e-3, 1e-4, 0.0, 12, 1.5)
        assert r.ndof == 300

    def test_invalid_dof(self):
        with pytest.raises(ValueError):
            ErrorReport("BGFC", 4.0, 0, 1e-3, 1e-4, 0.0, 12, 1.5)

    def test_negative_error(self):
        with pytest.raises(ValueError):
            ErrorReport("BGFC", 4.0, 10, -1e-3, 1e-4, 0.0, 12, 1.5)
