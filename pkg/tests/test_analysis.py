import numpy as np
import pytest

from optlab.analysis import (
    FlatnessSlice,
    HessianReport,
    default_hvp_step,
    flatness_slice,
    hessian_2d,
    hessian_report,
    hessian_report_2d,
    hutchinson_trace,
    hvp,
    top_eigs,
    write_slice_csv,
)
from optlab.landscape import Landscape, quadratic, two_basin
from optlab.nn import loss_and_grad, make_network, make_two_moons
from optlab.runio import read_csv


def rotated_quadratic(angle, eigs=(3.0, 1.0)):
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    mat = rot @ np.diag(eigs) @ rot.T
    return Landscape(
        name="rotated",
        loss=lambda x, y: 0.5 * np.array([x, y]) @ mat @ np.array([x, y]),
        grad=lambda x, y: mat @ np.array([x, y]),
        domain=(-10, 10, -10, 10),
    ), mat


class TestHessian2D:
    def test_diagonal_quadratic(self):
        hess, eigs, _ = hessian_2d(quadratic(), (0.4, -0.7))
        assert np.allclose(eigs, [3.0, 1.0], atol=1e-6)
        assert eigs[0] + eigs[1] == pytest.approx(4.0, abs=1e-6)

    def test_trace_equals_eigenvalue_sum_exactly(self):
        report = hessian_report_2d(quadratic(), (1.0, 2.0))
        assert report.trace_estimate == report.top_eigenvalues[0] + report.top_eigenvalues[1]
        assert report.trace_stderr == 0.0
        assert report.num_probes == 0

    def test_rotation_invariance(self):
        surface, mat = rotated_quadratic(np.pi / 4)
        hess, eigs, vecs = hessian_2d(surface, (0.1, 0.2))
        assert np.allclose(eigs, [3.0, 1.0], atol=1e-8)
        # eigenvectors diagonalize the rotated matrix
        assert np.allclose(vecs.T @ mat @ vecs, np.diag(eigs), atol=1e-6)

    def test_two_basin_sharp_center(self):
        surface = two_basin()
        point = surface.known_minima[0].position
        _, eigs, _ = hessian_2d(surface, tuple(point))
        assert np.all(np.abs(eigs - 100.0) / 100.0 <= 1e-3)

    def test_symmetry_of_returned_matrix(self):
        surface, _ = rotated_quadratic(0.3)
        hess, _, _ = hessian_2d(surface, (1.0, -1.0))
        assert hess[0, 1] == hess[1, 0]

    def test_boundary_rejected(self):
        with pytest.raises(ValueError, match="boundary"):
            hessian_2d(quadratic(), (10.0, 0.0), h=1e-3)


class TestHVP:
    def test_exact_on_quadratic_for_any_step(self):
        mat = np.diag([3.0, 1.0])
        grad_fn = lambda th: mat @ th
        for h in (1e-8, 1e-4, 0.1, 1.0, 7.3):
            out = hvp(grad_fn, np.zeros(2), np.array([1.0, 0.0]), h=h)
            assert np.allclose(out, [3.0, 0.0], atol=1e-9)

    def test_scales_with_direction_norm(self):
        mat = np.diag([2.0, 5.0])
        grad_fn = lambda th: mat @ th
        d = np.array([3.0, -4.0])
        assert np.allclose(hvp(grad_fn, np.zeros(2), d), mat @ d, atol=1e-8)

    def test_zero_direction_rejected(self):
        with pytest.raises(ValueError, match="nonzero"):
            hvp(lambda th: th, np.zeros(3), np.zeros(3))

    def test_nonpositive_step_rejected(self):
        with pytest.raises(ValueError, match="h must be"):
            hvp(lambda th: th, np.zeros(2), np.ones(2), h=0.0)

    def test_nonfinite_gradient_rejected(self):
        def bad(th):
            return np.full_like(th, np.inf)

        with pytest.raises(ValueError, match="non-finite"):
            hvp(bad, np.zeros(2), np.ones(2))

    def test_default_step_scales_with_theta(self):
        assert default_hvp_step(np.zeros(3)) == pytest.approx(1e-4)
        assert default_hvp_step(np.full(4, 10.0)) == pytest.approx(1e-4 * 21.0)

    def test_symmetry_on_trained_net(self):
        ds = make_two_moons(60, 0.2, 0)
        net = make_network([2, 8, 2], seed=0)
        grad_fn = lambda th: loss_and_grad(net, ds.inputs, ds.labels, th)[1]
        rng = np.random.default_rng(1)
        for _ in range(5):
            d1 = rng.standard_normal(net.p)
            d2 = rng.standard_normal(net.p)
            left = d2 @ hvp(grad_fn, net.params, d1)
            right = d1 @ hvp(grad_fn, net.params, d2)
            rel = abs(left - right) / max(abs(left), abs(right), 1e-12)
            assert rel <= 1e-3


def known_operator(p=40, lo=0.2, hi=6.0, seed=5):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((p, p)))
    spectrum = np.linspace(lo, hi, p)
    mat = basis @ np.diag(spectrum) @ basis.T
    return mat, spectrum


class TestTopEigs:
    def test_diagonal_two_by_two(self):
        mat = np.diag([3.0, 1.0])
        eigs, conv = top_eigs(lambda d: mat @ d, 2, 2, iters=500, seed=0)
        assert np.allclose(eigs, [3.0, 1.0], atol=1e-6)
        assert all(conv)

    def test_recovers_leading_spectrum(self):
        mat, spectrum = known_operator()
        eigs, conv = top_eigs(lambda d: mat @ d, 40, 3, iters=2000, seed=2)
        assert np.allclose(eigs, spectrum[-3:][::-1], atol=1e-4)

    def test_descending_order(self):
        mat, _ = known_operator()
        eigs, _ = top_eigs(lambda d: mat @ d, 40, 4, iters=2000, seed=3)
        assert all(a >= b for a, b in zip(eigs, eigs[1:]))

    def test_rayleigh_upper_bound(self):
        # no returned eigenvalue exceeds the true spectral radius
        mat, spectrum = known_operator()
        eigs, _ = top_eigs(lambda d: mat @ d, 40, 3, iters=300, seed=4)
        assert max(eigs) <= spectrum[-1] + 1e-8

    def test_nonconvergence_flagged(self):
        mat = np.diag([1.0, 1.0 - 1e-12, 0.5])  # nearly degenerate pair
        _, conv = top_eigs(lambda d: mat @ d, 3, 1, iters=2, seed=0, tol=1e-15)
        assert conv == [False]

    def test_k_bounds(self):
        mat = np.eye(3)
        with pytest.raises(ValueError, match="k must be"):
            top_eigs(lambda d: mat @ d, 3, 4)
        with pytest.raises(ValueError, match="k must be"):
            top_eigs(lambda d: mat @ d, 3, 0)
        with pytest.raises(ValueError, match="k must be"):
            top_eigs(lambda d: np.zeros(20), 20, 11)


class TestHutchinson:
    def test_diagonal_operator_is_exact(self):
        # Rademacher probes square to 1, so z'Hz = trace exactly on diagonals
        mat = np.diag([3.0, 1.0])
        estimate, stderr = hutchinson_trace(lambda d: mat @ d, 2, 100, seed=0)
        assert estimate == pytest.approx(4.0, abs=1e-12)
        assert stderr == pytest.approx(0.0, abs=1e-12)

    def test_rotated_operator_within_three_stderr(self):
        mat, spectrum = known_operator()
        estimate, stderr = hutchinson_trace(lambda d: mat @ d, 40, 2000, seed=1)
        assert abs(estimate - spectrum.sum()) <= 3 * stderr

    def test_coverage_over_repeats(self):
        mat, spectrum = known_operator(p=30)
        truth = spectrum.sum()
        hits = 0
        for rep in range(100):
            estimate, stderr = hutchinson_trace(lambda d: mat @ d, 30, 256, seed=rep)
            hits += abs(estimate - truth) <= 3 * stderr
        assert hits >= 99

    def test_determinism(self):
        mat, _ = known_operator()
        a = hutchinson_trace(lambda d: mat @ d, 40, 64, seed=9)
        b = hutchinson_trace(lambda d: mat @ d, 40, 64, seed=9)
        assert a == b

    def test_min_probes(self):
        with pytest.raises(ValueError, match="4 probes"):
            hutchinson_trace(lambda d: d, 3, 3)


class TestFlatnessSlice:
    def quad_loss(self, scale=2.0, p=6):
        mat = scale * np.eye(p)
        return lambda th: 0.5 * th @ mat @ th

    def test_anchored_at_unperturbed_loss(self):
        loss_fn = self.quad_loss()
        slc = flatness_slice(loss_fn, np.zeros(6), np.linspace(-1, 1, 21), seed=0)
        assert slc.loss_at(0.0) == loss_fn(np.zeros(6))

    def test_determinism(self):
        loss_fn = self.quad_loss()
        a = flatness_slice(loss_fn, np.zeros(6), np.linspace(-1, 1, 11), seed=3)
        b = flatness_slice(loss_fn, np.zeros(6), np.linspace(-1, 1, 11), seed=3)
        assert np.array_equal(a.losses, b.losses)

    def test_even_function_on_quadratic(self):
        slc = flatness_slice(self.quad_loss(), np.zeros(6), np.linspace(-1, 1, 41), seed=1)
        assert np.max(np.abs(slc.losses - slc.losses[::-1])) <= 1e-8

    def test_direction_norm_is_sqrt_p(self):
        slc = flatness_slice(self.quad_loss(p=50), np.zeros(50), np.array([-0.5, 0.0, 0.5]), seed=2)
        assert slc.direction_norm == pytest.approx(np.sqrt(50))

    def test_grid_must_contain_zero(self):
        with pytest.raises(ValueError, match="contain 0"):
            flatness_slice(self.quad_loss(), np.zeros(6), np.array([0.5, 1.0]), seed=0)

    def test_default_grid(self):
        slc = flatness_slice(self.quad_loss(), np.zeros(6), seed=0)
        assert len(slc.zetas) == 41
        assert slc.zetas[0] == -1.0 and slc.zetas[-1] == 1.0

    def test_csv_export(self, tmp_path):
        slc = flatness_slice(self.quad_loss(), np.zeros(6), np.array([-0.5, 0.0, 0.5]), seed=0)
        path = tmp_path / "slice.csv"
        write_slice_csv(slc, path)
        header, rows = read_csv(path)
        assert header == ["zeta", "loss"]
        assert len(rows) == 3


class TestHessianReportNet:
    def test_report_on_small_net(self):
        ds = make_two_moons(60, 0.2, 0)
        net = make_network([2, 8, 2], seed=0)
        grad_fn = lambda th: loss_and_grad(net, ds.inputs, ds.labels, th)[1]
        report = hessian_report(grad_fn, net.params, k=2, iters=200, probes=16, seed=0)
        assert len(report.top_eigenvalues) == 2
        assert report.top_eigenvalues[0] >= report.top_eigenvalues[1]
        assert report.num_probes == 16
        assert np.isfinite(report.trace_estimate)
        payload = report.to_dict()
        assert set(payload) == {
            "top_eigenvalues",
            "trace_estimate",
            "trace_stderr",
            "num_probes",
            "hvp_step",
            "converged",
        }
