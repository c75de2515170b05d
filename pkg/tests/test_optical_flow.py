import numpy as np
import pytest

from irseg.errors import DimensionMismatchError
from irseg.image import FlowField, Frame, ScalarField
from irseg.optical_flow import (
    Gradients,
    HsParams,
    compute_gradients,
    flow_magnitude,
    horn_schunck,
    hs_energy,
    save_flow_csv,
)


def translation_texture(h=64, w=64):
    """Periodic texture rich enough that a 1-px shift is recovered quickly."""
    y, x = np.mgrid[0:h, 0:w].astype(float)
    fx, fy = 2 * np.pi / w, 2 * np.pi / h
    comps = [
        (1.0, 12, 0, 1.0),
        (1.0, 0, 12, 0.5),
        (0.8, 10, 8, 1.3),
        (0.8, 8, -10, 2.1),
        (0.6, 14, 6, 0.4),
        (0.6, -6, 14, 2.8),
    ]
    img = np.zeros((h, w))
    for amp, kx, ky, phase in comps:
        img += amp * np.sin(kx * fx * x + ky * fy * y + phase)
    return 0.5 + 0.49 * img / np.abs(img).max()


def translation_pair():
    img = translation_texture()
    return Frame(img), Frame(np.roll(img, 1, axis=1))


def noisy_translation_pair(noise=0.02, seed=42):
    img = translation_texture()
    rng = np.random.default_rng(seed)
    f1 = np.clip(img + rng.normal(0, noise, img.shape), 0, 1)
    f2 = np.clip(np.roll(img, 1, axis=1) + rng.normal(0, noise, img.shape), 0, 1)
    return Frame(f1), Frame(f2)


class TestGradients:
    def test_identical_frames_zero_temporal(self):
        rng = np.random.default_rng(1)
        f = Frame(rng.uniform(0, 1, (8, 8)))
        g = compute_gradients(f, f)
        np.testing.assert_allclose(g.it.data, 0.0)

    def test_flat_frames_all_zero(self):
        f = Frame(np.full((6, 6), 0.5))
        g = compute_gradients(f, f)
        for field in (g.ix, g.iy, g.it):
            np.testing.assert_allclose(field.data, 0.0)

    def test_horizontal_ramp(self):
        # value(x, y) = x / (w - 1): averaged forward differences give the
        # exact slope at every stencil position, and the replicated last
        # row/column inherit it.
        w, h = 9, 6
        x = np.tile(np.arange(w, dtype=float), (h, 1))
        f = Frame(x / (w - 1))
        g = compute_gradients(f, f)
        np.testing.assert_allclose(g.ix.data, 1.0 / (w - 1), atol=1e-12)
        np.testing.assert_allclose(g.iy.data, 0.0, atol=1e-12)
        np.testing.assert_allclose(g.it.data, 0.0, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            compute_gradients(Frame(np.zeros((4, 4))), Frame(np.zeros((5, 5))))

    def test_mismatched_gradient_fields_rejected(self):
        a = ScalarField(np.zeros((3, 3)))
        b = ScalarField(np.zeros((4, 4)))
        with pytest.raises(DimensionMismatchError):
            Gradients(a, a, b)


class TestHornSchunck:
    def test_zero_motion_is_fixed_point(self):
        rng = np.random.default_rng(2)
        f = Frame(rng.uniform(0, 1, (16, 16)))
        flow, iterations, energy = horn_schunck(f, f, HsParams(alpha=1.0, max_iters=50, tol=1e-4))
        np.testing.assert_array_equal(flow.u, 0.0)
        np.testing.assert_array_equal(flow.v, 0.0)
        assert iterations == 1

    def test_constant_frames_zero_energy(self):
        f = Frame(np.full((8, 8), 0.5))
        for alpha in (0.5, 1.0, 3.0):
            _, _, energy = horn_schunck(f, f, HsParams(alpha=alpha, max_iters=10))
            assert energy == 0.0

    def test_translation_recovery(self):
        f1, f2 = translation_pair()
        flow, _, _ = horn_schunck(f1, f2, HsParams(alpha=1.0, max_iters=200, tol=0.0))
        m = 4
        epe = np.sqrt((flow.u[m:-m, m:-m] - 1.0) ** 2 + flow.v[m:-m, m:-m] ** 2).mean()
        assert epe < 0.3

    def test_energy_non_increasing_in_windows(self):
        f1, f2 = translation_pair()
        prev = None
        for iters in range(10, 201, 10):
            _, _, energy = horn_schunck(f1, f2, HsParams(alpha=1.0, max_iters=iters, tol=0.0))
            if prev is not None:
                assert energy <= prev * (1 + 1e-9)
            prev = energy

    def test_larger_alpha_smoother_flow(self):
        f1, f2 = noisy_translation_pair()
        variances = []
        for alpha in (0.5, 1.0, 5.0, 20.0):
            flow, _, _ = horn_schunck(f1, f2, HsParams(alpha=alpha, max_iters=200, tol=0.0))
            variances.append(flow.u.var())
        for a, b in zip(variances, variances[1:]):
            assert b <= a + 1e-12

    def test_outputs_always_finite(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            f1 = Frame(rng.uniform(0, 1, (12, 10)))
            f2 = Frame(rng.uniform(0, 1, (12, 10)))
            flow, _, energy = horn_schunck(f1, f2, HsParams(alpha=0.3, max_iters=40))
            assert np.all(np.isfinite(flow.u)) and np.all(np.isfinite(flow.v))
            assert np.isfinite(energy)


class TestHsEnergy:
    def test_zero_everything(self):
        zeros = ScalarField(np.zeros((4, 4)))
        g = Gradients(zeros, zeros, zeros)
        flow = FlowField(np.zeros((4, 4)), np.zeros((4, 4)))
        assert hs_energy(flow, g, alpha=1.0) == 0.0

    def test_pure_temporal_term(self):
        c = 0.3
        n = 5 * 7
        zeros = ScalarField(np.zeros((5, 7)))
        g = Gradients(zeros, zeros, ScalarField(np.full((5, 7), c)))
        flow = FlowField(np.zeros((5, 7)), np.zeros((5, 7)))
        np.testing.assert_allclose(hs_energy(flow, g, 2.0), n * c * c)

    def test_matches_scalar_reference_on_2x2(self):
        # Independent scalar evaluation of the discrete energy on a 2x2
        # grid with hand-set values.
        u = np.array([[1.0, 2.0], [3.0, 4.0]])
        v = np.array([[0.0, 1.0], [-1.0, 2.0]])
        ix = np.array([[0.1, 0.2], [0.3, 0.4]])
        iy = np.array([[-0.1, 0.05], [0.2, -0.3]])
        it = np.array([[0.05, -0.05], [0.1, 0.0]])
        alpha = 0.7

        def fwd(f, y, x, axis):
            if axis == 1:
                return f[y, x + 1] - f[y, x] if x + 1 < f.shape[1] else 0.0
            return f[y + 1, x] - f[y, x] if y + 1 < f.shape[0] else 0.0

        expected = 0.0
        for y in range(2):
            for x in range(2):
                residual = ix[y, x] * u[y, x] + iy[y, x] * v[y, x] + it[y, x]
                smooth = (
                    fwd(u, y, x, 1) ** 2
                    + fwd(u, y, x, 0) ** 2
                    + fwd(v, y, x, 1) ** 2
                    + fwd(v, y, x, 0) ** 2
                )
                expected += residual**2 + alpha**2 * smooth
        got = hs_energy(
            FlowField(u, v),
            Gradients(ScalarField(ix), ScalarField(iy), ScalarField(it)),
            alpha,
        )
        np.testing.assert_allclose(got, expected, rtol=1e-12)
        # frozen value from the scalar reference above
        np.testing.assert_allclose(got, 12.6025, atol=1e-9)


class TestFlowMagnitude:
    def test_three_four_five(self):
        flow = FlowField(np.full((3, 3), 3.0), np.full((3, 3), 4.0))
        np.testing.assert_allclose(flow_magnitude(flow).data, 5.0)

    def test_zero(self):
        flow = FlowField(np.zeros((2, 2)), np.zeros((2, 2)))
        np.testing.assert_allclose(flow_magnitude(flow).data, 0.0)

    def test_unit_diagonal(self):
        flow = FlowField(np.ones((2, 2)), np.ones((2, 2)))
        np.testing.assert_allclose(flow_magnitude(flow).data, np.sqrt(2.0))


def test_flow_csv_dump(tmp_path):
    flow = FlowField(np.array([[1.5, -2.25], [0.125, 3.0]]), np.zeros((2, 2)))
    save_flow_csv(flow, tmp_path)
    u_text = (tmp_path / "u.csv").read_text().strip().splitlines()
    assert u_text[0] == "1.5,-2.25"
    assert u_text[1] == "0.125,3"
