import numpy as np
import pytest

from uqseg.core import dsc, threshold
from uqseg.metrics import atlas_score, mutual_information, pixel_variance, predictive_entropy
from uqseg.synth import (
    PhantomSpec,
    boundary_band,
    cohort_image,
    generate_cohort,
    generate_phantom,
    perturb_stack,
    smooth_field,
)


class TestPhantom:
    def test_hard_limit(self):
        gt, base = generate_phantom(PhantomSpec(boundary_softness=1e-9))
        np.testing.assert_array_equal(threshold(base, 0.5), gt)
        gt0, base0 = generate_phantom(PhantomSpec(boundary_softness=0.0))
        np.testing.assert_array_equal(threshold(base0, 0.5), gt0)

    def test_deterministic(self):
        spec = PhantomSpec(seed=3, boundary_softness=2.0)
        a, b = generate_phantom(spec), generate_phantom(spec)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    @pytest.mark.parametrize("softness", [0.25, 0.5, 1.0])
    def test_soft_boundary_agrees_with_gt(self, softness):
        gt, base = generate_phantom(PhantomSpec(128, 128, a=30, b=20, boundary_softness=softness))
        assert dsc(threshold(base, 0.5), gt) >= 0.99

    def test_area(self):
        gt, _ = generate_phantom(PhantomSpec(a=30, b=20))
        assert gt.sum() == pytest.approx(np.pi * 30 * 20, rel=0.02)

    def test_out_of_bounds(self):
        with pytest.raises(ValueError):
            PhantomSpec(64, 64, cx=10, cy=32, a=9, b=5)


class TestPerturb:
    base = generate_phantom(PhantomSpec(64, 64, 31.5, 31.5, 15, 10, 1.0))[1]

    def test_severity_zero(self):
        stack = perturb_stack(self.base, 6, 0.0, 1)
        assert np.all(pixel_variance(stack) == 0.0)
        assert np.array_equal(stack[3], self.base)

    def test_severity_monotone(self):
        lo = pixel_variance(perturb_stack(self.base, 10, 0.2, 5)).mean()
        hi = pixel_variance(perturb_stack(self.base, 10, 0.8, 5)).mean()
        assert hi > lo

    def test_deterministic(self):
        assert np.array_equal(perturb_stack(self.base, 4, 0.5, 9), perturb_stack(self.base, 4, 0.5, 9))

    def test_range(self):
        s = perturb_stack(self.base, 5, 1.0, 2)
        assert s.min() >= 0.0 and s.max() <= 1.0

    def test_smooth_field_unit_variance(self):
        f = smooth_field(np.random.default_rng(0), (256, 256))
        assert f[20:-20, 20:-20].std() == pytest.approx(1.0, abs=0.1)
        # neighbouring pixels are strongly correlated
        assert np.corrcoef(f[:, :-1].ravel(), f[:, 1:].ravel())[0, 1] > 0.8

    def test_band_peaks_at_boundary(self):
        gt, base = generate_phantom(PhantomSpec(64, 64, 31.5, 31.5, 15, 10, 0.0))
        band = boundary_band(base)
        assert band[31, 31] < 0.05 and band[0, 0] < 0.05
        assert band[31, 31 + 15] > 0.8


class TestCohort:
    def test_pristine_pair(self):
        cohort = generate_cohort(2, (0.0, 0.0), seed=1, size=64, samples=4)
        assert len(cohort) == 2
        for im in cohort:
            assert dsc(im.reference, im.gt) >= 0.99

    def test_zero_severity_zero_uncertainty(self):
        im = cohort_image(0, 0.0, seed=3, size=64, samples=5)
        assert np.all(pixel_variance(im.stack) == 0)
        assert np.all(predictive_entropy(im.stack) == 0)
        assert np.all(mutual_information(im.stack) == 0)
        assert atlas_score(im.stack, im.reference, 0.5).uncertainty == 0.0

    def test_deterministic(self):
        a = generate_cohort(3, (0.1, 0.5), seed=8, size=48, samples=3)
        b = generate_cohort(3, (0.1, 0.5), seed=8, size=48, samples=3)
        for x, y in zip(a, b):
            assert x.image_id == y.image_id and x.severity == y.severity
            assert np.array_equal(x.stack, y.stack) and np.array_equal(x.reference, y.reference)

    def test_severities_even(self):
        c = generate_cohort(5, (0.0, 0.8), seed=0, size=32, samples=2)
        assert [im.severity for im in c] == pytest.approx([0.0, 0.2, 0.4, 0.6, 0.8])

    def test_images_independent_of_cohort_size(self):
        a = cohort_image(1, 0.3, seed=4, size=48, samples=3)
        b = generate_cohort(4, (0.0, 0.9), seed=4, size=48, samples=3)[1]
        assert np.array_equal(a.stack, b.stack)

    def test_reference_degrades(self):
        clean = cohort_image(0, 0.05, seed=2, size=64, samples=3)
        noisy = cohort_image(0, 0.9, seed=2, size=64, samples=3)
        assert dsc(noisy.reference, noisy.gt) < dsc(clean.reference, clean.gt)

    @pytest.mark.parametrize("args", [(1, (0, 0.9)), (5, (0.5, 0.2)), (5, (0, 1.5))])
    def test_validation(self, args):
        with pytest.raises(ValueError):
            generate_cohort(*args)
