import math
import time

import numpy as np
import pytest

from pdd_forge import autodiff as ad
from pdd_forge.autodiff import ShapeError, Tensor
from pdd_forge.blocks import ResidualStackSpec, UpsamplerSpec
from pdd_forge.gradcheck import check
from pdd_forge.teacher import LOG_SIGMA_FLOOR, TeacherOutput, TeacherWaveNet, teacher_nll

SPEC = ResidualStackSpec(4, 2, 8, 8, 3, conditioning_channels=6)
UPS = UpsamplerSpec((2, 2))


@pytest.fixture
def teacher():
    return TeacherWaveNet(SPEC, UPS, seed=3)


def _cond(rng, T, C=6):
    return Tensor(rng.standard_normal((1, T, C)))


class TestForward:
    def test_shapes_and_clamp_on_zero_input(self, teacher, rng):
        out = teacher(np.zeros((2, 30)), Tensor(np.zeros((2, 30, 6))))
        assert out.mu.shape == out.log_sigma.shape == (2, 30)
        assert np.all(np.isfinite(out.mu.data))
        assert np.all(out.log_sigma.data >= LOG_SIGMA_FLOOR)

    def test_length_mismatch(self, teacher, rng):
        with pytest.raises(ShapeError):
            teacher(np.zeros((1, 30)), _cond(rng, 29))

    def test_last_sample_does_not_affect_earlier_outputs(self, teacher, rng):
        x = rng.uniform(-1, 1, (1, 40))
        cond = _cond(rng, 40)
        a = teacher(x, cond)
        x2 = x.copy()
        x2[0, -1] += 0.7
        b = teacher(x2, cond)
        np.testing.assert_array_equal(a.mu.data, b.mu.data)
        np.testing.assert_array_equal(a.log_sigma.data, b.log_sigma.data)

    @pytest.mark.parametrize("t", [0, 7, 19, 33])
    def test_output_at_t_independent_of_x_ge_t(self, teacher, rng, t):
        x = rng.uniform(-1, 1, (1, 40))
        cond = _cond(rng, 40)
        leaf = Tensor(x, requires_grad=True)
        ad.tsum(teacher(leaf, cond).mu[:, t]).backward()
        assert np.all(leaf.grad[0, t:] == 0)
        assert np.any(leaf.grad[0, :t] != 0) or t == 0

    def test_upsample_length(self, teacher, rng):
        assert teacher.upsample(rng.standard_normal((5, 6))).shape == (1, 20, 6)


class TestNLL:
    def test_at_mode_unit_sigma(self):
        x = np.linspace(-1, 1, 11)
        out = TeacherOutput(Tensor(x[None]), Tensor(np.zeros((1, 11))))
        assert teacher_nll(out, x).item() == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-15)
        assert teacher_nll(out, x).item() == pytest.approx(0.9189385332, abs=1e-9)

    def test_doubling_sigma_adds_log2(self):
        x = np.zeros((1, 8))
        a = teacher_nll(TeacherOutput(Tensor(x), Tensor(np.full((1, 8), 0.3))), x).item()
        b = teacher_nll(TeacherOutput(Tensor(x), Tensor(np.full((1, 8), 0.3 + math.log(2)))), x).item()
        assert b - a == pytest.approx(math.log(2), abs=1e-12)

    def test_matches_scipy_logpdf(self, rng):
        from scipy.stats import norm

        x, mu, ls = rng.standard_normal((3, 1, 20))
        nll = teacher_nll(TeacherOutput(Tensor(mu), Tensor(ls)), x).item()
        assert nll == pytest.approx(-np.mean(norm.logpdf(x, mu, np.exp(ls))), rel=1e-12)

    def test_gradient(self, rng):
        x = rng.standard_normal((1, 12))
        err = check(lambda mu, ls: teacher_nll(TeacherOutput(mu, ls), x), [rng.standard_normal((1, 12)), rng.uniform(-1, 1, (1, 12))])
        assert err < 1e-4

    def test_gradient_through_network(self, rng):
        t = TeacherWaveNet(ResidualStackSpec(2, 1, 3, 3, 3, conditioning_channels=2), UpsamplerSpec((1,)), seed=0)
        cond = rng.standard_normal((1, 9, 2))
        assert check(lambda x: teacher_nll(t(x, Tensor(cond)), x), [rng.uniform(-1, 1, (1, 9))]) < 1e-4


class TestSample:
    def test_same_seed_same_clip(self, teacher, rng):
        cond = rng.standard_normal((60, 6))
        a = teacher.sample(cond, seed=4, sample_rate=8000)
        b = teacher.sample(cond, seed=4, sample_rate=8000)
        assert a.samples.tobytes() == b.samples.tobytes()
        assert teacher.sample_iterations == 60
        assert np.all(np.abs(a.samples) <= 1)

    def test_matches_full_forward(self, teacher, rng):
        cond = rng.standard_normal((80, 6))
        clip = teacher.sample(cond, seed=9, sample_rate=8000, temperature=0.3)
        out = teacher(clip.samples[None], Tensor(cond[None]))
        noise = np.random.default_rng(9).standard_normal(80)
        expect = np.clip(out.mu.data[0] + 0.3 * np.exp(out.log_sigma.data[0]) * noise, -1, 1)
        np.testing.assert_allclose(clip.samples, expect, atol=1e-12)

    def test_temperature_zero_is_mean_trajectory(self, teacher, rng):
        cond = rng.standard_normal((50, 6)) * 0.1
        a = teacher.sample(cond, seed=1, sample_rate=8000, temperature=0.0)
        b = teacher.sample(cond, seed=2, sample_rate=8000, temperature=0.0)
        np.testing.assert_array_equal(a.samples, b.samples)
        mu = teacher(a.samples[None], Tensor(cond[None])).mu.data[0]
        np.testing.assert_allclose(a.samples, np.clip(mu, -1, 1), atol=1e-12)

    def test_degenerate_head_gives_near_silence(self, rng):
        t = TeacherWaveNet(SPEC, UPS, seed=0)
        t.head._params["w2"].data[...] = 0.0
        t.head._params["b2"].data[...] = [0.0, -7.0]
        clip = t.sample(rng.standard_normal((4000, 6)), seed=0, sample_rate=8000)
        assert abs(clip.samples.mean()) < 1e-4
        assert clip.samples.std() == pytest.approx(math.exp(-7), rel=0.05)

    def test_log_sigma_below_floor_is_clamped(self, rng):
        t = TeacherWaveNet(SPEC, UPS, seed=0)
        t.head._params["w2"].data[...] = 0.0
        t.head._params["b2"].data[...] = [0.0, -30.0]
        assert t.sample(rng.standard_normal((2000, 6)), seed=0, sample_rate=8000).samples.std() == pytest.approx(math.exp(-7), rel=0.1)
        assert np.all(t(np.zeros((1, 5)), Tensor(np.zeros((1, 5, 6)))).log_sigma.data == LOG_SIGMA_FLOOR)

    def test_wall_clock_linear_in_length(self):
        from pdd_forge.config import ArchConfig

        arch = ArchConfig.desk()
        t = TeacherWaveNet(arch.teacher, arch.upsampler, seed=0)
        rng = np.random.default_rng(0)
        lengths = np.array([1000, 2000, 4000, 8000])
        secs = []
        for T in lengths:
            cond = rng.standard_normal((T, arch.n_mels))
            t0 = time.perf_counter()
            t.sample(cond, seed=0, sample_rate=8000)
            secs.append(time.perf_counter() - t0)
            assert t.sample_iterations == T
        slope, intercept = np.polyfit(lengths, secs, 1)
        pred = slope * lengths + intercept
        r2 = 1 - np.sum((secs - pred) ** 2) / np.sum((secs - np.mean(secs)) ** 2)
        assert slope > 0 and r2 > 0.9
