import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import simpson
from scipy.stats import norm

from pdd_forge.autodiff import ShapeError, Tensor
from pdd_forge.dsp import stft_magnitude
from pdd_forge.gradcheck import check
from pdd_forge.losses import (
    PRESETS,
    STFTSettings,
    LossLog,
    LossReport,
    LossWeights,
    UnknownPreset,
    adv_loss_discriminator,
    adv_loss_generator,
    aux_loss,
    gaussian_kl,
    generator_objective,
    kld_regularized,
    log_stft_magnitude,
    read_loss_csv,
    resolve_preset,
    spectral_convergence,
    stft_mag,
)
from pdd_forge.student import ComposedGaussian
from pdd_forge.teacher import TeacherOutput

STFT = STFTSettings(200, 40)  # 25 ms / 5 ms at 8 kHz


def quadrature_kl(mu_q, s_q, mu_p, s_p, n=2001, half_width=12.0):
    """Integrate q log(q/p) on a grid in standardized q coordinates."""
    u = np.linspace(-half_width, half_width, n)
    x = mu_q[..., None] + s_q[..., None] * u
    lq = norm.logpdf(x, mu_q[..., None], s_q[..., None])
    lp = norm.logpdf(x, mu_p[..., None], s_p[..., None])
    return simpson(np.exp(lq) * (lq - lp), x=x, axis=-1)


class TestKL:
    def test_reference_value(self):
        closed = gaussian_kl(0.0, 1.0, 1.0, 2.0)
        assert closed == pytest.approx(math.log(2) + 2 / 8 - 0.5, abs=1e-15)
        assert abs(quadrature_kl(np.array(0.0), np.array(1.0), np.array(1.0), np.array(2.0)) - 0.4431471805599453) < 1e-6

    def test_grid_matches_quadrature(self):
        m = np.linspace(-1, 1, 10)
        s = np.linspace(0.1, 2, 10)
        mq, sq, mp, sp = (a.ravel() for a in np.meshgrid(m, s, m, s, indexing="ij"))
        worst = 0.0
        for i in range(0, mq.size, 1000):
            sl = slice(i, i + 1000)
            num = quadrature_kl(mq[sl], sq[sl], mp[sl], sp[sl])
            worst = max(worst, np.max(np.abs(num - gaussian_kl(mq[sl], sq[sl], mp[sl], sp[sl]))))
        assert worst < 1e-6

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            gaussian_kl(0.0, 0.0, 0.0, 1.0)

    def test_self_divergence_is_exactly_zero(self, rng):
        mu, ls = rng.standard_normal((2, 3, 50))
        q = ComposedGaussian(Tensor(mu), Tensor(ls))
        p = TeacherOutput(Tensor(mu.copy()), Tensor(ls.copy()))
        assert kld_regularized(q, p).item() == 0.0

    def test_regularized_matches_closed_form(self, rng):
        mq, lq, mp, lp = rng.standard_normal((4, 2, 30))
        expect = np.mean(4.0 * (lq - lp) ** 2 + gaussian_kl(mq, np.exp(lq), mp, np.exp(lp)))
        got = kld_regularized(ComposedGaussian(Tensor(mq), Tensor(lq)), TeacherOutput(Tensor(mp), Tensor(lp)))
        assert got.item() == pytest.approx(expect, rel=1e-12)
        no_reg = kld_regularized(ComposedGaussian(Tensor(mq), Tensor(lq)), TeacherOutput(Tensor(mp), Tensor(lp)), 0.0)
        assert no_reg.item() == pytest.approx(np.mean(gaussian_kl(mq, np.exp(lq), mp, np.exp(lp))), rel=1e-12)

    def test_gradients(self, rng):
        mp, lp = Tensor(rng.standard_normal((1, 15))), Tensor(rng.uniform(-1, 1, (1, 15)))
        for _ in range(5):
            err = check(
                lambda m, l: kld_regularized(ComposedGaussian(m, l), TeacherOutput(mp, lp)),
                [rng.standard_normal((1, 15)), rng.uniform(-1, 1, (1, 15))],
            )
            assert err < 1e-4

    def test_gradient_stops_at_frozen_teacher(self, rng):
        mq = Tensor(rng.standard_normal((1, 5)), requires_grad=True)
        lq = Tensor(rng.standard_normal((1, 5)), requires_grad=True)
        mp = Tensor(rng.standard_normal((1, 5)))
        kld_regularized(ComposedGaussian(mq, lq), TeacherOutput(mp, Tensor(np.zeros((1, 5))))).backward()
        assert mp.grad is None and mq.grad is not None

    def test_length_mismatch(self):
        q = ComposedGaussian(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))))
        p = TeacherOutput(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 5))))
        with pytest.raises(ShapeError):
            kld_regularized(q, p)


class TestSTFTLosses:
    def test_differentiable_stft_matches_numpy(self, rng):
        x = rng.standard_normal(1000)
        np.testing.assert_allclose(stft_mag(x, STFT).data[0], stft_magnitude(x, 200, 40), atol=1e-10)

    def test_identity_is_zero(self, rng):
        x = rng.standard_normal((2, 800))
        total, sc, mag = aux_loss(x, x, STFT)
        assert total.item() == 0 and sc.item() == 0 and mag.item() == 0

    def test_doubling(self, rng):
        x = rng.standard_normal((3, 800))
        m = stft_mag(x, STFT).data
        assert m.min() > 1e-7
        n_frame, f_freq = m.shape[1:]
        assert abs(spectral_convergence(x, 2 * x, STFT).item() - 1) < 1e-9
        assert abs(log_stft_magnitude(x, 2 * x, STFT).item() - n_frame * f_freq * math.log(2)) < 1e-6
        assert aux_loss(x, 2 * x, STFT)[0].item() == pytest.approx(1 + math.log(2), abs=1e-9)

    def test_zero_estimate_has_unit_sc(self, rng):
        x = rng.standard_normal((1, 800))
        assert spectral_convergence(x, np.zeros_like(x), STFT).item() == pytest.approx(1.0, abs=1e-12)

    def test_zero_target_uses_floor(self):
        x = np.zeros((1, 400))
        val = spectral_convergence(x, np.full_like(x, 0.01), STFT).item()
        assert np.isfinite(val) and val > 1

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            aux_loss(np.zeros((1, 400)), np.zeros((1, 440)), STFT)

    def test_lambda_mag_default(self, rng):
        x, y = rng.standard_normal((2, 1, 600))
        total, sc, mag = aux_loss(x, y, STFT)
        nf = STFT.n_frames(600)
        assert total.item() == pytest.approx(sc.item() + mag.item() / (nf * STFT.n_freq), rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(
        arrays(np.float64, 400, elements=st.floats(-1, 1)),
        arrays(np.float64, 400, elements=st.floats(-1, 1)),
    )
    def test_sign_invariance_and_nonnegativity(self, x, y):
        a = aux_loss(x[None], y[None], STFT)[0].item()
        b = aux_loss(-x[None], -y[None], STFT)[0].item()
        assert a == b
        assert a >= 0

    def test_gradients_through_stft(self, rng):
        s = STFTSettings(16, 4)
        x = rng.standard_normal((2, 48))
        for _ in range(3):
            y0 = rng.standard_normal((2, 48))
            assert check(lambda y: spectral_convergence(x, y, s), [y0]) < 1e-3
            assert check(lambda y: log_stft_magnitude(x, y, s), [y0]) < 1e-3
            assert check(lambda y: aux_loss(x, y, s)[0], [y0]) < 1e-3

    def test_silent_estimate_has_finite_gradient(self):
        y = Tensor(np.zeros((1, 64)), requires_grad=True)
        aux_loss(np.random.default_rng(0).standard_normal((1, 64)), y, STFTSettings(16, 4))[0].backward()
        assert np.all(np.isfinite(y.grad))


class TestAdversarial:
    @pytest.mark.parametrize("d, expect", [(1.0, 0.0), (0.0, 1.0), (0.5, 0.25)])
    def test_generator(self, d, expect):
        assert adv_loss_generator(np.full(7, d)).item() == pytest.approx(expect, abs=1e-15)

    @pytest.mark.parametrize("real, fake, expect", [(1.0, 0.0, 0.0), (0.0, 1.0, 2.0), (0.5, 0.5, 0.5)])
    def test_discriminator(self, real, fake, expect):
        assert adv_loss_discriminator(np.full(5, real), np.full(5, fake)).item() == pytest.approx(expect, abs=1e-15)

    def test_gradients(self, rng):
        assert check(adv_loss_generator, [rng.standard_normal(6)]) < 1e-4
        assert check(adv_loss_discriminator, [rng.standard_normal(6), rng.standard_normal(6)]) < 1e-4


class TestWeights:
    @pytest.mark.parametrize(
        "name, values",
        [
            ("AX", (0.0, 1.0, 0.0)),
            ("AXAD", (0.0, 0.33, 0.67)),
            ("KLAX", (0.09, 0.91, 0.0)),
            ("KLAXAD", (0.03, 0.32, 0.65)),
            ("KLAXAD*", (0.0, 0.33, 0.67)),
        ],
    )
    def test_presets(self, name, values):
        w = resolve_preset(name.lower())
        assert (w.lambda_kld, w.lambda_aux, w.lambda_adv) == values
        assert abs(sum(values) - 1) < 1e-6

    def test_unknown_preset_lists_names(self):
        with pytest.raises(UnknownPreset, match=r"AX, AXAD, KLAX, KLAXAD, KLAXAD\*"):
            resolve_preset("KL")

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-0.1, 1.0, 0.0)

    def test_zero_weight_terms_never_run(self):
        calls = []

        def term(name, v):
            def f():
                calls.append(name)
                return Tensor(v)

            return f

        total, values = generator_objective(PRESETS["AX"], term("kld", 1.0), term("aux", 2.0), term("adv", 3.0))
        assert calls == ["aux"] and total.item() == 2.0 and set(values) == {"aux"}
        calls.clear()
        total, values = generator_objective(PRESETS["KLAXAD"], term("kld", 1.0), term("aux", 2.0), term("adv", 3.0))
        assert calls == ["kld", "aux", "adv"]
        assert total.item() == pytest.approx(0.03 + 0.64 + 1.95, abs=1e-12)

    def test_report_total(self):
        r = LossReport(step=3, phase="joint", kld=1.5, aux=0.7, adv_g=0.2)
        w = PRESETS["KLAXAD"]
        assert r.weighted_total(w) == pytest.approx(0.03 * 1.5 + 0.32 * 0.7 + 0.65 * 0.2, abs=1e-12)


def test_loss_log_round_trip(tmp_path):
    log = LossLog(tmp_path / "l.csv")
    log.append(LossReport(0, "warmup", kld=0.1, sc=0.2, mag=3.0, aux=0.25, adv_g=0.0, total_g=0.3, lr_g=1e-3))
    log.append(LossReport(1, "disc_pretrain", adv_d=0.9, lr_d=5e-4))
    header = (tmp_path / "l.csv").read_text().splitlines()[0]
    assert header == "step,kld,sc,mag,aux,adv_g,adv_d,total_g,lr_g,lr_d,phase"
    back = read_loss_csv(tmp_path / "l.csv")
    assert back == log.rows
    assert back[1].kld is None
