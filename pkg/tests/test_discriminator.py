import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdd_forge.autodiff import ShapeError
from pdd_forge.config import ArchConfig
from pdd_forge.discriminator import Discriminator, DiscriminatorSpec, linear_dilations, score_mean
from pdd_forge.gradcheck import check
from pdd_forge.losses import adv_loss_discriminator
from pdd_forge.probes import influence


def _fn(disc):
    return lambda x: disc(x[None]).data[0]


def test_full_dilations():
    assert linear_dilations(10, 8) == (1, 1, 2, 3, 4, 5, 6, 7, 8, 1)
    assert DiscriminatorSpec().dilations == (1, 1, 2, 3, 4, 5, 6, 7, 8, 1)
    assert DiscriminatorSpec().receptive_field == 77


def test_desk_spec():
    spec = ArchConfig.desk().discriminator
    assert (spec.n_layers, spec.channels) == (6, 16)
    assert spec.dilations[0] == spec.dilations[-1] == 1
    assert spec.receptive_field == 29


@pytest.mark.parametrize("spec, rf", [(DiscriminatorSpec(), 77), (ArchConfig.desk().discriminator, 29)])
def test_receptive_field_probe(spec, rf):
    disc = Discriminator(spec, seed=0)
    idx = influence(_fn(disc), 300, 150)
    assert len(idx) == rf
    half = rf // 2
    assert idx[0] == 150 - half and idx[-1] == 150 + half


def test_output_length_and_no_squashing(rng):
    disc = Discriminator(DiscriminatorSpec(4, 8, 3, (1, 2, 3, 1)), seed=1)
    out = disc(rng.standard_normal((3, 57)) * 20)
    assert out.shape == (3, 57)
    assert np.abs(out.data).max() > 1


def test_shift_equivariance_in_interior(rng):
    spec = DiscriminatorSpec(4, 8, 3, (1, 2, 3, 1))
    disc = Discriminator(spec, seed=2)
    x = rng.standard_normal(200)
    s = 7
    a = disc(x[None]).data[0]
    b = disc(np.roll(x, s)[None]).data[0]
    edge = spec.receptive_field
    np.testing.assert_allclose(b[edge + s : -edge], a[edge : -edge - s], rtol=0, atol=1e-13)


def test_empty_rejected():
    with pytest.raises(ShapeError):
        Discriminator(DiscriminatorSpec(2, 4, 3, (1, 1)))(np.zeros((1, 0)))


def test_short_input_allowed(rng):
    assert Discriminator(DiscriminatorSpec(), seed=0)(rng.standard_normal((1, 10))).shape == (1, 10)


def test_mismatched_dilations():
    with pytest.raises(ValueError):
        DiscriminatorSpec(3, 4, 3, (1, 1))


class TestScoreMean:
    def test_values(self):
        assert score_mean(np.full((1, 9), 0.3)).data == pytest.approx([0.3])
        assert score_mean(np.array([[0.0, 1.0]])).item() == 0.5

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=40), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, xs, r):
        ys = list(xs)
        r.shuffle(ys)
        assert score_mean(np.array([xs])).item() == pytest.approx(score_mean(np.array([ys])).item(), abs=1e-12)


def test_loss_gradient_wrt_weights(rng):
    spec = DiscriminatorSpec(3, 3, 3, (1, 2, 1))
    disc = Discriminator(spec, seed=0)
    real = rng.standard_normal((2, 16))
    fake = rng.standard_normal((2, 16))
    names = [n for n, _ in disc.named_parameters()]
    params = dict(disc.named_parameters())

    def loss(*ws):
        for n, w in zip(names, ws):
            disc._params[n] = w
        try:
            return adv_loss_discriminator(score_mean(disc(real)), score_mean(disc(fake)))
        finally:
            for n in names:
                disc._params[n] = params[n]

    inits = [p.data + rng.uniform(-0.1, 0.1, p.shape) for p in params.values()]
    assert check(loss, inits) < 1e-4
