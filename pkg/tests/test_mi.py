import math

import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import zero_final_layers
from m2iosr.errors import ConfigError, NumericError
from m2iosr.mi import (
    GlobalDiscriminator,
    LocalDiscriminator,
    global_mi,
    jsd_objective,
    local_mi,
    local_mi_loss,
    make_negative_pairing,
)

TWO_LOG2 = 2 * math.log(2)
scores = st.lists(st.floats(-30, 30, allow_nan=False), min_size=1, max_size=20)


class TestNegativePairing:
    @pytest.mark.parametrize("n, expected", [(4, [1, 2, 3, 0]), (2, [1, 0])])
    def test_cyclic_shift(self, n, expected):
        assert make_negative_pairing(torch.arange(n)).tolist() == expected

    def test_singleton_batch(self):
        with pytest.raises(ConfigError, match="batch >= 2"):
            make_negative_pairing(torch.arange(1))

    @given(st.integers(2, 64))
    def test_no_fixed_points(self, n):
        assert (make_negative_pairing(torch.arange(n)) != torch.arange(n)).all()


class TestJSDObjective:
    def test_all_zero(self):
        value = jsd_objective(torch.zeros(5, dtype=torch.float64), torch.zeros(7, dtype=torch.float64))
        assert value.item() == pytest.approx(-TWO_LOG2, abs=1e-12)

    def test_closed_form(self):
        value = jsd_objective(torch.tensor([1.0], dtype=torch.float64), torch.tensor([-1.0], dtype=torch.float64))
        assert value.item() == pytest.approx(-2 * math.log1p(math.exp(-1)), abs=1e-12)
        assert value.item() == pytest.approx(-0.626523, abs=1e-6)

    def test_supremum_limit(self):
        value = jsd_objective(torch.tensor([80.0]), torch.tensor([-80.0]))
        assert value.item() == pytest.approx(0.0, abs=1e-12)

    def test_equals_log_sigmoid_form(self):
        pos = torch.randn(50, dtype=torch.float64)
        neg = torch.randn(60, dtype=torch.float64)
        expected = torch.log(torch.sigmoid(pos)).mean() + torch.log(1 - torch.sigmoid(neg)).mean()
        assert jsd_objective(pos, neg).item() == pytest.approx(expected.item(), abs=1e-12)

    def test_large_scores_do_not_overflow(self):
        value = jsd_objective(torch.tensor([1e4]), torch.tensor([1e4]))
        assert torch.isfinite(value) and value.item() == pytest.approx(-1e4, rel=1e-6)

    def test_non_finite_raises(self):
        with pytest.raises(NumericError):
            jsd_objective(torch.tensor([float("inf")]), torch.zeros(1))

    def test_one_sided(self):
        s = torch.tensor([0.3, -0.2])
        assert jsd_objective(s, None).item() == pytest.approx(-F.softplus(-s).mean().item())
        assert jsd_objective(None, s).item() == pytest.approx(-F.softplus(s).mean().item())
        with pytest.raises(ConfigError):
            jsd_objective(None, None)

    @settings(max_examples=50, deadline=None)
    @given(scores, scores, st.randoms(use_true_random=False))
    def test_permutation_invariance(self, pos, neg, rnd):
        p, n = torch.tensor(pos, dtype=torch.float64), torch.tensor(neg, dtype=torch.float64)
        pp, nn_ = pos[:], neg[:]
        rnd.shuffle(pp)
        rnd.shuffle(nn_)
        a = jsd_objective(p, n).item()
        b = jsd_objective(torch.tensor(pp, dtype=torch.float64), torch.tensor(nn_, dtype=torch.float64)).item()
        assert a == pytest.approx(b, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(scores, scores, st.data())
    def test_monotonicity(self, pos, neg, data):
        p, n = torch.tensor(pos, dtype=torch.float64), torch.tensor(neg, dtype=torch.float64)
        base = jsd_objective(p, n).item()
        i = data.draw(st.integers(0, len(pos) - 1))
        j = data.draw(st.integers(0, len(neg) - 1))
        p2, n2 = p.clone(), n.clone()
        p2[i] += 0.5
        n2[j] += 0.5
        assert jsd_objective(p2, n).item() > base
        assert jsd_objective(p, n2).item() < base

    @settings(max_examples=50, deadline=None)
    @given(scores)
    def test_identical_sets_are_at_most_minus_two_log2(self, s):
        t = torch.tensor(s, dtype=torch.float64)
        # -softplus(-s) - softplus(s) = -|s| - 2 log(1 + e^{-|s|}) <= -2 log 2
        assert jsd_objective(t, t).item() <= -TWO_LOG2 + 1e-12


def _maps(batch=4, c=3, size=16, dtype=torch.float32):
    return torch.randn(batch, c, size, size, dtype=dtype)


class TestGlobalMI:
    def test_zero_final_layer(self):
        disc = GlobalDiscriminator(3, (16, 16), 8, hidden=16, adapter_channels=4)
        with torch.no_grad():
            disc.final.weight.zero_()
            disc.final.bias.zero_()
        value = global_mi(_maps(), torch.randn(4, 8), disc)
        assert value.item() == pytest.approx(-TWO_LOG2, abs=1e-6)

    def test_scores_one_per_sample(self):
        disc = GlobalDiscriminator(3, (16, 16), 8, hidden=16, adapter_channels=4)
        assert disc(_maps(), torch.randn(4, 8)).shape == (4,)

    def test_duplicate_images(self):
        disc = GlobalDiscriminator(3, (16, 16), 8, hidden=16, adapter_channels=4)
        fmap = _maps(1).repeat(2, 1, 1, 1)
        z = torch.randn(1, 8).repeat(2, 1)
        s = disc(fmap, z)
        expected = (-F.softplus(-s) - F.softplus(s)).mean()
        assert global_mi(fmap, z, disc).item() == pytest.approx(expected.item(), abs=1e-6)

    def test_batch_mismatch(self):
        disc = GlobalDiscriminator(3, (16, 16), 8, hidden=16, adapter_channels=4)
        with pytest.raises(ConfigError):
            global_mi(_maps(4), torch.randn(3, 8), disc)


class TestLocalMI:
    @pytest.mark.parametrize("kind", ["1t16", "1t4", "4t4"])
    def test_zero_final_layer(self, kind):
        disc = LocalDiscriminator(3, 8, hidden=16)
        with torch.no_grad():
            disc.final.weight.zero_()
            disc.final.bias.zero_()
        value = local_mi(_maps(size=4), torch.randn(4, 8), disc, kind)
        assert value.item() == pytest.approx(-TWO_LOG2, abs=1e-6)

    def test_score_shapes(self):
        disc = LocalDiscriminator(3, 8, hidden=16)
        assert disc(_maps(size=16), torch.randn(4, 8)).shape == (4, 16, 16)
        assert disc(_maps(size=4), torch.randn(4, 8)).shape[1:].numel() == 16

    def test_negatives_pair_shifted_map_with_original_summary(self):
        disc = LocalDiscriminator(3, 8, hidden=16)
        fmap, summary = _maps(size=4, dtype=torch.float64), torch.randn(4, 8, dtype=torch.float64)
        disc = disc.double()
        expected = jsd_objective(disc(fmap, summary), disc(fmap.roll(-1, 0), summary))
        assert local_mi(fmap, summary, disc, "1t4").item() == pytest.approx(expected.item(), abs=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            local_mi(_maps(), torch.randn(4, 8), LocalDiscriminator(3, 8, hidden=4), "2t2")

    def test_singleton_batch(self):
        with pytest.raises(ConfigError, match="batch >= 2"):
            local_mi(_maps(1), torch.randn(1, 8), LocalDiscriminator(3, 8, hidden=4), "1t16")


class TestLocalLoss:
    def test_convex_combination(self):
        assert local_mi_loss(2.5, 2.5, 2.5) == pytest.approx(2.5)
        assert local_mi_loss(1.0, 2.0, 3.0) == pytest.approx(0.7 + 0.2 + 0.6)

    @pytest.mark.parametrize("weights", [(0.7, 0.3, 0.0), (0.7, 0.0, 0.3)])
    def test_ablation_weights_accepted(self, weights):
        assert local_mi_loss(1.0, 1.0, 1.0, *weights) == pytest.approx(1.0)

    @pytest.mark.parametrize("weights", [(0.5, 0.1, 0.1), (1.2, -0.1, -0.1)])
    def test_bad_weights(self, weights):
        with pytest.raises(ConfigError):
            local_mi_loss(0.0, 0.0, 0.0, *weights)


def test_model_terms_at_zero_scores(tiny_model):
    zero_final_layers(tiny_model)
    taps = tiny_model(torch.rand(4, 1, 32, 32))
    z = taps.stats.mu
    values = [
        global_mi(taps.f16, z, tiny_model.global_disc),
        local_mi(taps.f16, z, tiny_model.local_discs["1t16"], "1t16"),
        local_mi(taps.f4, z, tiny_model.local_discs["1t4"], "1t4"),
        local_mi(taps.f4, tiny_model.summary_4t4(taps.f4), tiny_model.local_discs["4t4"], "4t4"),
    ]
    for v in values:
        assert v.item() == pytest.approx(-TWO_LOG2, abs=1e-6)
