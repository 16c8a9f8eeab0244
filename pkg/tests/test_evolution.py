import numpy as np
import pytest

from tdmcl.errors import ControllerStateError
from tdmcl.evolution import (
    N_OPTIONS,
    ChoiceMatrix,
    finalize_wiring,
    h_l_matrix,
    init_choice_matrix,
    no_connect_fraction,
    record_episode,
    sample_wiring,
    update_all_rows,
    update_probabilities,
    usage_probability,
)
from tdmcl.topology import WiringChoice


def brute_force_update(p, h_n, h_l, gamma):
    """Independent oracle: explicit pairwise loops for Eq. 5-7."""
    n = len(p)
    d_hn = np.zeros((n, n))
    d_hl = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            d_hn[i, j] = h_n[i] - h_n[j]
            d_hl[i, j] = h_l[i] - h_l[j]
    assert np.allclose(d_hn, -d_hn.T) and np.allclose(d_hl, -d_hl.T)  # antisymmetry
    dp_plus = np.zeros(n)
    dp_minus = np.zeros(n)
    for i in range(n):
        for j in range(n):
            plus = d_hn[i, j] < 0 and d_hl[i, j] > 0
            minus = d_hn[i, j] > 0 and d_hl[i, j] < 0
            assert not (plus and minus)  # mutually exclusive conjunctions
            dp_plus[i] += plus
            dp_minus[i] += minus
    logits = p + gamma * (dp_plus - dp_minus)
    z = np.exp(logits - logits.max())
    return z / z.sum(), dp_plus, dp_minus


class TestInit:
    def test_uniform_rows_t2(self):
        m = init_choice_matrix(2)
        assert len(m.rows) == 3
        assert np.allclose(m.p, 1.0 / 6.0)
        assert np.all(m.h_n == 0)

    def test_row_count_3_t_minus_1(self):
        assert len(init_choice_matrix(4).rows) == 9
        assert len(init_choice_matrix(9).rows) == 24

    def test_uniform_no_connect_probability_half(self):
        m = init_choice_matrix(2)
        assert float(m.p[0, :3].sum()) == pytest.approx(0.5)

    def test_t1_rejected(self):
        with pytest.raises(ControllerStateError):
            init_choice_matrix(1)


class TestSampling:
    def test_point_mass_no_connect(self, rng):
        m = init_choice_matrix(2)
        m.p[:] = 0.0
        m.p[:, 0] = 1.0
        for _ in range(20):
            choices = sample_wiring(m, rng)
            assert all(c.source_block is None for c in choices)

    def test_point_mass_source_block2(self, rng):
        m = init_choice_matrix(2)
        m.p[:] = 0.0
        m.p[:, 3] = 1.0
        choices = sample_wiring(m, rng)
        assert all(c.source_block == 2 for c in choices)

    def test_uniform_no_connect_frequency(self):
        m = init_choice_matrix(2)
        rng = np.random.default_rng(77)
        draws = 0
        hits = 0
        for _ in range(10000 // 3):
            for c in sample_wiring(m, rng):
                draws += 1
                hits += c.source_block is None
        assert abs(hits / draws - 0.5) < 0.02

    def test_deterministic_given_seed(self):
        m = init_choice_matrix(3)
        a = sample_wiring(m, np.random.default_rng(5))
        b = sample_wiring(m, np.random.default_rng(5))
        assert a == b

    def test_degenerate_row_rejected(self, rng):
        m = init_choice_matrix(2)
        m.p[1, 2] = np.nan
        with pytest.raises(ControllerStateError):
            sample_wiring(m, rng)


class TestRecordEpisode:
    def test_first_episode_uninformative(self):
        m = init_choice_matrix(2)
        choices = [WiringChoice(2, 1, 4)]
        record_episode(m, choices, 0.7)
        i = m.row_index(2, 1)
        assert m.h_n[i, 4] == 1
        assert h_l_matrix(m, "row")[i, 4] == 0.5
        assert h_l_matrix(m, "option")[i, 4] == 0.5

    def test_two_losses_normalize_within_row(self):
        m = init_choice_matrix(2)
        record_episode(m, [WiringChoice(2, 1, 3)], 1.0)
        record_episode(m, [WiringChoice(2, 1, 4)], 3.0)
        i = m.row_index(2, 1)
        h_l = h_l_matrix(m, "row")
        assert h_l[i, 3] == pytest.approx(1.0)  # the loss-1.0 record -> h_l 1.0
        assert h_l[i, 4] == pytest.approx(0.0)
        assert h_l[i, 0] == 0.5  # unsampled options stay at the midpoint

    def test_unsampled_options_unchanged(self):
        m = init_choice_matrix(2)
        record_episode(m, [WiringChoice(2, 1, 0)], 0.5)
        i = m.row_index(2, 1)
        assert m.h_n[i, 0] == 1
        assert np.all(m.h_n[i, 1:] == 0)
        assert np.all(m.h_n[1:] == 0)

    def test_nonfinite_loss_rejected(self):
        m = init_choice_matrix(2)
        with pytest.raises(ControllerStateError):
            record_episode(m, [WiringChoice(2, 1, 0)], float("nan"))


class TestUpdate:
    def test_matches_brute_force_on_random_histories(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            p = rng.dirichlet(np.ones(N_OPTIONS))
            h_n = rng.integers(0, 10, N_OPTIONS)
            h_l = np.round(rng.random(N_OPTIONS), 3)
            gamma = float(rng.uniform(0.1, 1.0))
            expected, _, _ = brute_force_update(p, h_n, h_l, gamma)
            got = update_probabilities(p, h_n, h_l, gamma)
            assert np.allclose(got, expected, atol=1e-12)
            assert abs(got.sum() - 1.0) <= 1e-9
            assert got.min() > 0.0

    def test_no_information_fixed_point(self):
        p = np.full(6, 1.0 / 6.0)
        h_n = np.full(6, 3)
        h_l = np.full(6, 0.5)
        out = update_probabilities(p, h_n, h_l, 0.5)
        assert np.allclose(out, p, atol=1e-12)  # softmax of uniform is uniform

    def test_rare_good_option_gains(self):
        # option A: rarely used, high performance; option B: often used, poor
        p = np.full(6, 1.0 / 6.0)
        h_n = np.array([1, 5, 3, 3, 3, 3])
        h_l = np.array([0.9, 0.2, 0.5, 0.5, 0.5, 0.5])
        out = update_probabilities(p, h_n, h_l, 0.5)
        assert out[0] > p[0]
        assert out[1] < p[1]
        assert out[0] / out[1] > 1.5

    def test_monotone_pressure(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            p = rng.dirichlet(np.ones(6))
            h_n = rng.integers(1, 8, 6)
            h_n[0] = 0  # option 0 has minimal use count
            h_l = rng.random(6)
            low = h_l.copy()
            low[0] = 0.1
            high = h_l.copy()
            high[0] = 0.9
            p_low = update_probabilities(p, h_n, low, 0.5)
            p_high = update_probabilities(p, h_n, high, 0.5)
            assert p_high[0] >= p_low[0] - 1e-12


class TestFinalize:
    def test_argmax(self):
        m = init_choice_matrix(2)
        m.p[0] = [0.1, 0.1, 0.1, 0.4, 0.2, 0.1]
        m.p[1] = [0.3, 0.1, 0.1, 0.3, 0.1, 0.1]  # tie option 0 vs 3 -> option 0
        m.p[2] = [0.1, 0.25, 0.1, 0.2, 0.25, 0.1]  # tie option 1 vs 4 -> option 1
        choices = finalize_wiring(m)
        assert choices[0].option == 3
        assert choices[1].option == 0
        assert choices[2].option == 1
        assert m.finalized

    def test_no_connect_fraction(self):
        choices = [WiringChoice(2, 1, 0), WiringChoice(3, 1, 4), WiringChoice(4, 1, 2)]
        assert no_connect_fraction(choices) == pytest.approx(2 / 3)

    def test_controlled_transfer_toy(self):
        # one source block is strictly more useful by construction: episodes in
        # which row (2, 1) samples option 4 see much lower loss; 16 episodes so
        # every seed almost surely explores the useful option at least once
        wins = 0
        for seed in range(10):
            rng = np.random.default_rng(1000 + seed)
            m = init_choice_matrix(2)
            for _ in range(16):
                choices = sample_wiring(m, rng)
                target = next(c for c in choices if (c.dest_block, c.source_task) == (2, 1))
                loss = 0.3 if target.option == 4 else 1.0
                loss += float(rng.normal(0, 0.02))
                record_episode(m, choices, loss)
                update_all_rows(m, 0.5, "row")
            final = finalize_wiring(m)
            target = next(c for c in final if (c.dest_block, c.source_task) == (2, 1))
            wins += target.option == 4
        assert wins >= 8  # >= 0.8 frequency over 10 seeds


class TestUsageProbability:
    def test_point_mass_row(self):
        m = init_choice_matrix(2)
        m.p[:] = 0.0
        m.p[:, 0] = 1.0
        i = m.row_index(3, 1)
        m.p[i] = [0, 0, 0, 0, 1.0, 0]  # dest block 3 connects to source block 3
        assert usage_probability(m, 1, 3) == pytest.approx(1.0)
        assert usage_probability(m, 1, 2) == pytest.approx(0.0)

    def test_noisy_or_across_rows(self):
        m = init_choice_matrix(2)
        m.p[:] = 0.0
        m.p[:, 0] = 1.0
        for dest in (2, 3, 4):
            i = m.row_index(dest, 1)
            m.p[i, 0] = 0.8
            m.p[i, 3] = 0.2  # each row puts 0.2 on source block 2
        assert usage_probability(m, 1, 2) == pytest.approx(1 - 0.8 ** 3)
