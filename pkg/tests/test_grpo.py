"""Group-standardized advantages, the clipped surrogate, and gradient checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cruxkit.grpo import (
    AdvantageSet,
    GroupTooSmall,
    LengthMismatch,
    MissingRefLogprobs,
    Rollout,
    RolloutGroup,
    clipped_objective,
    group_advantages,
    importance_ratios,
    materialize_group,
    objective_gradient_check,
    random_toy_instance,
)
from cruxkit.rewards import TokenLogProbSeq


def seq(*logprobs):
    return TokenLogProbSeq(tuple(range(len(logprobs))), tuple(logprobs))


def one_token_rollout(log_ratio: float, ref_delta: float | None = None):
    old = -1.0
    new = old + log_ratio
    ref = None if ref_delta is None else seq(new + ref_delta)
    return Rollout("c", "v", seq(new), seq(old), ref)


def group_of(*rollouts):
    return RolloutGroup("t", tuple(rollouts))


class TestAdvantages:
    def test_closed_form(self):
        adv = group_advantages([1.0, 2.0, 3.0])
        expected = 1.224744871391589  # sqrt(3/2): deviation 1 over population std
        assert adv.per_rollout == pytest.approx((-expected, 0.0, expected), abs=1e-15)
        assert not adv.degenerate

    def test_mean_zero_unit_std(self):
        adv = group_advantages([0.5, 1.25, 7.0, 3.5])
        values = np.array(adv.per_rollout)
        assert abs(values.mean()) < 1e-12
        assert abs(values.std() - 1.0) < 1e-12

    def test_degenerate_group_zeroes(self):
        adv = group_advantages([2.0, 2.0, 2.0])
        assert adv.per_rollout == (0.0, 0.0, 0.0)
        assert adv.degenerate

    def test_near_degenerate_eps(self):
        adv = group_advantages([1.0, 1.0 + 1e-12])
        assert adv.degenerate

    def test_group_too_small(self):
        with pytest.raises(GroupTooSmall):
            group_advantages([1.0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            group_advantages([1.0, float("nan")])

    def test_exact_shift_invariance(self):
        # integer shifts keep every fp intermediate exact, so bitwise equality holds
        base = [1.0, 2.0, 5.0, 8.0]
        shifted = [x + 7.0 for x in base]
        assert group_advantages(base).per_rollout == group_advantages(shifted).per_rollout

    def test_exact_scale_invariance_pow2(self):
        base = [1.0, 2.0, 5.0, 8.0]
        scaled = [x * 4.0 for x in base]
        assert group_advantages(base).per_rollout == group_advantages(scaled).per_rollout

    @given(
        st.lists(
            st.floats(min_value=-100, max_value=100, allow_nan=False),
            min_size=2, max_size=10,
        )
    )
    def test_standardization_property(self, rewards):
        adv = group_advantages(rewards)
        values = np.array(adv.per_rollout)
        if adv.degenerate:
            assert np.all(values == 0.0)
        else:
            assert abs(values.mean()) < 1e-9
            assert abs(values.std() - 1.0) < 1e-9


class TestRatios:
    def test_exponential_of_difference(self):
        new, old = seq(-0.5, -1.0), seq(-1.0, -1.0)
        ratios = importance_ratios(new, old)
        assert ratios == pytest.approx([math.exp(0.5), 1.0])

    def test_token_identity_checked(self):
        new = TokenLogProbSeq((1, 2), (-0.5, -0.5))
        old = TokenLogProbSeq((1, 3), (-0.5, -0.5))
        with pytest.raises(LengthMismatch):
            importance_ratios(new, old)


class TestClippedObjective:
    def test_positive_advantage_clips_high_ratio(self):
        # ratio e^{ln 2} = 2 with A=+1 and eps=0.2 clips to 1.2
        rollout = one_token_rollout(math.log(2.0))
        out = clipped_objective(group_of(rollout), AdvantageSet((1.0,), False), 0.2)
        assert out.surrogate == pytest.approx(1.2, abs=1e-12)
        assert out.clip_fraction == 1.0

    def test_negative_advantage_keeps_high_ratio(self):
        # pessimism is asymmetric: A=-1 at ratio 2 stays -2, unclipped
        rollout = one_token_rollout(math.log(2.0))
        out = clipped_objective(group_of(rollout), AdvantageSet((-1.0,), False), 0.2)
        assert out.surrogate == pytest.approx(-2.0, abs=1e-12)
        assert out.clip_fraction == 0.0

    def test_negative_advantage_clips_low_ratio(self):
        rollout = one_token_rollout(math.log(0.5))
        out = clipped_objective(group_of(rollout), AdvantageSet((-1.0,), False), 0.2)
        assert out.surrogate == pytest.approx(-0.8, abs=1e-12)
        assert out.clip_fraction == 1.0

    def test_zero_advantage_contributes_zero(self):
        rollout = one_token_rollout(math.log(2.0))
        out = clipped_objective(group_of(rollout), AdvantageSet((0.0,), True), 0.2)
        assert out.surrogate == 0.0
        assert out.clip_fraction == 0.0

    def test_identity_at_theta_old(self):
        # when new == old every ratio is exactly 1, the mean over tokens is
        # exactly 1, and the surrogate equals the advantage mean bitwise
        rollouts = tuple(
            Rollout("c", "v", seq(*lps), seq(*lps))
            for lps in ((-0.3, -0.7), (-1.1,), (-0.2, -0.4, -0.9))
        )
        adv = group_advantages([1.0, 4.0, 5.0])
        out = clipped_objective(RolloutGroup("t", rollouts), adv, 0.2)
        assert out.surrogate == float(np.mean(adv.per_rollout))
        assert out.clip_fraction == 0.0

    def test_token_mean_within_rollout(self):
        # two tokens at ratios 1 and 2 with A=+1, eps large: mean(1, 2) = 1.5
        new = seq(-1.0, -1.0 + math.log(2.0))
        old = seq(-1.0, -1.0)
        rollout = Rollout("c", "v", new, old)
        out = clipped_objective(group_of(rollout), AdvantageSet((1.0,), False), 5.0)
        assert out.surrogate == pytest.approx(1.5, abs=1e-12)

    def test_rollout_mean_across_group(self):
        r1 = one_token_rollout(0.0)
        r2 = one_token_rollout(0.0)
        out = clipped_objective(group_of(r1, r2), AdvantageSet((2.0, -1.0), False), 0.2)
        assert out.surrogate == pytest.approx((2.0 - 1.0) / 2.0, abs=1e-15)

    def test_clip_fraction_counts_tokens(self):
        new = seq(-1.0 + math.log(2.0), -1.0)
        old = seq(-1.0, -1.0)
        rollout = Rollout("c", "v", new, old)
        out = clipped_objective(group_of(rollout), AdvantageSet((1.0,), False), 0.2)
        assert out.clip_fraction == 0.5

    def test_kl_zero_when_ref_equals_new(self):
        rollout = one_token_rollout(0.3, ref_delta=0.0)
        out = clipped_objective(group_of(rollout), AdvantageSet((1.0,), False), 0.2, beta=0.5)
        assert out.kl_term == 0.0
        assert out.total == out.surrogate

    def test_kl_closed_form(self):
        d = 0.4  # ref logprob minus new logprob
        rollout = one_token_rollout(0.0, ref_delta=d)
        out = clipped_objective(group_of(rollout), AdvantageSet((0.0,), True), 0.2, beta=0.5)
        want_kl = math.exp(d) - d - 1.0
        assert out.kl_term == pytest.approx(want_kl, abs=1e-12)
        assert out.total == pytest.approx(out.surrogate - 0.5 * want_kl, abs=1e-12)

    def test_kl_nonnegative(self):
        for d in (-1.0, -0.25, 0.0, 0.25, 1.0):
            rollout = one_token_rollout(0.0, ref_delta=d)
            out = clipped_objective(
                group_of(rollout), AdvantageSet((0.0,), True), 0.2, beta=1.0
            )
            assert out.kl_term >= 0.0

    def test_beta_requires_ref(self):
        rollout = one_token_rollout(0.1)
        with pytest.raises(MissingRefLogprobs):
            clipped_objective(group_of(rollout), AdvantageSet((1.0,), False), 0.2, beta=0.1)

    def test_advantage_count_checked(self):
        rollout = one_token_rollout(0.1)
        with pytest.raises(LengthMismatch):
            clipped_objective(group_of(rollout), AdvantageSet((1.0, 2.0), False), 0.2)

    def test_epsilon_validated(self):
        rollout = one_token_rollout(0.1)
        with pytest.raises(ValueError):
            clipped_objective(group_of(rollout), AdvantageSet((1.0,), False), 0.0)

    def test_per_token_terms_optional(self):
        rollout = one_token_rollout(0.0)
        out = clipped_objective(group_of(rollout), AdvantageSet((1.0,), False), 0.2)
        assert out.per_token_terms is None
        out = clipped_objective(
            group_of(rollout), AdvantageSet((1.0,), False), 0.2, keep_per_token=True
        )
        assert len(out.per_token_terms) == 1


class TestGroupModel:
    def test_empty_group_rejected(self):
        with pytest.raises(ValueError):
            RolloutGroup("t", ())

    def test_rollout_needs_tokens(self):
        with pytest.raises(ValueError):
            Rollout("c", "v", TokenLogProbSeq((), ()), TokenLogProbSeq((), ()))

    def test_old_must_cover_same_tokens(self):
        with pytest.raises(LengthMismatch):
            Rollout(
                "c", "v",
                TokenLogProbSeq((1, 2), (-0.5, -0.5)),
                TokenLogProbSeq((1,), (-0.5,)),
            )


class TestGradientCheck:
    def test_toy_instance_shapes(self):
        inst = random_toy_instance(0, group_size=3, max_tokens=5, vocab=7)
        assert len(inst.rollouts) == 3
        assert len(inst.rewards) == 3
        for r in inst.rollouts:
            assert r.logits.shape[1] == 7
            assert 1 <= r.logits.shape[0] <= 5
            assert r.old_logprobs.shape == (r.logits.shape[0],)

    def test_deterministic(self):
        a = random_toy_instance(42)
        b = random_toy_instance(42)
        assert all(
            np.array_equal(x.logits, y.logits)
            for x, y in zip(a.rollouts, b.rollouts)
        )

    def test_passes_without_kl(self):
        report = objective_gradient_check(random_toy_instance(0))
        assert report.passed
        assert report.checked_positions > 0
        assert report.max_rel_error < 1e-3

    def test_passes_with_kl(self):
        inst = random_toy_instance(1, with_ref=True)
        report = objective_gradient_check(inst, beta=0.04)
        assert report.passed

    def test_materialize_round_trip(self):
        inst = random_toy_instance(3)
        group = materialize_group(inst)
        assert len(group.rollouts) == len(inst.rollouts)
        adv = group_advantages(list(inst.rewards))
        out = clipped_objective(group, adv, 0.2)
        assert math.isfinite(out.surrogate)

    @settings(max_examples=15)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_gradient_check_any_seed(self, seed):
        report = objective_gradient_check(random_toy_instance(seed))
        assert report.passed
