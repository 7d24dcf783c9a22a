"""Group-relative policy optimization math, checked against finite differences.

Rewards are standardized within each rollout group to form advantages; the
objective averages a clipped importance-weighted surrogate per token, per
rollout, then across the group, optionally minus a KL penalty against a
reference policy (the exp(d) - d - 1 estimator on d = ref - new).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rewards import RewardVector, TokenLogProbSeq


class GroupTooSmall(ValueError):
    """Advantage standardization needs at least two rollouts."""


class LengthMismatch(ValueError):
    """New/old/ref logprob sequences disagree on tokens."""


class MissingRefLogprobs(ValueError):
    """KL penalty requested but some rollout has no reference logprobs."""


EPS_STD_DEFAULT = 1e-8


@dataclass(frozen=True)
class Rollout:
    """One sampled output with its logprobs under the three policies."""

    crux_text: str
    code_text: str
    token_logprobs_new: TokenLogProbSeq
    token_logprobs_old: TokenLogProbSeq
    token_logprobs_ref: TokenLogProbSeq | None = None
    reward: RewardVector | None = None

    def __post_init__(self) -> None:
        if len(self.token_logprobs_new) == 0:
            raise ValueError("rollout must have at least one token")
        for other in (self.token_logprobs_old, self.token_logprobs_ref):
            if other is not None and other.tokens != self.token_logprobs_new.tokens:
                raise LengthMismatch("logprob sequences must cover identical tokens")


@dataclass(frozen=True)
class RolloutGroup:
    """All rollouts sampled for one task prompt."""

    task_id: str
    rollouts: tuple[Rollout, ...]

    def __post_init__(self) -> None:
        if not self.rollouts:
            raise ValueError("a rollout group cannot be empty")


@dataclass(frozen=True)
class AdvantageSet:
    """Standardized per-rollout advantages. A degenerate group (reward spread
    below eps_std) gets all-zero advantages instead of a blow-up."""

    per_rollout: tuple[float, ...]
    degenerate: bool


def group_advantages(rewards: list[float], eps_std: float = EPS_STD_DEFAULT) -> AdvantageSet:
    """Standardize rewards within a group: (r - mean) / population std."""
    if len(rewards) < 2:
        raise GroupTooSmall(f"need at least 2 rollouts, got {len(rewards)}")
    arr = np.asarray(rewards, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("rewards must be finite")
    std = float(arr.std())
    if std < eps_std:
        return AdvantageSet((0.0,) * len(rewards), degenerate=True)
    adv = (arr - arr.mean()) / std
    return AdvantageSet(tuple(float(a) for a in adv), degenerate=False)


def importance_ratios(
    new: TokenLogProbSeq, old: TokenLogProbSeq
) -> np.ndarray:
    """Per-token exp(new - old); identical policies give exact 1.0 ratios."""
    if new.tokens != old.tokens:
        raise LengthMismatch("new and old sequences must cover identical tokens")
    return np.exp(np.asarray(new.logprobs) - np.asarray(old.logprobs))


@dataclass(frozen=True)
class ObjectiveBreakdown:
    surrogate: float
    kl_term: float
    total: float
    clip_fraction: float
    per_token_terms: tuple[tuple[float, ...], ...] | None = None


def _clipped_token_scores(
    ratios: np.ndarray, advantage: float, epsilon: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-token min(r*A, clip(r)*A) with A factored out, plus a mask of
    tokens where the clip actually binds the min.

    Factoring A out of the token mean keeps the r == 1 identity exact in
    floating point: the mean of all-ones is exactly 1.0.
    """
    clipped = np.clip(ratios, 1.0 - epsilon, 1.0 + epsilon)
    if advantage > 0:
        scores = np.minimum(ratios, clipped)
        active = ratios > 1.0 + epsilon
    elif advantage < 0:
        scores = np.maximum(ratios, clipped)
        active = ratios < 1.0 - epsilon
    else:
        scores = ratios
        active = np.zeros_like(ratios, dtype=bool)
    return scores, active


def clipped_objective(
    group: RolloutGroup,
    advantages: AdvantageSet,
    epsilon: float = 0.2,
    beta: float = 0.0,
    keep_per_token: bool = False,
) -> ObjectiveBreakdown:
    """The group objective: mean over rollouts of the token-mean clipped
    surrogate, minus beta times the k3 KL penalty when beta > 0.

    Each rollout's advantage is broadcast to all of its tokens.
    """
    if len(advantages.per_rollout) != len(group.rollouts):
        raise LengthMismatch("one advantage per rollout required")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if beta > 0 and any(r.token_logprobs_ref is None for r in group.rollouts):
        raise MissingRefLogprobs("beta > 0 requires ref logprobs on every rollout")

    rollout_terms = np.empty(len(group.rollouts))
    kl_terms = np.zeros(len(group.rollouts))
    clipped_tokens = 0
    total_tokens = 0
    per_token: list[tuple[float, ...]] = []
    for idx, (rollout, advantage) in enumerate(zip(group.rollouts, advantages.per_rollout)):
        ratios = importance_ratios(rollout.token_logprobs_new, rollout.token_logprobs_old)
        scores, active = _clipped_token_scores(ratios, advantage, epsilon)
        rollout_terms[idx] = advantage * float(np.mean(scores))
        clipped_tokens += int(np.count_nonzero(active))
        total_tokens += len(ratios)
        if keep_per_token:
            per_token.append(tuple(float(advantage * s) for s in scores))
        if beta > 0:
            new = np.asarray(rollout.token_logprobs_new.logprobs)
            ref = np.asarray(rollout.token_logprobs_ref.logprobs)
            d = ref - new
            kl_terms[idx] = float(np.mean(np.exp(d) - d - 1.0))
    surrogate = float(np.mean(rollout_terms))
    kl_term = float(np.mean(kl_terms)) if beta > 0 else 0.0
    return ObjectiveBreakdown(
        surrogate=surrogate,
        kl_term=kl_term,
        total=surrogate - beta * kl_term,
        clip_fraction=clipped_tokens / total_tokens,
        per_token_terms=tuple(per_token) if keep_per_token else None,
    )


# --- toy differentiable policy for gradient checking -----------------------


@dataclass
class ToyRollout:
    """A rollout whose new-policy logprobs come from explicit logits, so the
    objective is differentiable with respect to them."""

    logits: np.ndarray  # (T, V) float64
    token_ids: np.ndarray  # (T,) ints in [0, V)
    old_logprobs: np.ndarray  # (T,)
    ref_logprobs: np.ndarray | None = None


@dataclass
class ToyGroupInstance:
    rollouts: list[ToyRollout]
    rewards: list[float]
    eps_std: float = EPS_STD_DEFAULT


def _logprobs_from_logits(logits: np.ndarray, token_ids: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    return logits[np.arange(len(token_ids)), token_ids] - logz


def random_toy_instance(
    seed: int,
    group_size: int = 4,
    max_tokens: int = 8,
    vocab: int = 11,
    with_ref: bool = False,
) -> ToyGroupInstance:
    """A random small instance; old/ref policies are noisy copies of the new
    logits so importance ratios straddle the clip boundaries."""
    rng = np.random.default_rng(seed)
    rollouts = []
    for _ in range(group_size):
        n_tokens = int(rng.integers(1, max_tokens + 1))
        logits = rng.normal(0.0, 1.0, size=(n_tokens, vocab))
        ids = rng.integers(0, vocab, size=n_tokens)
        old = _logprobs_from_logits(logits + rng.normal(0.0, 0.3, logits.shape), ids)
        ref = None
        if with_ref:
            ref = _logprobs_from_logits(logits + rng.normal(0.0, 0.3, logits.shape), ids)
        rollouts.append(ToyRollout(logits, ids, old, ref))
    rewards = [float(r) for r in rng.normal(0.0, 1.0, size=group_size)]
    return ToyGroupInstance(rollouts, rewards)


def _toy_objective(
    instance: ToyGroupInstance,
    advantages: tuple[float, ...],
    epsilon: float,
    beta: float,
) -> float:
    terms = []
    for rollout, advantage in zip(instance.rollouts, advantages):
        new = _logprobs_from_logits(rollout.logits, rollout.token_ids)
        ratios = np.exp(new - rollout.old_logprobs)
        scores, _ = _clipped_token_scores(ratios, advantage, epsilon)
        term = advantage * float(np.mean(scores))
        if beta > 0:
            d = rollout.ref_logprobs - new
            term -= beta * float(np.mean(np.exp(d) - d - 1.0))
        terms.append(term)
    return float(np.mean(terms))


@dataclass
class GradientCheckReport:
    checked_positions: int
    skipped_near_kink: int
    max_abs_error: float
    max_rel_error: float
    passed: bool


def objective_gradient_check(
    instance: ToyGroupInstance,
    epsilon: float = 0.2,
    beta: float = 0.0,
    h: float = 1e-5,
    rel_tol: float = 1e-3,
) -> GradientCheckReport:
    """Compare the analytic objective gradient (w.r.t. every toy logit)
    against central finite differences.

    Token positions whose log-ratio lies within 10*h of a clip kink are
    excluded: the objective is not differentiable there. The relative error
    is |analytic - numeric| / max(|analytic|, |numeric|, 1e-4).
    """
    if beta > 0 and any(r.ref_logprobs is None for r in instance.rollouts):
        raise MissingRefLogprobs("beta > 0 requires ref logprobs on every rollout")
    advantages = group_advantages(instance.rewards, instance.eps_std).per_rollout
    group_size = len(instance.rollouts)
    kink_logs = (np.log(1.0 - epsilon), np.log(1.0 + epsilon))

    checked = 0
    skipped = 0
    max_abs = 0.0
    max_rel = 0.0
    for rollout, advantage in zip(instance.rollouts, advantages):
        n_tokens, vocab = rollout.logits.shape
        new = _logprobs_from_logits(rollout.logits, rollout.token_ids)
        probs = np.exp(
            rollout.logits
            - rollout.logits.max(axis=1, keepdims=True)
        )
        probs /= probs.sum(axis=1, keepdims=True)
        ratios = np.exp(new - rollout.old_logprobs)

        # surrogate coefficient: gradient flows only through the unclipped branch
        coeff = advantage * ratios / (group_size * n_tokens)
        if advantage > 0:
            coeff[ratios > 1.0 + epsilon] = 0.0
        elif advantage < 0:
            coeff[ratios < 1.0 - epsilon] = 0.0
        else:
            coeff[:] = 0.0
        if beta > 0:
            d = rollout.ref_logprobs - new
            coeff = coeff - beta * (1.0 - np.exp(d)) / (group_size * n_tokens)

        log_ratio = new - rollout.old_logprobs
        near_kink = np.minimum(
            np.abs(log_ratio - kink_logs[0]), np.abs(log_ratio - kink_logs[1])
        ) < 10.0 * h

        for t in range(n_tokens):
            if near_kink[t]:
                skipped += vocab
                continue
            onehot = np.zeros(vocab)
            onehot[rollout.token_ids[t]] = 1.0
            analytic_row = coeff[t] * (onehot - probs[t])
            for v in range(vocab):
                orig = rollout.logits[t, v]
                rollout.logits[t, v] = orig + h
                up = _toy_objective(instance, advantages, epsilon, beta)
                rollout.logits[t, v] = orig - h
                down = _toy_objective(instance, advantages, epsilon, beta)
                rollout.logits[t, v] = orig
                numeric = (up - down) / (2.0 * h)
                analytic = analytic_row[v]
                abs_err = abs(analytic - numeric)
                rel_err = abs_err / max(abs(analytic), abs(numeric), 1e-4)
                max_abs = max(max_abs, abs_err)
                max_rel = max(max_rel, rel_err)
                checked += 1
    return GradientCheckReport(
        checked_positions=checked,
        skipped_near_kink=skipped,
        max_abs_error=max_abs,
        max_rel_error=max_rel,
        passed=max_rel < rel_tol,
    )


def materialize_group(instance: ToyGroupInstance, task_id: str = "toy") -> RolloutGroup:
    """Lift a toy instance into a RolloutGroup (for objective evaluation)."""
    def clamp(arr: np.ndarray) -> tuple[float, ...]:
        return tuple(min(float(x), 0.0) for x in arr)

    rollouts = []
    for i, r in enumerate(instance.rollouts):
        new = _logprobs_from_logits(r.logits, r.token_ids)
        tokens = tuple(int(t) for t in r.token_ids)
        rollouts.append(
            Rollout(
                crux_text=f"toy-{i}",
                code_text=f"toy-{i}",
                token_logprobs_new=TokenLogProbSeq(tokens, clamp(new)),
                token_logprobs_old=TokenLogProbSeq(tokens, clamp(r.old_logprobs)),
                token_logprobs_ref=(
                    TokenLogProbSeq(tokens, clamp(r.ref_logprobs))
                    if r.ref_logprobs is not None
                    else None
                ),
            )
        )
    return RolloutGroup(task_id, tuple(rollouts))
