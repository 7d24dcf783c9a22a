"""The four reward components and the progressive mixing schedule.

A rollout produces a CRUX document followed by Verilog code. Rewards:
format (does the CRUX have the right shape, scored on a four-check rubric),
compile (did the code compile), crux (how probable is the reference code
given the produced CRUX, the geometric mean of token probabilities), and
code (fraction of testbench output lines matching the reference run).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .cruxdoc import ALL_SECTIONS, interface_mismatches, parse_crux
from .harness import SimOutcome
from .interface import ModuleInterface

logger = logging.getLogger(__name__)


class EmptySequence(ValueError):
    """A logprob-based reward was asked to score zero tokens."""


@dataclass(frozen=True)
class TokenLogProbSeq:
    """Aligned token ids and their log probabilities.

    Logprobs are never positive. Operations that need at least one token
    raise EmptySequence on the degenerate empty container.
    """

    tokens: tuple[int, ...]
    logprobs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.logprobs):
            raise ValueError("tokens and logprobs must have equal length")
        for lp in self.logprobs:
            if not math.isfinite(lp) or lp > 0.0:
                raise ValueError(f"logprobs must be finite and <= 0, got {lp}")

    def __len__(self) -> int:
        return len(self.tokens)


def format_reward(crux_text: str, reference_interface: ModuleInterface) -> float:
    """Score CRUX well-formedness on a rubric of four equally-weighted checks:
    all three sections present, interface parses, interface agrees exactly
    with the reference header, Core Functions nonempty. Returns k/4."""
    report = parse_crux(crux_text)
    checks = (
        report.sections_found == ALL_SECTIONS,
        report.interface_parsable,
        report.interface is not None
        and not interface_mismatches(report.interface, reference_interface),
        report.core_functions_nonempty,
    )
    return sum(checks) / 4.0


def compile_reward(outcome: SimOutcome) -> float:
    return 1.0 if outcome.compile_ok else 0.0


def code_reward(outcome: SimOutcome) -> float:
    """Functional score: the testbench match fraction, 0 when the run never
    completed."""
    if outcome.ran_ok and outcome.match_fraction is not None:
        return outcome.match_fraction
    return 0.0


def crux_reward(seq: TokenLogProbSeq | None) -> float:
    """Geometric mean of the reference code's token probabilities under the
    policy conditioned on (task, produced CRUX): exp(mean of logprobs).

    ``None`` means the gateway could not score; that scores 0 with a logged
    diagnostic rather than raising, so batch scoring never aborts.
    """
    if seq is None:
        logger.warning("crux_reward: no logprobs available; scoring 0")
        return 0.0
    if len(seq) == 0:
        raise EmptySequence("cannot score an empty token sequence")
    return math.exp(math.fsum(seq.logprobs) / len(seq))


EARLY_WEIGHTS = (1.0, 3.0, 4.0, 6.0)
LATE_WEIGHTS = (0.5, 1.5, 4.0, 8.0)


@dataclass(frozen=True)
class WeightSchedule:
    """Progressive reward weights over (format, compile, crux, code).

    The early weights hold for the first tenth of an epoch, then the late
    weights take over: the switch step is floor(switch_fraction *
    steps_per_epoch) and the late phase starts at that step.
    """

    steps_per_epoch: int
    early: tuple[float, float, float, float] = EARLY_WEIGHTS
    late: tuple[float, float, float, float] = LATE_WEIGHTS
    switch_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be positive")
        if not 0.0 <= self.switch_fraction <= 1.0:
            raise ValueError("switch_fraction must be in [0,1]")
        if len(self.early) != 4 or len(self.late) != 4:
            raise ValueError("weight vectors must have four entries")

    @property
    def switch_step(self) -> int:
        return math.floor(self.switch_fraction * self.steps_per_epoch)

    def weights_at(self, global_step: int) -> tuple[float, float, float, float]:
        if global_step < 0:
            raise ValueError("global_step must be >= 0")
        return self.early if global_step < self.switch_step else self.late

    def phase_at(self, global_step: int) -> str:
        return "early" if global_step < self.switch_step else "late"


@dataclass(frozen=True)
class RewardVector:
    """The four component scores plus their scheduled mix."""

    format_r: float
    compile_r: float
    crux_r: float
    code_r: float
    mixed: float
    weights_phase: str

    def __post_init__(self) -> None:
        for name in ("format_r", "compile_r", "crux_r", "code_r"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.compile_r not in (0.0, 1.0):
            raise ValueError(f"compile_r is binary, got {self.compile_r}")
        if self.weights_phase not in ("early", "late"):
            raise ValueError(f"unknown weights_phase: {self.weights_phase!r}")


def mix(
    parts: tuple[float, float, float, float],
    schedule: WeightSchedule,
    global_step: int,
) -> float:
    """Weighted sum of (format, compile, crux, code) at this step."""
    weights = schedule.weights_at(global_step)
    return math.fsum(w * p for w, p in zip(weights, parts))


def reward_vector(
    parts: tuple[float, float, float, float],
    schedule: WeightSchedule,
    global_step: int,
) -> RewardVector:
    return RewardVector(
        format_r=parts[0],
        compile_r=parts[1],
        crux_r=parts[2],
        code_r=parts[3],
        mixed=mix(parts, schedule, global_step),
        weights_phase=schedule.phase_at(global_step),
    )
