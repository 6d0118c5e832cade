"""Prompts, trajectories, groups, and group-relative advantages."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .errors import ConfigurationError, ContractViolation, InputError

TokenSeq = tuple  # tuple[int, ...]; fixed length L per task

DEFAULT_ADV_EPS = 1e-6


class Source(str, enum.Enum):
    SAMPLED = "Sampled"
    INJECTED = "Injected"


@dataclass(frozen=True)
class Prompt:
    id: int
    context_label: str
    target: TokenSeq

    def __post_init__(self):
        if self.id < 0:
            raise InputError(f"prompt id must be non-negative, got {self.id}")
        object.__setattr__(self, "target", tuple(int(t) for t in self.target))


@dataclass(frozen=True)
class Trajectory:
    seq: TokenSeq
    behavior_logprobs: tuple
    source: Source = Source.SAMPLED
    seq_logprob: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "seq", tuple(int(t) for t in self.seq))
        lps = tuple(float(x) for x in self.behavior_logprobs)
        if len(lps) != len(self.seq):
            raise InputError("behavior_logprobs must have one entry per token")
        if any(x > 0 for x in lps):
            raise InputError("log-probabilities must be <= 0")
        object.__setattr__(self, "behavior_logprobs", lps)
        object.__setattr__(self, "seq_logprob", math.fsum(lps))

    @property
    def injected(self) -> bool:
        return self.source is Source.INJECTED


@dataclass(frozen=True)
class RewardRecord:
    raw_score: float
    reward: int
    scorer_id: str

    def __post_init__(self):
        if not 0.0 <= self.raw_score <= 1.0:
            raise InputError(f"raw_score must lie in [0, 1], got {self.raw_score}")
        if self.reward not in (0, 1):
            raise InputError(f"reward must be 0 or 1, got {self.reward}")


INJECTED_RECORD = RewardRecord(raw_score=1.0, reward=1, scorer_id="ground-truth")


@dataclass(frozen=True)
class TrajectoryGroup:
    """The G candidates for one prompt.

    ``rewards`` is filled by scoring and ``advantages`` by estimation; both
    stay ``None`` until then. Use :meth:`with_rewards` / :meth:`with_advantages`
    to obtain the next stage instead of mutating.
    """

    prompt_id: int
    members: tuple
    rewards: Optional[tuple] = None
    injected: bool = False
    advantages: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        n_inj = sum(m.injected for m in self.members)
        if n_inj > 1:
            raise ContractViolation("a group holds at most one injected trajectory")
        if self.injected != (n_inj == 1):
            raise ContractViolation("injected flag disagrees with member sources")
        if self.rewards is not None:
            object.__setattr__(self, "rewards", tuple(self.rewards))
            if len(self.rewards) != len(self.members):
                raise ContractViolation("one reward record per member")
        if self.advantages is not None:
            object.__setattr__(self, "advantages", tuple(float(a) for a in self.advantages))
            if len(self.advantages) != len(self.members):
                raise ContractViolation("one advantage per member")

    @property
    def size(self) -> int:
        return len(self.members)

    def reward_values(self) -> list:
        if self.rewards is None:
            raise ContractViolation("group has not been scored")
        return [r.reward for r in self.rewards]

    def with_rewards(self, rewards: Sequence[RewardRecord]) -> "TrajectoryGroup":
        if self.advantages is not None:
            raise ContractViolation("cannot rescore a group that already has advantages")
        return replace(self, rewards=tuple(rewards))

    def with_advantages(self, eps: float = DEFAULT_ADV_EPS) -> "TrajectoryGroup":
        if self.advantages is not None:
            raise ContractViolation("advantages are written once")
        return replace(self, advantages=tuple(compute_advantages(self.reward_values(), eps)))


def group_stats(rewards: Sequence[float]) -> tuple:
    """Population mean and standard deviation (divide by G) of a reward group."""
    g = len(rewards)
    if g < 2:
        raise ConfigurationError(f"group size must be >= 2, got {g}")
    mean = math.fsum(rewards) / g
    var = math.fsum((r - mean) ** 2 for r in rewards) / g
    return mean, math.sqrt(var)


def compute_advantages(rewards: Sequence[float], eps: float = DEFAULT_ADV_EPS) -> list:
    """Group-normalized advantages ``(r_i - mean) / (std + eps)``.

    A zero-variance group returns exact zeros rather than ``0 / eps``
    rounding residue.
    """
    if not eps > 0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    mean, std = group_stats(rewards)
    if std == 0.0:
        return [0.0] * len(rewards)
    denom = std + eps
    return [(r - mean) / denom for r in rewards]
