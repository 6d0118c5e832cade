"""Training-step core: conditional ground-truth injection, the clipped
surrogate objective with KL penalty, and parameter updates for every variant.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import policy as pol
from .errors import ConfigurationError, ContractViolation
from .policy import PolicyParams, PolicySnapshot, Role
from .trajectory import (
    INJECTED_RECORD,
    Prompt,
    TrajectoryGroup,
)
from .verifier import BinarizerSpec, Scorer, score_group


class Variant(str, enum.Enum):
    SFT = "SFT"
    GRPO = "GRPO"
    SGRPO_UNCOND = "SGRPO_UNCOND"
    SGRPO_CGI = "SGRPO_CGI"


class RatioLevel(str, enum.Enum):
    SEQUENCE = "Sequence"
    TOKEN = "Token"


class KLEstimator(str, enum.Enum):
    EXACT = "Exact"
    K3 = "K3"


class OptimizerKind(str, enum.Enum):
    SGD = "SGD"
    ADAM = "Adam"


@dataclass(frozen=True)
class TrainConfig:
    G: int = 5
    delta: float = 0.9
    beta: float = 0.01
    clip_range: float = 0.2
    adv_eps: float = 1e-6
    lr: float = 0.05
    variant: Variant = Variant.SGRPO_CGI
    ratio_level: RatioLevel = RatioLevel.TOKEN
    kl_estimator: KLEstimator = KLEstimator.EXACT
    optimizer: OptimizerKind = OptimizerKind.ADAM
    seed: int = 0

    def __post_init__(self):
        for name, enum_type in (
            ("variant", Variant),
            ("ratio_level", RatioLevel),
            ("kl_estimator", KLEstimator),
            ("optimizer", OptimizerKind),
        ):
            try:
                object.__setattr__(self, name, enum_type(getattr(self, name)))
            except ValueError as exc:
                raise ConfigurationError(str(exc)) from None
        if self.G < 2:
            raise ConfigurationError(f"G must be >= 2, got {self.G}")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError(f"delta must lie in [0, 1], got {self.delta}")
        if self.beta < 0:
            raise ConfigurationError("beta must be non-negative")
        if not self.clip_range > 0:
            raise ConfigurationError("clip_range must be positive")
        if not self.adv_eps > 0:
            raise ConfigurationError("adv_eps must be positive")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")


@dataclass
class StepReport:
    step: int
    mean_raw_score: float
    mean_reward: float
    injection_fired: bool
    grad_norm: float
    kl_value: float
    surrogate_value: float
    surrogate_grad_norm: float = 0.0
    sampled_successes: int = 0


# Optimizers ------------------------------------------------------------------

class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: PolicyParams, grad: np.ndarray) -> None:
        params.logits -= self.lr * grad


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None

    def step(self, params: PolicyParams, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(params.logits)
            self.v = np.zeros_like(params.logits)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        params.logits -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer is OptimizerKind.SGD:
        return SGD(cfg.lr)
    return Adam(cfg.lr)


# Injection -------------------------------------------------------------------

def detect_group_failure(rewards: Sequence[int]) -> bool:
    """True iff no member earned a positive reward."""
    return max(rewards) == 0


def select_replacement(group: TrajectoryGroup) -> int:
    """Index of the least likely member; ties go to the smallest index."""
    if group.injected:
        raise ContractViolation("replacement is only chosen among sampled members")
    logps = [m.seq_logprob for m in group.members]
    return logps.index(min(logps))


def inject_ground_truth(group: TrajectoryGroup, prompt: Prompt, behavior: PolicySnapshot) -> TrajectoryGroup:
    """Swap the least likely member of an all-fail group for the prompt's target."""
    if group.injected or any(m.injected for m in group.members):
        raise ContractViolation("group already carries an injected trajectory")
    if group.advantages is not None:
        raise ContractViolation("cannot inject after advantages were computed")
    if group.rewards is None or not detect_group_failure(group.reward_values()):
        raise ContractViolation("injection requires a scored, fully failed group")
    anchor = pol.teacher_forced(behavior, prompt)
    idx = select_replacement(group)
    members = list(group.members)
    rewards = list(group.rewards)
    members[idx] = anchor
    rewards[idx] = INJECTED_RECORD
    return TrajectoryGroup(prompt_id=group.prompt_id, members=members, rewards=rewards, injected=True)


def append_ground_truth(group: TrajectoryGroup, prompt: Prompt, behavior: PolicySnapshot) -> TrajectoryGroup:
    """Complete a scored group of G-1 samples with the target (unconditional injection)."""
    if group.injected:
        raise ContractViolation("group already carries an injected trajectory")
    if group.rewards is None:
        raise ContractViolation("group has not been scored")
    anchor = pol.teacher_forced(behavior, prompt)
    return TrajectoryGroup(
        prompt_id=group.prompt_id,
        members=group.members + (anchor,),
        rewards=group.rewards + (INJECTED_RECORD,),
        injected=True,
    )


# Objective -------------------------------------------------------------------

def surrogate_term(ratio: float, advantage: float, clip_range: float) -> float:
    clipped = min(max(ratio, 1.0 - clip_range), 1.0 + clip_range)
    return min(ratio * advantage, clipped * advantage)


def _surrogate_and_slope(ratio: np.ndarray, adv: np.ndarray, clip_range: float) -> tuple:
    """Elementwise clipped surrogate and its derivative with respect to log(ratio)."""
    clipped = np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range)
    value = np.minimum(ratio * adv, clipped * adv)
    active = np.where(adv > 0, ratio <= 1.0 + clip_range, ratio >= 1.0 - clip_range)
    slope = np.where(active & (adv != 0), adv * ratio, 0.0)
    return value, slope


@dataclass
class ObjectiveTerms:
    surrogate: float
    surrogate_grad: np.ndarray
    kl: float
    kl_grad: np.ndarray
    beta: float

    @property
    def value(self) -> float:
        return self.surrogate - self.beta * self.kl

    @property
    def gradient(self) -> np.ndarray:
        return self.surrogate_grad - self.beta * self.kl_grad


def objective_terms(params, behavior, ref, group: TrajectoryGroup, cfg: TrainConfig) -> ObjectiveTerms:
    if group.advantages is None:
        raise ContractViolation("objective requires advantages")
    pid = group.prompt_id
    logp = pol.log_softmax(params.logits[pid])
    probs = np.exp(logp)
    L, V = logp.shape
    pos = np.arange(L)
    G = group.size
    seqs = np.array([m.seq for m in group.members], dtype=np.int64)  # (G, L)
    beh = np.array([m.behavior_logprobs for m in group.members])  # (G, L)
    adv = np.asarray(group.advantages)
    cur = logp[pos[None, :], seqs]  # (G, L)

    if cfg.ratio_level is RatioLevel.TOKEN:
        ratio = np.exp(cur - beh)
        value, slope = _surrogate_and_slope(ratio, adv[:, None], cfg.clip_range)
        surrogate = float(value.sum()) / (G * L)
        coef = slope / (G * L)  # (G, L): d surrogate / d cur[i, t]
    else:
        ratio = np.exp(cur.sum(axis=1) - beh.sum(axis=1))
        value, slope = _surrogate_and_slope(ratio, adv, cfg.clip_range)
        surrogate = float(value.sum()) / G
        coef = np.repeat((slope / G)[:, None], L, axis=1)

    row = np.zeros((L, V))
    np.add.at(row, (np.broadcast_to(pos, seqs.shape), seqs), coef)
    row -= probs * coef.sum(axis=0)[:, None]
    s_grad = np.zeros_like(params.logits)
    s_grad[pid] = row

    if cfg.kl_estimator is KLEstimator.EXACT:
        kl, kl_grad = pol.kl_to(params, ref, pid)
    else:
        sampled = [m.seq for m in group.members if not m.injected]
        kl, kl_grad = pol.k3_kl(params, ref, pid, sampled)
    return ObjectiveTerms(surrogate, s_grad, kl, kl_grad, cfg.beta)


def objective_and_gradient(params, behavior, ref, group: TrajectoryGroup, cfg: TrainConfig) -> tuple:
    """Clipped surrogate averaged over the group minus the beta-weighted KL, and its gradient."""
    terms = objective_terms(params, behavior, ref, group, cfg)
    return terms.value, terms.gradient


# Training step ---------------------------------------------------------------

@dataclass
class TrainState:
    params: PolicyParams
    ref: PolicySnapshot
    scorer: Scorer
    binarizer: BinarizerSpec
    rng: np.random.Generator
    optimizer: object
    step: int = 0
    last_group: Optional[TrajectoryGroup] = field(default=None, repr=False)

    @classmethod
    def create(cls, params: PolicyParams, cfg: TrainConfig, scorer: Scorer,
               binarizer: Optional[BinarizerSpec] = None, rng=None, optimizer=None) -> "TrainState":
        return cls(
            params=params,
            ref=pol.snapshot(params, Role.REFERENCE),
            scorer=scorer,
            binarizer=binarizer or BinarizerSpec(cfg.delta),
            rng=rng if rng is not None else np.random.default_rng(cfg.seed),
            optimizer=optimizer or make_optimizer(cfg),
        )


def sample_group(behavior: PolicySnapshot, prompt_id: int, n: int, rng) -> TrajectoryGroup:
    members = [pol.sample(behavior, prompt_id, rng) for _ in range(n)]
    return TrajectoryGroup(prompt_id=prompt_id, members=members)


def build_group(state: TrainState, behavior: PolicySnapshot, prompt: Prompt, cfg: TrainConfig) -> TrajectoryGroup:
    """Sample, score, and (per variant) inject; returns a scored group of size G."""
    n = cfg.G - 1 if cfg.variant is Variant.SGRPO_UNCOND else cfg.G
    group = sample_group(behavior, prompt.id, n, state.rng)
    group = group.with_rewards(score_group(state.scorer, state.binarizer, group, prompt.target))
    if cfg.variant is Variant.SGRPO_UNCOND:
        return append_ground_truth(group, prompt, behavior)
    if cfg.variant is Variant.SGRPO_CGI and detect_group_failure(group.reward_values()):
        return inject_ground_truth(group, prompt, behavior)
    return group


def train_step(state: TrainState, prompt: Prompt, cfg: TrainConfig) -> StepReport:
    """One on-policy update on ``prompt``.

    Raises ``VerifierUnavailable`` before touching parameters if scoring fails.
    """
    behavior = pol.snapshot(state.params, Role.BEHAVIOR)
    group = build_group(state, behavior, prompt, cfg)
    raw = [r.raw_score for r in group.rewards]
    rewards = group.reward_values()
    sampled_successes = sum(r.reward for m, r in zip(group.members, group.rewards) if not m.injected)

    if cfg.variant is Variant.SFT:
        loss, grad = pol.sft_gradient(state.params, prompt)
        kl, _ = pol.kl_to(state.params, state.ref, prompt.id)
        surrogate, s_norm, total_grad = -loss, float(np.linalg.norm(grad)), -grad
    else:
        group = group.with_advantages(cfg.adv_eps)
        terms = objective_terms(state.params, behavior, state.ref, group, cfg)
        kl, surrogate = terms.kl, terms.surrogate
        s_norm = float(np.linalg.norm(terms.surrogate_grad))
        total_grad = terms.gradient

    state.optimizer.step(state.params, -total_grad)
    state.last_group = group
    report = StepReport(
        step=state.step,
        mean_raw_score=math.fsum(raw) / len(raw),
        mean_reward=sum(rewards) / len(rewards),
        injection_fired=group.injected,
        grad_norm=float(np.linalg.norm(total_grad)),
        kl_value=kl,
        surrogate_value=surrogate,
        surrogate_grad_norm=s_norm,
        sampled_successes=sampled_successes,
    )
    state.step += 1
    return report
