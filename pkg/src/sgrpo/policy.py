"""Tabular autoregressive softmax policy.

Logits are stored per prompt and per position, ``logits[p, t, v]``. The
policy at position ``t`` conditions on the prompt and the position only,
which keeps log-probabilities, their gradients, and the KL divergence to a
reference snapshot available in closed form.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ConfigurationError, InputError
from .trajectory import Prompt, Source, Trajectory


class Role(str, enum.Enum):
    BEHAVIOR = "Behavior"
    REFERENCE = "Reference"


class PolicyParams:
    """Mutable policy parameters of shape ``(P, L, V)``."""

    def __init__(self, logits):
        logits = np.array(logits, dtype=np.float64)
        if logits.ndim != 3 or min(logits.shape) < 1:
            raise ConfigurationError(f"logits must have shape (P, L, V) with positive dims, got {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise ConfigurationError("logits must be finite")
        self.logits = logits

    @classmethod
    def uniform(cls, num_prompts: int, seq_len: int, vocab_size: int) -> "PolicyParams":
        return cls(np.zeros((num_prompts, seq_len, vocab_size)))

    @property
    def num_prompts(self) -> int:
        return self.logits.shape[0]

    @property
    def seq_len(self) -> int:
        return self.logits.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[2]

    @property
    def shape(self) -> tuple:
        return self.logits.shape

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.logits.copy())


@dataclass(frozen=True, eq=False)
class PolicySnapshot:
    logits: np.ndarray
    role: Role

    num_prompts = PolicyParams.num_prompts
    seq_len = PolicyParams.seq_len
    vocab_size = PolicyParams.vocab_size
    shape = PolicyParams.shape


Policy = Union[PolicyParams, PolicySnapshot]


def snapshot(params: Policy, role: Role) -> PolicySnapshot:
    frozen = np.array(params.logits, dtype=np.float64, copy=True)
    frozen.setflags(write=False)
    return PolicySnapshot(frozen, Role(role))


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Log-softmax over the last axis via log-sum-exp."""
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def _check_prompt(policy: Policy, prompt_id: int) -> None:
    if not 0 <= prompt_id < policy.logits.shape[0]:
        raise InputError(f"prompt_id {prompt_id} out of range [0, {policy.logits.shape[0]})")


def _check_seq(policy: Policy, prompt_id: int, seq: Sequence[int]) -> np.ndarray:
    _check_prompt(policy, prompt_id)
    _, L, V = policy.logits.shape
    arr = np.asarray(seq, dtype=np.int64)
    if arr.shape != (L,):
        raise InputError(f"sequence length {arr.size} does not match L={L}")
    if arr.size and (arr.min() < 0 or arr.max() >= V):
        raise InputError(f"token ids must lie in [0, {V})")
    return arr


def sample(policy: Policy, prompt_id: int, rng: np.random.Generator) -> Trajectory:
    """Draw one sequence position by position from the softmax rows."""
    _check_prompt(policy, prompt_id)
    logp = log_softmax(policy.logits[prompt_id])
    cdf = np.cumsum(np.exp(logp), axis=-1)
    u = rng.random(logp.shape[0]) * cdf[:, -1]
    tokens = np.minimum((cdf < u[:, None]).sum(axis=-1), logp.shape[1] - 1)
    lps = logp[np.arange(logp.shape[0]), tokens]
    return Trajectory(seq=tuple(tokens.tolist()), behavior_logprobs=tuple(lps.tolist()), source=Source.SAMPLED)


def logprob(policy: Policy, prompt_id: int, seq: Sequence[int]) -> tuple:
    """Teacher-forced per-token log-probabilities and their sum."""
    arr = _check_seq(policy, prompt_id, seq)
    logp = log_softmax(policy.logits[prompt_id])
    per_token = logp[np.arange(arr.size), arr]
    return per_token, float(per_token.sum())


def grad_logprob(policy: Policy, prompt_id: int, seq: Sequence[int]) -> np.ndarray:
    """d logprob / d logits: ``onehot(seq[t]) - softmax`` at row ``prompt_id``, zero elsewhere."""
    arr = _check_seq(policy, prompt_id, seq)
    grad = np.zeros_like(policy.logits)
    row = -softmax(policy.logits[prompt_id])
    row[np.arange(arr.size), arr] += 1.0
    grad[prompt_id] = row
    return grad


def kl_to(policy: Policy, ref: Policy, prompt_id: int) -> tuple:
    """Exact KL(policy || ref) summed over positions at one prompt, with its gradient."""
    if policy.logits.shape != ref.logits.shape:
        raise ConfigurationError(f"shape mismatch: {policy.logits.shape} vs {ref.logits.shape}")
    _check_prompt(policy, prompt_id)
    logp = log_softmax(policy.logits[prompt_id])
    logq = log_softmax(ref.logits[prompt_id])
    p = np.exp(logp)
    d = logp - logq
    per_pos = np.sum(p * d, axis=-1)
    grad = np.zeros_like(policy.logits)
    grad[prompt_id] = p * (d - per_pos[:, None])
    return max(float(per_pos.sum()), 0.0), grad


def k3_kl(policy: Policy, ref: Policy, prompt_id: int, samples: Sequence[Sequence[int]]) -> tuple:
    """Sampled ``k3`` estimate of KL(policy || ref), summed over positions and averaged over samples.

    Per token ``k3 = q/p - 1 - log(q/p)``; samples are treated as fixed when
    differentiating.
    """
    if policy.logits.shape != ref.logits.shape:
        raise ConfigurationError(f"shape mismatch: {policy.logits.shape} vs {ref.logits.shape}")
    grad = np.zeros_like(policy.logits)
    if not samples:
        return 0.0, grad
    logp = log_softmax(policy.logits[prompt_id])
    logq = log_softmax(ref.logits[prompt_id])
    p = np.exp(logp)
    L = logp.shape[0]
    pos = np.arange(L)
    total = 0.0
    for seq in samples:
        arr = _check_seq(policy, prompt_id, seq)
        log_ratio = logq[pos, arr] - logp[pos, arr]
        ratio = np.exp(log_ratio)
        total += float(np.sum(ratio - 1.0 - log_ratio))
        # d k3 / d logp = 1 - q/p
        coef = 1.0 - ratio
        g = -p * coef[:, None]
        g[pos, arr] += coef
        grad[prompt_id] += g
    n = len(samples)
    return total / n, grad / n


def sft_gradient(policy: Policy, prompt: Prompt) -> tuple:
    """Negative log-likelihood of the target and its gradient."""
    _, total = logprob(policy, prompt.id, prompt.target)
    return -total, -grad_logprob(policy, prompt.id, prompt.target)


def teacher_forced(policy: Policy, prompt: Prompt) -> Trajectory:
    """The prompt's target as an injected trajectory scored under ``policy``."""
    if len(prompt.target) != policy.logits.shape[1]:
        raise ConfigurationError(
            f"target length {len(prompt.target)} does not match policy length {policy.logits.shape[1]}"
        )
    per_token, _ = logprob(policy, prompt.id, prompt.target)
    return Trajectory(seq=prompt.target, behavior_logprobs=tuple(per_token.tolist()), source=Source.INJECTED)


# Checkpoints -----------------------------------------------------------------

_MAGIC = b"SGRPOPOL"
_VERSION = 1
_HEADER = struct.Struct("<8sIQQQ")


def save_checkpoint(params: Policy, path, fmt: str = "binary") -> Path:
    path = Path(path)
    P, L, V = params.logits.shape
    if fmt == "binary":
        data = np.ascontiguousarray(params.logits, dtype="<f8")
        path.write_bytes(_HEADER.pack(_MAGIC, _VERSION, P, L, V) + data.tobytes(order="C"))
    elif fmt == "json":
        doc = {
            "format": "sgrpo-policy",
            "version": _VERSION,
            "shape": [P, L, V],
            "logits": [float(x) for x in params.logits.ravel(order="C")],
        }
        path.write_text(json.dumps(doc))
    else:
        raise ConfigurationError(f"unknown checkpoint format {fmt!r}")
    return path


def load_checkpoint(path) -> PolicyParams:
    raw = Path(path).read_bytes()
    if raw[:8] == _MAGIC:
        magic, version, P, L, V = _HEADER.unpack_from(raw)
        if version != _VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {version}")
        body = raw[_HEADER.size:]
        if len(body) != P * L * V * 8:
            raise ConfigurationError("checkpoint body length does not match its header")
        return PolicyParams(np.frombuffer(body, dtype="<f8").reshape(P, L, V).copy())
    doc = json.loads(raw.decode("utf-8"))
    if doc.get("format") != "sgrpo-policy" or doc.get("version") != _VERSION:
        raise ConfigurationError("not a policy checkpoint")
    P, L, V = doc["shape"]
    return PolicyParams(np.asarray(doc["logits"], dtype=np.float64).reshape(P, L, V))
