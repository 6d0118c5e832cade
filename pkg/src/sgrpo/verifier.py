"""Similarity scoring, threshold binarization, and the remote scorer client.

Remote wire protocol: POST a JSON body
``{"candidate": "3 1 2", "reference": "3 1 4"}`` and expect ``{"score": <float in [0, 1]>}``.
A non-2xx status, a malformed body, or a timeout each consume one attempt.
"""

from __future__ import annotations

import enum
import json
import logging
import threading
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import ConfigurationError, ContractViolation, InputError, VerifierUnavailable
from .trajectory import INJECTED_RECORD, RewardRecord, TrajectoryGroup

log = logging.getLogger(__name__)


class ScorerKind(str, enum.Enum):
    EXACT_MATCH = "ExactMatch"
    EDIT_SIMILARITY = "EditSimilarity"
    TOKEN_F1 = "TokenF1"
    REMOTE = "Remote"


@dataclass(frozen=True)
class ScorerSpec:
    kind: ScorerKind = ScorerKind.EXACT_MATCH
    endpoint: Optional[str] = None
    timeout_ms: int = 2000
    retries: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", ScorerKind(self.kind))
        if self.kind is ScorerKind.REMOTE and not self.endpoint:
            raise ConfigurationError("Remote scorer requires an endpoint")
        if self.kind is not ScorerKind.REMOTE and self.endpoint:
            raise ConfigurationError(f"{self.kind.value} scorer does not take an endpoint")
        if self.timeout_ms <= 0:
            raise ConfigurationError("timeout_ms must be positive")
        if self.retries < 0:
            raise ConfigurationError("retries must be non-negative")

    @property
    def scorer_id(self) -> str:
        if self.kind is ScorerKind.REMOTE:
            return f"Remote:{self.endpoint}"
        return self.kind.value


@dataclass(frozen=True)
class BinarizerSpec:
    delta: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError(f"delta must lie in [0, 1], got {self.delta}")


def levenshtein(a: Sequence[int], b: Sequence[int]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def edit_similarity(candidate: Sequence[int], reference: Sequence[int]) -> float:
    longest = max(len(candidate), len(reference))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(candidate, reference) / longest


def token_f1(candidate: Sequence[int], reference: Sequence[int]) -> float:
    if not candidate or not reference:
        return 1.0 if not candidate and not reference else 0.0
    overlap = sum((Counter(candidate) & Counter(reference)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(candidate)
    recall = overlap / len(reference)
    return 2 * precision * recall / (precision + recall)


def remote_score(spec: ScorerSpec, candidate: Sequence[int], reference: Sequence[int]) -> float:
    body = json.dumps({
        "candidate": " ".join(str(t) for t in candidate),
        "reference": " ".join(str(t) for t in reference),
    }).encode("utf-8")
    last_error = None
    for attempt in range(spec.retries + 1):
        req = urllib.request.Request(
            spec.endpoint, data=body, method="POST", headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=spec.timeout_ms / 1000.0) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            value = float(payload["score"])
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"score {value} outside [0, 1]")
            return value
        except (urllib.error.URLError, OSError, ValueError, KeyError, TypeError) as exc:
            # HTTPError (non-2xx) is a URLError subclass
            last_error = exc
            log.warning("remote scorer attempt %d/%d failed: %s", attempt + 1, spec.retries + 1, exc)
    raise VerifierUnavailable(f"remote scorer at {spec.endpoint} unavailable: {last_error}")


def score(spec: ScorerSpec, candidate: Sequence[int], reference: Sequence[int]) -> float:
    """Raw similarity ``S(candidate, reference)`` in [0, 1]."""
    candidate, reference = tuple(candidate), tuple(reference)
    kind = spec.kind
    if kind is ScorerKind.EXACT_MATCH:
        return 1.0 if candidate == reference else 0.0
    if kind is ScorerKind.EDIT_SIMILARITY:
        return edit_similarity(candidate, reference)
    if kind is ScorerKind.TOKEN_F1:
        return token_f1(candidate, reference)
    return remote_score(spec, candidate, reference)


def binarize(spec: BinarizerSpec, raw: float) -> int:
    if not 0.0 <= raw <= 1.0:
        raise InputError(f"raw score must lie in [0, 1], got {raw}")
    return 1 if raw >= spec.delta else 0


class Scorer:
    """A scorer with an optional per-instance cache, safe to share across threads.

    ``calls`` counts invocations of the underlying scoring function, so cache
    hits and injected trajectories do not increment it.
    """

    def __init__(self, spec: ScorerSpec, cache: bool = True):
        self.spec = spec
        self.use_cache = cache
        self.calls = 0
        self._cache: dict = {}
        self._lock = threading.Lock()

    @property
    def scorer_id(self) -> str:
        return self.spec.scorer_id

    def __call__(self, candidate: Sequence[int], reference: Sequence[int]) -> float:
        key = (self.scorer_id, tuple(candidate), tuple(reference))
        if self.use_cache:
            with self._lock:
                if key in self._cache:
                    return self._cache[key]
        value = score(self.spec, candidate, reference)
        with self._lock:
            self.calls += 1
            if self.use_cache:
                self._cache.setdefault(key, value)
        return value


def score_group(scorer, bin_spec: BinarizerSpec, group: TrajectoryGroup, target: Sequence[int]) -> list:
    """Reward records for every member; injected members bypass the scorer."""
    if group.advantages is not None:
        raise ContractViolation("group already has advantages")
    if not isinstance(scorer, Scorer):
        scorer = Scorer(scorer, cache=False)
    records = []
    for member in group.members:
        if member.injected:
            records.append(INJECTED_RECORD)
            continue
        raw = scorer(member.seq, target)
        records.append(RewardRecord(raw_score=raw, reward=binarize(bin_spec, raw), scorer_id=scorer.scorer_id))
    return records
