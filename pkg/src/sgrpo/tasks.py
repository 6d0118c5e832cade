"""Synthetic task families and the retention proxy metric."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import policy as pol
from .errors import ConfigurationError, InputError
from .trajectory import Prompt
from .verifier import BinarizerSpec, Scorer, ScorerSpec, binarize

# Seed salts keep task families with equal seeds on independent streams.
_SALT = {"Needle": 0x4E, "Graded": 0x47, "Retention": 0x52}


class TaskKind(str, enum.Enum):
    NEEDLE = "Needle"
    GRADED = "Graded"
    RETENTION = "Retention"


@dataclass(frozen=True)
class TaskSpec:
    """A synthetic task family.

    Needle targets are uniform random, so a uniform policy hits a target with
    probability ``vocab_size ** -seq_len`` per sample. Graded targets use
    distinct tokens, which makes the edit similarity of a candidate with
    ``k`` positions overwritten by an unused token exactly ``1 - k/L``.
    """

    kind: TaskKind = TaskKind.NEEDLE
    vocab_size: int = 16
    seq_len: int = 4
    num_prompts: int = 8
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", TaskKind(self.kind))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.vocab_size < 2 or self.seq_len < 1 or self.num_prompts < 1:
            raise ConfigurationError("need vocab_size >= 2, seq_len >= 1, num_prompts >= 1")
        if self.kind is TaskKind.GRADED and self.vocab_size <= self.seq_len:
            raise ConfigurationError("Graded tasks need vocab_size > seq_len")

    @property
    def random_success_probability(self) -> float:
        return float(self.vocab_size) ** (-self.seq_len)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


def generate_tasks(spec: TaskSpec, id_offset: int = 0) -> list:
    """Deterministic prompt set for ``spec``; ids start at ``id_offset``."""
    rng = np.random.default_rng([spec.seed, _SALT[spec.kind.value]])
    prompts = []
    for i in range(spec.num_prompts):
        if spec.kind is TaskKind.GRADED:
            target = rng.choice(spec.vocab_size, size=spec.seq_len, replace=False)
        else:
            target = rng.integers(0, spec.vocab_size, size=spec.seq_len)
        pid = id_offset + i
        prompts.append(Prompt(id=pid, context_label=f"{spec.kind.value.lower()}-{pid}", target=tuple(target.tolist())))
    return prompts


def graded_variant(prompt: Prompt, k: int, vocab_size: int) -> tuple:
    """The target with its first ``k`` positions overwritten by a token absent from it."""
    unused = next(v for v in range(vocab_size) if v not in prompt.target)
    return tuple(unused if i < k else t for i, t in enumerate(prompt.target))


def retention_metric(params, retention_prompts: Sequence[Prompt], scorer, bin_spec: BinarizerSpec,
                     samples_per_prompt: int, seed: int = 0) -> float:
    """Fraction of sampled generations on retention prompts that pass the binarizer.

    Each prompt draws from its own stream keyed on ``(seed, prompt.id)``, so
    the result does not depend on prompt order.
    """
    if samples_per_prompt < 1:
        raise InputError("samples_per_prompt must be >= 1")
    if not retention_prompts:
        raise InputError("no retention prompts")
    if isinstance(scorer, ScorerSpec):
        scorer = Scorer(scorer)
    passed = 0
    for prompt in retention_prompts:
        rng = np.random.default_rng([seed, prompt.id])
        for _ in range(samples_per_prompt):
            traj = pol.sample(params, prompt.id, rng)
            passed += binarize(bin_spec, scorer(traj.seq, prompt.target))
    return passed / (len(retention_prompts) * samples_per_prompt)


def save_tasks(prompts: Sequence[Prompt], path) -> Path:
    path = Path(path)
    doc = [{"id": p.id, "label": p.context_label, "target": list(p.target)} for p in prompts]
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def load_tasks(path) -> list:
    doc = json.loads(Path(path).read_text())
    return [Prompt(id=int(d["id"]), context_label=d["label"], target=tuple(d["target"])) for d in doc]
