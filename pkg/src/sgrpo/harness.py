"""Experiment orchestration: runs variants over seeds, logs metrics, compares runs."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import policy as pol
from .config import ExperimentConfig
from .engine import TrainState, Variant, make_optimizer, train_step
from .errors import ConfigurationError, InputError, VerifierUnavailable
from .policy import PolicyParams
from .tasks import TaskKind, TaskSpec, generate_tasks, retention_metric
from .verifier import Scorer

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
METRICS = "metrics.jsonl"
CURVE = "reward_curve.csv"


@dataclass
class MetricRow:
    run_id: str
    seed: int
    variant: str
    step: int
    mean_raw_score: float
    mean_reward: float
    injection_rate: float
    kl_ref: float
    grad_norm: float
    retention_success: Optional[float]
    wall_ms: Optional[float]
    injection_fired: bool
    sampled_successes: int

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))


@dataclass
class RunResult:
    run_id: str
    variant: str
    seed: int
    status: str
    rows: list = field(default_factory=list, repr=False)
    pretrain_retention: Optional[float] = None
    pretrain_steps: int = 0
    error: Optional[str] = None
    params: Optional[PolicyParams] = field(default=None, repr=False)


def retention_prompts_for(config: ExperimentConfig) -> list:
    if config.retention is None:
        return []
    spec = TaskSpec(kind=TaskKind.RETENTION, vocab_size=config.task.vocab_size, seq_len=config.task.seq_len,
                    num_prompts=config.retention.num_prompts, seed=config.retention.seed)
    return generate_tasks(spec, id_offset=config.task.num_prompts)


def _pretrain(params, optimizer, prompts, config, scorer, seed):
    """SFT on the retention prompts until the retention metric reaches its threshold."""
    r = config.retention
    success = retention_metric(params, prompts, scorer, config.binarizer, r.samples_per_prompt, seed)
    steps = 0
    while success < r.pretrain_threshold and steps < r.pretrain_max_steps:
        for prompt in prompts:
            _, grad = pol.sft_gradient(params, prompt)
            optimizer.step(params, grad)
        steps += 1
        if steps % r.pretrain_check_every == 0:
            success = retention_metric(params, prompts, scorer, config.binarizer, r.samples_per_prompt, seed)
    return success, steps


def run_single(config: ExperimentConfig, variant: Variant, seed: int) -> RunResult:
    """Train one (variant, seed) pair in memory; no files are written."""
    run_id = f"{variant.value}-s{seed}"
    cfg = dataclasses.replace(config.train, variant=variant, seed=seed)
    domain = generate_tasks(config.task)
    retention = retention_prompts_for(config)
    scorer = Scorer(config.scorer)
    params = PolicyParams.uniform(len(domain) + len(retention), config.task.seq_len, config.task.vocab_size)
    optimizer = make_optimizer(cfg)
    result = RunResult(run_id=run_id, variant=variant.value, seed=seed, status="ok")
    # evaluation draws use their own stream so they never perturb training samples
    eval_seed = seed + 0x5EED
    if retention:
        result.pretrain_retention, result.pretrain_steps = _pretrain(
            params, optimizer, retention, config, scorer, eval_seed)
    state = TrainState.create(params, cfg, scorer, config.binarizer,
                              rng=np.random.default_rng(seed), optimizer=optimizer)
    window = deque(maxlen=config.injection_window)
    for step in range(config.steps):
        prompt = domain[step % len(domain)]
        t0 = time.perf_counter()
        rng_state = state.rng.bit_generator.state
        for attempt in range(config.step_retry_budget + 1):
            try:
                report = train_step(state, prompt, cfg)
                break
            except VerifierUnavailable as exc:
                log.warning("%s step %d: %s (attempt %d)", run_id, step, exc, attempt + 1)
                state.rng.bit_generator.state = rng_state
        else:
            result.status = "failed"
            result.error = f"verifier unavailable at step {step}"
            break
        window.append(report.injection_fired)
        retention_success = None
        if retention and ((step + 1) % config.retention.eval_every == 0 or step + 1 == config.steps):
            retention_success = retention_metric(params, retention, scorer, config.binarizer,
                                                 config.retention.samples_per_prompt, eval_seed)
        wall = (time.perf_counter() - t0) * 1000.0 if config.log_wall_time else None
        result.rows.append(MetricRow(
            run_id=run_id, seed=seed, variant=variant.value, step=step,
            mean_raw_score=report.mean_raw_score, mean_reward=report.mean_reward,
            injection_rate=sum(window) / len(window), kl_ref=report.kl_value,
            grad_norm=report.grad_norm, retention_success=retention_success, wall_ms=wall,
            injection_fired=report.injection_fired, sampled_successes=report.sampled_successes,
        ))
    result.params = params
    return result


def _check_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigurationError(f"output directory {out} is not writable: {exc}") from None


def write_reward_curve(results: Sequence[RunResult], path: Path) -> None:
    variants = sorted({r.variant for r in results if r.status == "ok"})
    steps = max((len(r.rows) for r in results), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step"] + variants)
        for step in range(steps):
            row = [step]
            for v in variants:
                vals = [r.rows[step].mean_reward for r in results
                        if r.variant == v and r.status == "ok" and step < len(r.rows)]
                row.append(repr(float(np.mean(vals))) if vals else "")
            writer.writerow(row)


def run(config: ExperimentConfig, output_dir=None) -> Path:
    """Run every (variant, seed) and write metrics, curves, checkpoints, and a manifest."""
    out = Path(output_dir or config.output_dir)
    _check_writable(out)
    results = []
    for variant in config.variants:
        for seed in config.seeds:
            res = run_single(config, variant, seed)
            run_dir = out / "runs" / res.run_id
            run_dir.mkdir(parents=True, exist_ok=True)
            with open(run_dir / METRICS, "w") as fh:
                for row in res.rows:
                    fh.write(row.to_json() + "\n")
            suffix = "bin" if config.checkpoint_format == "binary" else "json"
            pol.save_checkpoint(res.params, run_dir / f"checkpoint.{suffix}", config.checkpoint_format)
            log.info("%s: status=%s", res.run_id, res.status)
            results.append(res)
    write_reward_curve(results, out / CURVE)
    manifest = {
        "code_version": __version__,
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "task": config.task.to_dict(),
        "runs": [
            {"run_id": r.run_id, "variant": r.variant, "seed": r.seed, "status": r.status,
             "dir": f"runs/{r.run_id}", "steps_completed": len(r.rows),
             "pretrain_retention": r.pretrain_retention, "pretrain_steps": r.pretrain_steps,
             "error": r.error}
            for r in results
        ],
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


# Comparison ------------------------------------------------------------------

def load_rows(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run_summary(rows: Sequence[dict], final_window: int = 100) -> dict:
    """Per-run scalars used by :func:`compare` and the acceptance checks."""
    tail = rows[-final_window:]
    retention = [r["retention_success"] for r in rows if r["retention_success"] is not None]
    first = next((r["step"] for r in rows if r["sampled_successes"] > 0), None)
    return {
        "final_mean_reward": float(np.mean([r["mean_reward"] for r in tail])) if tail else float("nan"),
        "retention_success": retention[-1] if retention else None,
        "total_injections": sum(bool(r["injection_fired"]) for r in rows),
        "steps_to_first_success": first,
    }


METRIC_NAMES = ("final_mean_reward", "retention_success", "total_injections", "steps_to_first_success")


@dataclass
class ComparisonReport:
    rows: list  # one dict per (source, variant)
    differences: list  # one dict per (source, variant) relative to the first source

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["source", "variant", "seeds"] + [f"{m}_{s}" for m in METRIC_NAMES for s in ("mean", "min", "max")]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: row.get(k) for k in cols})
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'source':<28} {'variant':<13} {'final_reward':>22} {'retention':>22} "
                 f"{'injections':>22} {'first_success':>22}"]

        def cell(row, m):
            if row[f"{m}_mean"] is None:
                return f"{'n/a':>22}"
            return f"{row[f'{m}_mean']:>8.3f} [{row[f'{m}_min']:.3g},{row[f'{m}_max']:.3g}]".rjust(22)

        for row in self.rows:
            lines.append(f"{row['source'][-28:]:<28} {row['variant']:<13} "
                         + " ".join(cell(row, m) for m in METRIC_NAMES))
        if self.differences:
            lines.append("")
            lines.append("differences vs first source (mean):")
            for d in self.differences:
                vals = ", ".join(f"{m}={d[m]:+.4g}" if d[m] is not None else f"{m}=n/a" for m in METRIC_NAMES)
                lines.append(f"  {d['source']} {d['variant']}: {vals}")
        return "\n".join(lines)


def _aggregate(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None, None
    return float(np.mean(vals)), float(min(vals)), float(max(vals))


def compare(run_dirs: Sequence, final_window: int = 100) -> ComparisonReport:
    """Tabulate final reward, retention, injections, and first success per variant."""
    if not run_dirs:
        raise InputError("compare needs at least one run directory")
    manifests = []
    for d in run_dirs:
        path = Path(d) / MANIFEST
        if not path.is_file():
            raise InputError(f"{d} has no {MANIFEST}")
        manifests.append((Path(d), json.loads(path.read_text())))
    task0 = manifests[0][1]["task"]
    for d, m in manifests[1:]:
        if m["task"] != task0:
            raise InputError(f"task spec of {d} differs from {manifests[0][0]}; refusing to compare")

    rows = []
    for d, m in manifests:
        by_variant = {}
        for run in m["runs"]:
            if run["status"] != "ok":
                continue
            summary = run_summary(load_rows(d / run["dir"] / METRICS), final_window)
            by_variant.setdefault(run["variant"], []).append(summary)
        for variant in sorted(by_variant):
            summaries = by_variant[variant]
            row = {"source": str(d), "variant": variant, "seeds": len(summaries)}
            for name in METRIC_NAMES:
                row[f"{name}_mean"], row[f"{name}_min"], row[f"{name}_max"] = _aggregate(
                    [s[name] for s in summaries])
            rows.append(row)

    first_source = str(manifests[0][0])
    base = {r["variant"]: r for r in rows if r["source"] == first_source}
    differences = []
    for d, _ in manifests[1:]:
        for r in rows:
            if r["source"] != str(d) or r["variant"] not in base:
                continue
            diff = {"source": str(d), "variant": r["variant"]}
            for name in METRIC_NAMES:
                a, b = base[r["variant"]][f"{name}_mean"], r[f"{name}_mean"]
                diff[name] = None if a is None or b is None else b - a
            differences.append(diff)
    return ComparisonReport(rows=rows, differences=differences)
