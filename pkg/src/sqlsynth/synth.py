"""Cycle-consistent data synthesis.

For each attempt: sample an executable query in a target environment, ask
the generator for an utterance, re-parse that utterance with the forward
parser, and keep the pair only if the re-parse is consistent under the
configured criterion (denotation equality, canonical string match, or no
check at all for the no-cycle ablation). Every attempt is recorded,
including failures; keep-rate is a reported quantity, never inferred.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .adapter import generate_utterance, parse_utterance
from .canon import Query, render
from .dist import TemplateDistribution
from .errors import (
    AdapterError,
    ExecutionError,
    InvalidPredictionError,
    ProtocolError,
    SamplingExhaustedError,
    SqlsynthError,
    UnfillableEnvironmentError,
)
from .execution import denotations_equal, execute
from .sampler import SampledQuery, can_fill, sample_query, sample_turn_sequence
from .schema import CorpusExample, DatabaseEnv, save_corpus
from .workers import derive_rng, parallel_map

CONSISTENCY_MODES = ("execution", "string_match", "none")
RUN_MODES = ("adapt", "syntrain")
ABORT_WINDOW = 50


@dataclass(frozen=True)
class SynthRunConfig:
    mode: str = "adapt"
    consistency: str = "execution"
    target_count: int = 1
    seed: int = 0
    turns: int = 1
    dedup: bool = False
    max_attempts: int = 500
    semantics: str = "bag"
    jobs: int = 1

    def __post_init__(self):
        if self.mode not in RUN_MODES:
            raise ValueError(f"mode must be one of {RUN_MODES}")
        if self.consistency not in CONSISTENCY_MODES:
            raise ValueError(f"consistency must be one of {CONSISTENCY_MODES}")
        if self.target_count < 1:
            raise ValueError("target_count must be >= 1")
        if self.turns < 1:
            raise ValueError("turns must be >= 1")


@dataclass
class SynthesizedExample:
    env_id: str
    attempt_index: int
    turn_index: int
    sql: str
    template: str
    utterance: str | None = None
    reparsed_sql: str | None = None
    prev_sql: str | None = None
    exec_consistent: bool | None = None
    em_consistent: bool | None = None
    kept: bool = False
    failure: str | None = None


def check_consistency(
    q: Query,
    q_prime: Query,
    env: DatabaseEnv,
    criterion: str = "execution",
    semantics: str = "bag",
) -> bool:
    """Is the re-parsed query equivalent to the sampled one?

    execution: denotation equality on the environment (a re-parse that
    fails to execute is inconsistent, not fatal). string_match: canonical
    full-query string equality, values included. none: vacuously true.
    """
    if criterion == "none":
        return True
    if criterion == "string_match":
        return render(q, env) == render(q_prime, env)
    try:
        prime = execute(render(q_prime, env), env)
    except ExecutionError:
        return False
    original = execute(render(q, env), env)
    return denotations_equal(original, prime, semantics=semantics)


def _fillable_envs(envs: Sequence[DatabaseEnv], dist: TemplateDistribution) -> tuple[list[DatabaseEnv], list[str]]:
    usable: list[DatabaseEnv] = []
    skipped: list[str] = []
    for env in envs:
        if any(can_fill(env, tpl) for tpl in dist.support()):
            usable.append(env)
        else:
            skipped.append(env.db_id)
    return usable, skipped


def _synthesize_attempt(
    attempt_index: int,
    sampled: SampledQuery,
    env: DatabaseEnv,
    parser,
    generator,
    cfg: SynthRunConfig,
    turn_index: int,
) -> SynthesizedExample:
    record = SynthesizedExample(
        env_id=env.db_id,
        attempt_index=attempt_index,
        turn_index=turn_index,
        sql=sampled.sql,
        template=sampled.template.text,
        prev_sql=sampled.prev_sql,
    )
    try:
        record.utterance = generate_utterance(
            generator, sampled.ast, env, prev=sampled.prev_ast, request_id=2 * attempt_index
        )
    except (AdapterError, ProtocolError):
        record.failure = "adapter_error"
        return record
    try:
        reparsed = parse_utterance(
            parser, record.utterance, env, prev=sampled.prev_ast, request_id=2 * attempt_index + 1
        )
    except InvalidPredictionError:
        record.failure = "invalid_prediction"
        return record
    except (AdapterError, ProtocolError):
        record.failure = "adapter_error"
        return record

    record.reparsed_sql = render(reparsed, env)
    record.em_consistent = record.reparsed_sql == sampled.sql
    if cfg.consistency == "execution":
        try:
            prime = execute(record.reparsed_sql, env)
        except ExecutionError:
            record.failure = "exec_error"
            record.exec_consistent = False
            return record
        original = execute(sampled.sql, env)
        record.exec_consistent = denotations_equal(original, prime, semantics=cfg.semantics)

    if cfg.consistency == "none":
        record.kept = True
    elif cfg.consistency == "string_match":
        record.kept = bool(record.em_consistent)
    else:
        record.kept = bool(record.exec_consistent)
    return record


def synthesize(
    envs: Sequence[DatabaseEnv],
    dist: TemplateDistribution,
    parser,
    generator,
    cfg: SynthRunConfig,
) -> list[SynthesizedExample]:
    """Run target_count synthesis attempts across the given environments.

    Attempts are denominated in sampled queries (each turn of a multi-turn
    sequence is one attempt). Deterministic for a fixed seed and
    deterministic adapters: every random stream derives from
    (cfg.seed, attempt index).
    """
    usable, skipped = _fillable_envs(envs, dist)
    if not usable:
        raise UnfillableEnvironmentError(
            f"no usable environment (skipped: {skipped or 'none'})"
        )

    # Plan sampling up front so attempts parallelize deterministically.
    plans: list[tuple[int, DatabaseEnv]] = []  # (first attempt index, env) per sequence
    index = 0
    while index < cfg.target_count:
        env_rng = derive_rng(cfg.seed, "env", index)
        plans.append((index, env_rng.choice(usable)))
        index += cfg.turns

    def run_sequence(plan: tuple[int, DatabaseEnv]) -> list[SynthesizedExample]:
        first_index, env = plan
        rng = derive_rng(cfg.seed, "attempt", first_index)
        records: list[SynthesizedExample] = []
        try:
            if cfg.turns == 1:
                sequence = [sample_query(env, dist, rng, cfg.max_attempts)]
            else:
                sequence = sample_turn_sequence(env, dist, rng, cfg.turns, cfg.max_attempts)
        except (SamplingExhaustedError, UnfillableEnvironmentError) as exc:
            for turn, attempt_index in enumerate(range(first_index, min(first_index + cfg.turns, cfg.target_count))):
                records.append(
                    SynthesizedExample(
                        env_id=env.db_id,
                        attempt_index=attempt_index,
                        turn_index=turn + 1,
                        sql="",
                        template="",
                        failure="sampling_exhausted",
                    )
                )
            return records
        for turn, sampled in enumerate(sequence):
            attempt_index = first_index + turn
            if attempt_index >= cfg.target_count:
                break
            records.append(
                _synthesize_attempt(attempt_index, sampled, env, parser, generator, cfg, turn + 1)
            )
        return records

    batches = parallel_map(run_sequence, plans, jobs=cfg.jobs)
    examples = [record for batch in batches for record in batch]
    examples.sort(key=lambda r: r.attempt_index)

    head = examples[:ABORT_WINDOW]
    if len(head) >= ABORT_WINDOW and all(r.failure == "adapter_error" for r in head):
        raise AdapterError(
            f"both adapters failed on the first {ABORT_WINDOW} attempts; aborting"
        )

    if cfg.dedup:
        seen: set[tuple] = set()
        for record in examples:
            if not record.kept:
                continue
            key = (record.env_id, record.sql, record.utterance)
            if key in seen:
                record.kept = False
                record.failure = "duplicate"
            else:
                seen.add(key)
    return examples


def run_summary(examples: Sequence[SynthesizedExample], cfg: SynthRunConfig, skipped_envs: Sequence[str] = ()) -> dict:
    failures: dict[str, int] = {}
    for record in examples:
        if record.failure:
            failures[record.failure] = failures.get(record.failure, 0) + 1
    kept = sum(1 for r in examples if r.kept)
    return {
        "attempts": len(examples),
        "kept": kept,
        "keep_rate": kept / len(examples) if examples else 0.0,
        "failures": failures,
        "skipped_envs": list(skipped_envs),
        "config": asdict(cfg),
    }


def write_examples(examples: Sequence[SynthesizedExample], path: str | Path) -> None:
    with open(path, "w") as sink:
        for record in examples:
            sink.write(json.dumps(asdict(record)) + "\n")


def build_adaptation_set(
    kept: Sequence[SynthesizedExample],
    original: Sequence[CorpusExample],
    path: str | Path | None = None,
) -> list[CorpusExample]:
    """Original examples first, synthesized after, provenance-tagged; the
    result reloads losslessly through load_corpus."""
    combined = [
        CorpusExample(
            db_id=ex.db_id,
            utterance=ex.utterance,
            gold_sql=ex.gold_sql,
            prev_sql=ex.prev_sql,
            turn_index=ex.turn_index,
            provenance="original",
        )
        for ex in original
    ]
    for record in kept:
        if not record.kept:
            continue
        combined.append(
            CorpusExample(
                db_id=record.env_id,
                utterance=record.utterance or "",
                gold_sql=record.sql,
                prev_sql=record.prev_sql,
                turn_index=record.turn_index if record.prev_sql else 1,
                provenance="synthesized",
            )
        )
    if path is not None:
        save_corpus(combined, path)
    return combined
