"""Empirical coarse-template distribution: fitting, coverage, sampling.

Templates are keyed by their canonical token string. Multi-turn corpora
additionally contribute (previous template -> current template) bigram
counts; conditional sampling backs off to the unigram distribution when a
previous template has no usable continuation.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Callable, Iterable, Mapping

from .canon import CoarseTemplate, parse_sql, template_from_text, to_coarse
from .errors import (
    EmptyDistributionError,
    SqlsynthError,
    UndefinedCoverageError,
    UnfillableEnvironmentError,
)
from .schema import CorpusExample, DatabaseEnv

logger = logging.getLogger(__name__)


@dataclass
class TemplateDistribution:
    unigram: dict[str, int]
    bigram: dict[tuple[str, str], int]
    templates: dict[str, CoarseTemplate]
    skipped: int = 0

    @property
    def total(self) -> int:
        return sum(self.unigram.values())

    def template(self, text: str) -> CoarseTemplate:
        return self.templates[text]

    def support(self) -> list[CoarseTemplate]:
        return [self.templates[text] for text in self.unigram]


def fit(corpus: Iterable[CorpusExample], envs: Mapping[str, DatabaseEnv]) -> TemplateDistribution:
    """Count coarse templates over a corpus; unparseable entries are skipped
    and tallied rather than fatal."""
    unigram: dict[str, int] = {}
    bigram: dict[tuple[str, str], int] = {}
    templates: dict[str, CoarseTemplate] = {}
    skipped = 0
    saw_example = False

    def register(template: CoarseTemplate) -> str:
        text = template.text
        known = templates.get(text)
        if known is None or template.join_arity < known.join_arity:
            # Identical token strings can arise from queries of different
            # table arity; keep the least demanding one for fillability.
            templates[text] = template
        return text

    for example in corpus:
        saw_example = True
        env = envs.get(example.db_id)
        if env is None:
            skipped += 1
            continue
        try:
            current = to_coarse(parse_sql(example.gold_sql, env), env)
        except SqlsynthError:
            skipped += 1
            continue
        text = register(current)
        unigram[text] = unigram.get(text, 0) + 1
        if example.prev_sql is not None:
            try:
                prev = to_coarse(parse_sql(example.prev_sql, env), env)
            except SqlsynthError:
                continue
            prev_text = register(prev)
            if prev_text not in unigram:
                # Keep the bigram invariant: both components exist in unigram.
                continue
            key = (prev_text, text)
            bigram[key] = bigram.get(key, 0) + 1

    if not saw_example:
        raise EmptyDistributionError("corpus is empty")
    if not unigram:
        raise EmptyDistributionError(f"no corpus entry parsed ({skipped} skipped)")
    if skipped:
        logger.info("template fit skipped %d unparseable or unknown-db entries", skipped)
    return TemplateDistribution(unigram=unigram, bigram=bigram, templates=templates, skipped=skipped)


def coverage(dist: TemplateDistribution, eval_corpus: Iterable[CorpusExample], envs: Mapping[str, DatabaseEnv]) -> float:
    """Fraction of eval examples whose coarse template occurs in the fitted
    support. Unparseable eval entries count as uncovered."""
    total = 0
    covered = 0
    for example in eval_corpus:
        total += 1
        env = envs.get(example.db_id)
        if env is None:
            continue
        try:
            template = to_coarse(parse_sql(example.gold_sql, env), env)
        except SqlsynthError:
            continue
        if template.text in dist.unigram:
            covered += 1
    if total == 0:
        raise UndefinedCoverageError("evaluation corpus is empty")
    return covered / total


def _weighted_draw(items: list[tuple[str, int]], rng: Random) -> str:
    total = sum(count for _, count in items)
    point = rng.random() * total
    acc = 0.0
    for text, count in items:
        acc += count
        if point < acc:
            return text
    return items[-1][0]


def sample_template(
    dist: TemplateDistribution,
    fillable: Callable[[CoarseTemplate], bool],
    rng: Random,
) -> CoarseTemplate:
    """Draw from the unigram counts restricted to fillable templates."""
    items = [(text, count) for text, count in dist.unigram.items() if fillable(dist.templates[text])]
    if not items:
        raise UnfillableEnvironmentError("no fillable template in distribution support")
    return dist.templates[_weighted_draw(items, rng)]


def sample_template_conditional(
    dist: TemplateDistribution,
    prev: CoarseTemplate,
    fillable: Callable[[CoarseTemplate], bool],
    rng: Random,
) -> CoarseTemplate:
    """Draw from the bigram counts conditioned on the previous template,
    backing off to the unigram when the previous template is unseen or all
    its continuations are filtered out."""
    items = [
        (cur, count)
        for (prev_text, cur), count in dist.bigram.items()
        if prev_text == prev.text and fillable(dist.templates[cur])
    ]
    if not items:
        return sample_template(dist, fillable, rng)
    return dist.templates[_weighted_draw(items, rng)]


def variety_bound(T: int, S: int, N: int, K: int) -> int:
    """Upper bound on distinct filled query sequences: (T * C(N, S)) ** K.

    T templates with S column slots each, N columns available, K turns.
    Exact integer arithmetic.
    """
    for name, value in (("T", T), ("S", S), ("N", N), ("K", K)):
        if value < 0:
            raise ValueError(f"{name} must be nonnegative, got {value}")
    if S > N:
        raise ValueError(f"S={S} exceeds N={N}")
    return (T * math.comb(N, S)) ** K


def save_distribution(dist: TemplateDistribution, path: str | Path) -> None:
    payload = {
        "unigram": [
            {"template": text, "count": count, "join_arity": dist.templates[text].join_arity}
            for text, count in dist.unigram.items()
        ],
        "bigram": [
            {"prev": prev, "cur": cur, "count": count}
            for (prev, cur), count in dist.bigram.items()
        ],
        "meta": {"skipped": dist.skipped, "total": dist.total},
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def load_distribution(path: str | Path) -> TemplateDistribution:
    payload = json.loads(Path(path).read_text())
    unigram: dict[str, int] = {}
    templates: dict[str, CoarseTemplate] = {}
    for item in payload["unigram"]:
        text = item["template"]
        unigram[text] = item["count"]
        templates[text] = template_from_text(text, item.get("join_arity", 1))
    bigram = {(item["prev"], item["cur"]): item["count"] for item in payload["bigram"]}
    skipped = payload.get("meta", {}).get("skipped", 0)
    return TemplateDistribution(unigram=unigram, bigram=bigram, templates=templates, skipped=skipped)
