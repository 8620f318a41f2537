"""Score predictions against gold with EM, EX, and FX.

EM compares value-stripped canonical renderings, so aliases, keyword case,
whitespace and literal values never decide a match. EX compares
denotations on the original database. FX additionally requires denotation
equality on every randomized instance; per example FX is the conjunction
of EX and the fuzz outcome, which makes FX <= EX structural when gold
executes cleanly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .canon import Query, parse_sql, render, strip_values
from .errors import (
    AlignmentError,
    ExecutionError,
    GoldError,
    SqlsynthError,
)
from .execution import denotations_equal, execute
from .fuzz import FuzzConfig, fuzz_match
from .schema import CorpusExample, DatabaseEnv
from .workers import parallel_map

DIFFICULTY_CLASSES = ("easy", "medium", "hard", "extra")
TURN_BUCKETS = ("1", "2", "3", "4+")


def em_match(gold: str, pred: str, env: DatabaseEnv) -> bool:
    """Template exact match: values stripped, canonical rendering."""
    try:
        gold_tpl = render(strip_values(parse_sql(gold, env)), env)
    except SqlsynthError as exc:
        raise GoldError(f"gold query does not parse: {gold!r} ({exc})") from exc
    try:
        pred_tpl = render(strip_values(parse_sql(pred, env)), env)
    except SqlsynthError:
        return False
    return gold_tpl == pred_tpl


def _count_conditions(q: Query) -> int:
    return len(q.where.conditions) + len(q.having.conditions)


def _has_subquery(q: Query) -> bool:
    for cl in (q.where, q.having):
        for cond in cl.conditions:
            if isinstance(cond.right, Query):
                return True
    return False


def classify_difficulty(ast: Query) -> str:
    """Deterministic difficulty class from structural counts.

    components: presence of each of group by, order by, limit, a set
    operation, a nested subquery, and having. conditions: where plus having
    predicates. aggregates: aggregate applications in the select list.
      easy   <= 1 component, <= 1 condition, <= 1 aggregate
      extra  >= 3 components, or >= 2 components with >= 3 conditions
      hard   exactly 2 components, or any nested subquery
      medium everything else
    """
    subquery = _has_subquery(ast)
    components = sum(
        (
            bool(ast.group_by),
            ast.order_by is not None,
            ast.limit is not None,
            ast.set_op is not None,
            subquery,
            bool(ast.having),
        )
    )
    conditions = _count_conditions(ast)
    aggregates = sum(1 for item in ast.select if item.agg)
    if components >= 3 or (components >= 2 and conditions >= 3):
        return "extra"
    if components == 2 or subquery:
        return "hard"
    if components <= 1 and conditions <= 1 and aggregates <= 1:
        return "easy"
    return "medium"


def turn_bucket(turn_index: int) -> str:
    return str(turn_index) if turn_index < 4 else "4+"


@dataclass
class ExampleVerdict:
    index: int
    db_id: str
    difficulty: str | None
    turn: str
    em: bool = False
    ex: bool = False
    fx: bool | None = None
    gold_error: str | None = None


@dataclass
class MetricBucket:
    count: int = 0
    em: int = 0
    ex: int = 0
    fx: int = 0

    def add(self, verdict: ExampleVerdict) -> None:
        self.count += 1
        self.em += verdict.em
        self.ex += verdict.ex
        self.fx += bool(verdict.fx)

    def rates(self, with_fx: bool) -> dict:
        out = {
            "count": self.count,
            "em": self.em / self.count if self.count else 0.0,
            "ex": self.ex / self.count if self.count else 0.0,
        }
        if with_fx:
            out["fx"] = self.fx / self.count if self.count else 0.0
        return out


@dataclass
class EvalReport:
    overall: dict
    by_difficulty: dict
    by_turn: dict
    verdicts: list[ExampleVerdict]
    gold_errors: int
    config: dict

    def to_json(self) -> dict:
        return {
            "overall": self.overall,
            "by_difficulty": self.by_difficulty,
            "by_turn": self.by_turn,
            "gold_errors": self.gold_errors,
            "config": self.config,
            "examples": [vars(v) for v in self.verdicts],
        }


def evaluate(
    gold: Sequence[CorpusExample],
    predictions: Sequence[str],
    envs: dict[str, DatabaseEnv],
    fuzz_cfg: FuzzConfig | None = None,
    semantics: str = "bag",
    jobs: int = 1,
) -> EvalReport:
    """Score predictions (one SQL string per gold example, aligned by index).

    fuzz_cfg None disables FX. Gold entries that fail to parse or execute
    are excluded from the denominators and reported as gold errors.
    """
    if len(gold) != len(predictions):
        raise AlignmentError(
            f"{len(gold)} gold examples but {len(predictions)} predictions"
        )

    def score(pair: tuple[int, CorpusExample, str]) -> ExampleVerdict:
        index, example, pred = pair
        env = envs.get(example.db_id)
        verdict = ExampleVerdict(
            index=index,
            db_id=example.db_id,
            difficulty=None,
            turn=turn_bucket(example.turn_index),
        )
        if env is None:
            verdict.gold_error = f"unknown database {example.db_id!r}"
            return verdict
        try:
            gold_ast = parse_sql(example.gold_sql, env)
            gold_deno = execute(example.gold_sql, env)
        except SqlsynthError as exc:
            verdict.gold_error = str(exc)
            return verdict
        verdict.difficulty = classify_difficulty(gold_ast)
        verdict.em = em_match(example.gold_sql, pred, env)
        try:
            pred_deno = execute(pred, env)
            verdict.ex = denotations_equal(gold_deno, pred_deno, semantics=semantics)
        except SqlsynthError:
            verdict.ex = False
        if fuzz_cfg is not None:
            if verdict.ex:
                outcome = fuzz_match(example.gold_sql, pred, env, fuzz_cfg, semantics=semantics)
                verdict.fx = outcome.match
            else:
                # FX is the conjunction of EX and every fuzz instance.
                verdict.fx = False
        return verdict

    items = [(i, g, p) for i, (g, p) in enumerate(zip(gold, predictions))]
    verdicts = parallel_map(score, items, jobs=jobs)

    overall = MetricBucket()
    by_difficulty = {c: MetricBucket() for c in DIFFICULTY_CLASSES}
    by_turn = {b: MetricBucket() for b in TURN_BUCKETS}
    gold_errors = 0
    for verdict in verdicts:
        if verdict.gold_error is not None:
            gold_errors += 1
            continue
        overall.add(verdict)
        by_difficulty[verdict.difficulty].add(verdict)
        by_turn[verdict.turn].add(verdict)

    with_fx = fuzz_cfg is not None
    if with_fx:
        assert overall.fx <= overall.ex, "FX exceeded EX; fuzz conjunction broken"

    config: dict = {"semantics": semantics, "fuzz": None}
    if with_fx:
        config["fuzz"] = {
            k: (str(v) if isinstance(v, Path) else v) for k, v in vars(fuzz_cfg).items()
        }
    return EvalReport(
        overall=overall.rates(with_fx),
        by_difficulty={c: b.rates(with_fx) for c, b in by_difficulty.items()},
        by_turn={c: b.rates(with_fx) for c, b in by_turn.items()},
        verdicts=verdicts,
        gold_errors=gold_errors,
        config=config,
    )


def render_report_table(report: EvalReport) -> str:
    """Plain-text metric tables bucketed by difficulty and by turn."""
    with_fx = "fx" in report.overall
    metrics = ["em", "ex"] + (["fx"] if with_fx else [])

    def table(title: str, buckets: dict) -> list[str]:
        names = list(buckets) + ["all"]
        rows = [title.ljust(8) + "".join(n.rjust(9) for n in names)]
        counts = [buckets[n]["count"] for n in buckets] + [report.overall["count"]]
        rows.append("count".ljust(8) + "".join(str(c).rjust(9) for c in counts))
        for metric in metrics:
            cells = [buckets[n][metric] for n in buckets] + [report.overall[metric]]
            rows.append(
                metric.upper().ljust(8) + "".join(f"{100 * c:8.1f}" for c in cells)
            )
        return rows

    lines = table("class", report.by_difficulty)
    lines.append("")
    lines.extend(table("turn", report.by_turn))
    if report.gold_errors:
        lines.append("")
        lines.append(f"gold errors: {report.gold_errors} (excluded from denominators)")
    return "\n".join(lines)


def write_report(report: EvalReport, json_path: str | Path, text_path: str | Path | None = None) -> None:
    Path(json_path).write_text(json.dumps(report.to_json(), indent=1) + "\n")
    if text_path is not None:
        Path(text_path).write_text(render_report_table(report) + "\n")
