"""Command-line entry point.

Subcommands: fit (template distribution from a corpus), sample (queries in
an environment), synth (cycle-consistent synthesis through adapters), eval
(EM/EX/FX scoring), fuzz-db (standalone randomized instance). Every run
writes a manifest next to its outputs; all randomness flows from --seed.

Exit codes: 0 success, 2 input error, 3 sampling exhausted, 4 adapter
failure, 5 gold/prediction misalignment.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import time
from pathlib import Path

from . import __version__
from .adapter import resolve_adapter
from .dist import coverage, fit, load_distribution, save_distribution
from .errors import (
    AdapterError,
    AlignmentError,
    SamplingExhaustedError,
    SqlsynthError,
    UnfillableEnvironmentError,
)
from .evaluation import evaluate, render_report_table, write_report
from .execution import execute
from .fuzz import FuzzConfig, cleanup_instances, randomize_db
from .sampler import sample_query, sample_turn_sequence
from .schema import load_corpus, load_schemas
from .synth import (
    SynthRunConfig,
    build_adaptation_set,
    run_summary,
    synthesize,
    write_examples,
)
from .workers import derive_rng

INPUT_ERROR, SAMPLING_ERROR, ADAPTER_ERROR, ALIGNMENT_ERROR = 2, 3, 4, 5


def _write_manifest(out_dir: Path, subcommand: str, args: argparse.Namespace,
                    outputs: dict[str, str], started: float) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "func"},
        "seed": args.seed,
        "outputs": outputs,
        "version": __version__,
        "duration_s": round(time.time() - started, 3),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def _load_envs(args) -> dict:
    envs = load_schemas(args.schemas, data_root=args.data_root)
    return {env.db_id: env for env in envs}


def _select_envs(envs: dict, spec: str) -> list:
    if spec == "all":
        return list(envs.values())
    chosen = []
    for db_id in spec.split(","):
        db_id = db_id.strip()
        if db_id not in envs:
            raise SqlsynthError(f"unknown database id {db_id!r}")
        chosen.append(envs[db_id])
    return chosen


def cmd_fit(args) -> int:
    started = time.time()
    envs = _load_envs(args)
    corpus = load_corpus(args.corpus)
    dist = fit(corpus, envs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_distribution(dist, out)
    print(f"fit: {dist.total} examples over {len(dist.unigram)} templates "
          f"({dist.skipped} skipped, {len(dist.bigram)} bigrams)")
    if args.eval:
        ratio = coverage(dist, load_corpus(args.eval), envs)
        print(f"coverage: {ratio:.4f}")
    _write_manifest(out.parent, "fit", args, {"distribution": str(out)}, started)
    return 0


def cmd_sample(args) -> int:
    started = time.time()
    envs = _load_envs(args)
    dist = load_distribution(args.dist)
    targets = _select_envs(envs, args.db)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    produced = 0
    with open(out, "w") as sink:
        index = 0
        while produced < args.n:
            rng = derive_rng(args.seed, "cli-sample", index)
            env = targets[index % len(targets)]
            if args.turns == 1:
                batch = [sample_query(env, dist, rng, args.max_attempts)]
            else:
                batch = sample_turn_sequence(env, dist, rng, args.turns, args.max_attempts)
            for sampled in batch:
                if produced >= args.n:
                    break
                assert execute(sampled.sql, env).rows, "sampled query re-validation failed"
                record = {
                    "db_id": sampled.env_id,
                    "sql": sampled.sql,
                    "template": sampled.template.text,
                    "seed_trace": sampled.seed_trace,
                }
                if sampled.prev_sql is not None:
                    record["prev_sql"] = sampled.prev_sql
                sink.write(json.dumps(record) + "\n")
                produced += 1
            index += 1
    print(f"sample: wrote {produced} queries to {out}")
    _write_manifest(out.parent, "sample", args, {"samples": str(out)}, started)
    return 0


def cmd_synth(args) -> int:
    started = time.time()
    envs = _load_envs(args)
    dist = load_distribution(args.dist)
    targets = _select_envs(envs, args.dbs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    generator = resolve_adapter(args.generator, seed=args.seed, timeout=args.adapter_timeout)
    parser = resolve_adapter(args.parser, seed=args.seed, timeout=args.adapter_timeout)
    cfg = SynthRunConfig(
        mode=args.mode,
        consistency=args.consistency,
        target_count=args.n,
        seed=args.seed,
        turns=args.turns,
        dedup=args.dedup,
        jobs=args.jobs,
    )
    try:
        examples = synthesize(targets, dist, parser, generator, cfg)
    finally:
        for adapter in (generator, parser):
            close = getattr(adapter, "close", None)
            if close:
                close()

    write_examples(examples, out_dir / "synth.jsonl")
    summary = run_summary(examples, cfg)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    outputs = {"examples": str(out_dir / "synth.jsonl"), "summary": str(out_dir / "summary.json")}
    if args.original:
        original = load_corpus(args.original)
        combined_path = out_dir / "adaptation_corpus.json"
        build_adaptation_set(examples, original, combined_path)
        outputs["adaptation_corpus"] = str(combined_path)
    print(f"synth: {summary['kept']}/{summary['attempts']} kept "
          f"(keep rate {summary['keep_rate']:.3f})")
    _write_manifest(out_dir, "synth", args, outputs, started)
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    envs = _load_envs(args)
    gold = load_corpus(args.gold)
    predictions = Path(args.pred).read_text().splitlines()
    fuzz_cfg = None
    if args.fuzz_instances > 0:
        fuzz_cfg = FuzzConfig(
            instances=args.fuzz_instances,
            seed=args.seed,
            scratch=Path(args.scratch) if args.scratch else None,
        )
    report = evaluate(
        gold, predictions, envs, fuzz_cfg=fuzz_cfg, semantics=args.semantics, jobs=args.jobs
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(report, out_dir / "report.json", out_dir / "report.txt")
    print(render_report_table(report))
    if fuzz_cfg is not None and not args.keep_fuzz_dbs:
        for env in envs.values():
            cleanup_instances(env, fuzz_cfg)
    _write_manifest(
        out_dir,
        "eval",
        args,
        {"report": str(out_dir / "report.json"), "table": str(out_dir / "report.txt")},
        started,
    )
    return 0


def cmd_fuzz_db(args) -> int:
    started = time.time()
    envs = _load_envs(args)
    if args.db not in envs:
        raise SqlsynthError(f"unknown database id {args.db!r}")
    lo, _, hi = args.rows.partition(":")
    cfg = FuzzConfig(
        instances=max(args.instance + 1, 1),
        min_rows=int(lo),
        max_rows=int(hi or lo),
        seed=args.seed,
        scratch=Path(args.scratch) if args.scratch else None,
    )
    fuzz_env = randomize_db(envs[args.db], cfg, args.instance)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(fuzz_env.store_path, out)
    print(f"fuzz-db: wrote instance {args.instance} of {args.db} to {out}")
    _write_manifest(out.parent, "fuzz-db", args, {"database": str(out)}, started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    cli = argparse.ArgumentParser(prog="sqlsynth", description=__doc__)
    cli.add_argument("--version", action="version", version=__version__)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--schemas", required=True, help="schema file (tables layout)")
    common.add_argument("--data-root", default=None, help="directory holding <db_id>/<db_id>.sqlite")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--scratch", default=None, help="scratch directory for generated databases")

    sub = cli.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a template distribution")
    p.add_argument("--corpus", required=True)
    p.add_argument("--eval", default=None, help="corpus to report coverage against")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sample", parents=[common], help="sample executable queries")
    p.add_argument("--dist", required=True)
    p.add_argument("--db", required=True, help="database id, comma list, or 'all'")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--turns", type=int, default=1)
    p.add_argument("--max-attempts", type=int, default=500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("synth", parents=[common], help="synthesize cycle-consistent data")
    p.add_argument("--dist", required=True)
    p.add_argument("--dbs", required=True, help="target database ids (comma list or 'all')")
    p.add_argument("--generator", required=True, help="builtin:<name> or cmd:<shell command>")
    p.add_argument("--parser", required=True, help="builtin:<name> or cmd:<shell command>")
    p.add_argument("-n", type=int, required=True, help="synthesis attempts")
    p.add_argument("--consistency", choices=("execution", "string_match", "none"), default="execution")
    p.add_argument("--mode", choices=("adapt", "syntrain"), default="adapt")
    p.add_argument("--turns", type=int, default=1)
    p.add_argument("--dedup", action="store_true")
    p.add_argument("--original", default=None, help="original corpus to combine into the adaptation set")
    p.add_argument("--adapter-timeout", type=float, default=30.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", parents=[common], help="score a prediction file")
    p.add_argument("--gold", required=True, help="gold corpus file")
    p.add_argument("--pred", required=True, help="one SQL prediction per line")
    p.add_argument("--fuzz-instances", type=int, default=10, help="0 disables FX")
    p.add_argument("--semantics", choices=("bag", "set"), default="bag")
    p.add_argument("--keep-fuzz-dbs", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuzz-db", parents=[common], help="write one randomized database instance")
    p.add_argument("--db", required=True)
    p.add_argument("--instance", type=int, default=0)
    p.add_argument("--rows", default="5:50", help="rows per table, lo:hi")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuzz_db)

    return cli


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AlignmentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ALIGNMENT_ERROR
    except (AdapterError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ADAPTER_ERROR
    except (SamplingExhaustedError, UnfillableEnvironmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return SAMPLING_ERROR
    except (SqlsynthError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
