"""Command-line interface: shots, generate, answer, eval, report, audit.

Exit codes: 0 success, 2 validation error, 3 backend failure, 4 too many
partial failures.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import yaml

from selfdocs.core import ALL_SFL_TYPES, GENREAD, Task, parse_sfl_code
from selfdocs.dataset_io import (
    RunManifest,
    export_results_csv,
    load_dataset,
    load_results,
    save_results,
)
from selfdocs.errors import BackendError, SelfDocsError, UnknownCode
from selfdocs.evaluation import (
    ResultTable,
    aggregate_dimensions,
    audit_sample,
    delta_table,
    evaluate_run,
    write_audit_csv,
    write_table_csv,
)
from selfdocs.gateway import Gateway, LiveBackend, RecordingBackend, ReplayBackend, ResponseCache
from selfdocs.generation import (
    DEFAULT_MODEL,
    DEFAULT_TRANSFORM_MODEL,
    GENERATION_TEMPERATURE,
    DocStore,
    GenerationConfig,
    Mode,
    build_shot_pool,
    generate_corpus,
    generation_manifest,
    load_shot_pool,
    style_align_shots,
)
from selfdocs.mixing import MixPlan, Order, Strategy
from selfdocs.prompts import template_digest
from selfdocs.qa import QA_TEMPERATURE, AnswerRun, answer_dataset

EXIT_VALIDATION = 2
EXIT_BACKEND = 3
EXIT_PARTIAL = 4
CACHE_ENV = "SDOC_CACHE_DIR"

log = logging.getLogger("selfdocs")


class PartialFailure(Exception):
    pass


class Workspace:
    def __init__(self, workdir: Path, gateway_factory):
        self.workdir = workdir
        self._gateway_factory = gateway_factory
        self._gateway = None

    def path(self, p: str | os.PathLike) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.workdir / p

    @property
    def gateway(self) -> Gateway:
        if self._gateway is None:
            self._gateway = self._gateway_factory()
        return self._gateway


def _option_names(d: dict) -> dict:
    # accept "cache-dir" as well as "cache_dir"; nested mappings are per-command sections
    return {
        k if isinstance(v, dict) else k.replace("-", "_"): _option_names(v) if isinstance(v, dict) else v
        for k, v in d.items()
    }


def _load_config(ctx: click.Context, param, value):
    if value:
        with open(value, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise click.BadParameter("config file must hold a mapping")
        ctx.default_map = _option_names(data)
    return value


def _style(ctx, param, value):
    if value is None:
        return None
    try:
        return parse_sfl_code(value)
    except UnknownCode as e:
        raise click.BadParameter(str(e)) from None


def _task(ctx, param, value):
    try:
        return Task.parse(value)
    except ValueError as e:
        raise click.BadParameter(str(e)) from None


dataset_option = click.option("--dataset", required=True, help="JSONL dataset path.")
task_option = click.option("--task", required=True, callback=_task, help="tqa, hotpotqa, fever or eli5.")
limit_option = click.option("--limit", type=int, default=500, show_default=True, help="Use the first N records.")


@click.group()
@click.option("--config", type=click.Path(dir_okay=False), is_eager=True, expose_value=False,
              callback=_load_config, help="YAML/JSON file of option defaults.")
@click.option("--workdir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--backend", type=click.Choice(["live", "replay", "record"]), default="live", show_default=True)
@click.option("--replay-fixture", multiple=True, help="JSONL trace for the replay backend (repeatable).")
@click.option("--record-to", default="trace.jsonl", show_default=True, help="Trace file for the record backend.")
@click.option("--cache-dir", envvar=CACHE_ENV, default=".cache", show_default=True)
@click.option("--parallelism", type=int, default=8, show_default=True)
@click.option("--call-log", default=None, help="Append every backend dispatch to this JSONL file.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, workdir, backend, replay_fixture, record_to, cache_dir, parallelism, call_log, verbose):
    """Generate self-documents, mix them into QA backgrounds and score the answers."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    wd = Path(workdir)
    wd.mkdir(parents=True, exist_ok=True)

    def make_gateway() -> Gateway:
        def p(x):
            x = Path(x)
            return x if x.is_absolute() else wd / x

        if backend == "replay":
            if not replay_fixture:
                raise click.UsageError("--backend replay needs at least one --replay-fixture")
            be = ReplayBackend([p(f) for f in replay_fixture])
        elif backend == "record":
            be = RecordingBackend(LiveBackend(), p(record_to))
        else:
            be = LiveBackend()
        return Gateway(
            be,
            ResponseCache(p(cache_dir)),
            parallelism=parallelism,
            call_log=p(call_log) if call_log else None,
        )

    ctx.obj = Workspace(wd, make_gateway)


def _shot_pairs(dataset):
    pairs = [(ex.query, ex.retrieved[0]) for ex in dataset.examples if ex.retrieved]
    if not pairs:
        raise click.UsageError("shot dataset has no retrieved documents")
    return pairs


@cli.command()
@dataset_option
@task_option
@limit_option
@click.option("--k", "k", type=int, default=10, show_default=True, help="Number of clusters.")
@click.option("--m", "m", type=int, default=5, show_default=True, help="Shots per cluster.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--style", callback=_style, help="Rewrite shot documents into this type (e.g. AFU).")
@click.option("--embedding-model", default=GenerationConfig.embedding_model_id, show_default=True)
@click.option("--transform-model", default=DEFAULT_TRANSFORM_MODEL, show_default=True)
@click.option("--out", default="pool.json", show_default=True)
@click.pass_obj
def shots(ws, dataset, task, limit, k, m, seed, style, embedding_model, transform_model, out):
    """Cluster (query, top-1 document) pairs and sample a shot pool."""
    ds = load_dataset(ws.path(dataset), task, limit)
    cfg = GenerationConfig(n_docs=1, k_clusters=k, m_shots=m, seed=seed, embedding_model_id=embedding_model)
    pool = build_shot_pool(_shot_pairs(ds), cfg, ws.gateway)
    if style is not None:
        pool = style_align_shots(pool, style, task, ws.gateway, model_id=transform_model)
    out_path = ws.path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(pool.to_json(), encoding="utf-8")
    click.echo(str(out_path))


@cli.command()
@dataset_option
@task_option
@limit_option
@click.option("--pool", help="Shot pool file; selects few-shot generation.")
@click.option("--style", callback=_style, help="Document type for zero-shot typed generation.")
@click.option("--n", "n", type=int, default=10, show_default=True, help="Documents per query.")
@click.option("--temperature", type=float, default=GENERATION_TEMPERATURE, show_default=True)
@click.option("--model", default=DEFAULT_MODEL, show_default=True)
@click.option("--max-tokens", type=int, default=1024, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--stores", default="stores", show_default=True, help="Directory holding one store per manifest.")
@click.option("--failure-threshold", type=float, default=0.05, show_default=True)
@click.pass_obj
def generate(ws, dataset, task, limit, pool, style, n, temperature, model, max_tokens, seed, stores, failure_threshold):
    """Generate self-documents for every query; prints the store directory."""
    ds = load_dataset(ws.path(dataset), task, limit)
    shot_pool = None
    if pool:
        if style is not None:
            raise click.UsageError("--pool and --style are exclusive; align the pool with `shots --style`")
        shot_pool = load_shot_pool(ws.path(pool))
        cfg = GenerationConfig(
            n_docs=n, temperature=temperature, style=shot_pool.style, mode=Mode.GENREAD_FEW_SHOT,
            k_clusters=shot_pool.k, m_shots=shot_pool.m, seed=seed, model_id=model, max_tokens=max_tokens,
        )
    elif style is not None:
        cfg = GenerationConfig(
            n_docs=n, temperature=temperature, style=style, mode=Mode.TYPED_ZERO_SHOT,
            seed=seed, model_id=model, max_tokens=max_tokens,
        )
    else:
        raise click.UsageError("give --pool (few-shot) or --style (zero-shot)")
    manifest = generation_manifest(ds, cfg, shot_pool)
    store = DocStore.open(ws.path(stores), manifest.manifest_id)
    report = generate_corpus(ds, cfg, ws.gateway, store, shot_pool, failure_threshold=failure_threshold)
    click.echo(str(store.path))
    if report.exceeded:
        raise PartialFailure(
            f"{report.n_failed} generations failed ({100 * report.failure_rate:.1f}% > {100 * failure_threshold:.1f}%)"
        )


@cli.command()
@dataset_option
@task_option
@limit_option
@click.option("--store", help="DocStore directory written by `generate`.")
@click.option("--mix", type=click.Choice(["none", "self-only", "wiki-only", "direct", "style"]),
              default="self-only", show_default=True)
@click.option("--k", "k", type=int, default=0, show_default=True, help="Retrieved documents to use.")
@click.option("--n", "n", type=int, default=0, show_default=True, help="Self-documents to use.")
@click.option("--style", callback=_style, help="Target type for --mix style.")
@click.option("--order", type=click.Choice([o.value for o in Order]), default=Order.WIKI_FIRST.value, show_default=True)
@click.option("--model", default=DEFAULT_MODEL, show_default=True)
@click.option("--transform-model", default=DEFAULT_TRANSFORM_MODEL, show_default=True)
@click.option("--budget", type=int, default=None, help="Character budget for the background.")
@click.option("--max-tokens", type=int, default=1024, show_default=True)
@click.option("--out", default="answers.jsonl", show_default=True)
@click.option("--failure-threshold", type=float, default=0.05, show_default=True)
@click.pass_obj
def answer(ws, dataset, task, limit, store, mix, k, n, style, order, model, transform_model, budget, max_tokens, out,
           failure_threshold):
    """Answer every query over a mixed background (temperature 0)."""
    ds = load_dataset(ws.path(dataset), task, limit)
    plan = None if mix == "none" else MixPlan(Strategy(mix), k, n, Order(order), style)
    doc_store = None
    self_type = None
    if plan is not None and plan.n_self > 0:
        if not store:
            raise click.UsageError(f"--mix {mix} with --n > 0 needs --store")
        doc_store = DocStore(ws.path(store))
        types = {d.doc_type for d in doc_store}
        if len(types) > 1:
            raise click.UsageError("store mixes several document types")
        self_type = types.pop() if types else GENREAD
    run = answer_dataset(
        ds.examples, plan, ws.gateway,
        model_id=model, store=doc_store, self_doc_type=self_type,
        transform_model_id=transform_model, budget=budget, max_tokens=max_tokens,
    )
    out_path = ws.path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    run.write_jsonl(out_path)
    manifest = RunManifest(
        stage="answer",
        task=task,
        dataset_digest=ds.content_digest,
        config={"mix": mix, "k": k, "n": n, "style": style.code if style else None, "order": order,
                "budget": budget, "max_tokens": max_tokens},
        model_ids={"qa": model, "transform": transform_model},
        temperatures={"qa": QA_TEMPERATURE},
        inputs={"store": doc_store.digest()} if doc_store is not None else {},
        template_digest=template_digest(),
    )
    manifest.write(out_path.with_name(out_path.stem + ".manifest.json"))
    click.echo(str(out_path))
    rate = len(run.errors) / len(ds) if len(ds) else 0.0
    if rate > failure_threshold:
        raise PartialFailure(f"{len(run.errors)} queries unanswered ({100 * rate:.1f}% > {100 * failure_threshold:.1f}%)")


@cli.command("eval")
@dataset_option
@task_option
@limit_option
@click.option("--answers", "answers_path", default="answers.jsonl", show_default=True)
@click.option("--row", default="run", show_default=True, help="Row label in the results table.")
@click.option("--baseline", help="results.json to diff against.")
@click.option("--out-dir", default=".", show_default=True)
@click.pass_obj
def eval_cmd(ws, dataset, task, limit, answers_path, row, baseline, out_dir):
    """Score answers and write results.json / results.csv (plus delta.csv with --baseline)."""
    ds = load_dataset(ws.path(dataset), task, limit)
    answers = AnswerRun.read_jsonl(ws.path(answers_path))
    scores, aggregate = evaluate_run(ds, answers)
    out = ws.path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"scores.{task.value}.jsonl", "w", encoding="utf-8") as f:
        for s in scores:
            f.write(json.dumps(s.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    results_path = out / "results.json"
    table = load_results(results_path) if results_path.exists() else ResultTable()
    table.set(row, task, aggregate)
    save_results(results_path, table)
    export_results_csv(out / "results.csv", table)
    if baseline:
        write_table_csv(out / "delta.csv", delta_table(table, load_results(ws.path(baseline))).display_rows())
    click.echo(f"{row}\t{task.label}\t{aggregate:.1f}")


@cli.command()
@click.argument("results", nargs=-1, required=True)
@click.option("--baseline", help="results.json to diff against.")
@click.option("--out-dir", default="report", show_default=True)
@click.pass_obj
def report(ws, results, baseline, out_dir):
    """Merge results files into type, dimension and delta tables."""
    table = ResultTable()
    for r in results:
        table = table.merge(load_results(ws.path(r)))
    out = ws.path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_results(out / "results.json", table)
    export_results_csv(out / "results.csv", table)
    written = ["results.csv"]
    if all(t.code in table.rows for t in ALL_SFL_TYPES):
        write_table_csv(out / "dimensions.csv", aggregate_dimensions(table).display_rows())
        written.append("dimensions.csv")
    if baseline:
        write_table_csv(out / "delta.csv", delta_table(table, load_results(ws.path(baseline))).display_rows())
        written.append("delta.csv")
    for w in written:
        click.echo(str(out / w))


@cli.command()
@click.argument("stores", nargs=-1, required=True)
@click.option("--per-type", type=int, default=15, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default="audit.csv", show_default=True)
@click.pass_obj
def audit(ws, stores, per_type, seed, out):
    """Sample documents per type into a CSV for manual review."""
    docs = [d for s in stores for d in DocStore(ws.path(s))]
    rows = audit_sample(docs, per_type, seed)
    write_audit_csv(ws.path(out), rows)
    click.echo(str(ws.path(out)))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 1
    except click.ClickException as e:
        e.show()
        return EXIT_VALIDATION
    except BackendError as e:
        click.echo(f"backend error: {e}", err=True)
        return EXIT_BACKEND
    except PartialFailure as e:
        click.echo(f"partial failure: {e}", err=True)
        return EXIT_PARTIAL
    except (SelfDocsError, ValueError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_VALIDATION
    return 0


if __name__ == "__main__":
    sys.exit(main())
