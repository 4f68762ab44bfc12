"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
A ``--config`` JSON file supplies option defaults: top-level ``seed``,
``jobs`` and ``format`` apply to every subcommand, and a block keyed by a
subcommand name (``"fit": {...}``) sets that subcommand's options.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from .ciquery import (
    ci_statements,
    classify,
    find_cuts,
    find_fine_cuts,
    is_intrinsic,
    roll_out,
    slice_dag,
)
from .conjugate import PriorConfig, Scorer, SufficientStats
from .data import DataError, load_dataset, sufficient_stats
from .diagnostics import error_report, leave_one_out
from .export import rdceg_to_dot, smp_to_dot
from .graph import Rdceg, StagingError, StructureError
from .models import GroundTruthModel, builtin_models
from .search import SearchConfig, select_model
from .simulate import simulate_population
from .smp import CondensationError, condense_smp, first_passage, to_smp
from .study import DEFAULT_PRIOR_GRID, FALLS_SAMPLE_SIZES, rows_to_csv, run_study, summarize, summary_to_csv

FIT_SCHEMA = "rdceg.fit/1"
COMMON_KEYS = ("seed", "jobs", "format")
SEED = click.IntRange(0, 2**64 - 1)


class ValidationError(click.UsageError):
    """Bad input detected before any side effect (exit code 2)."""


def _load_config(ctx, param, value):
    if value is None:
        return None
    try:
        cfg = json.loads(Path(value).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.BadParameter(f"cannot read config: {exc}") from None
    if not isinstance(cfg, dict):
        raise click.BadParameter("config must be a JSON object")
    common = {k: cfg[k] for k in COMMON_KEYS if k in cfg}
    default_map = {}
    for name, cmd in main.commands.items():
        block = cfg.get(name, {})
        if not isinstance(block, dict):
            raise click.BadParameter(f"config block {name!r} must be an object")
        if isinstance(cmd, click.Group):
            default_map[name] = {sub: _param_defaults(c, {**common, **block.get(sub, {})})
                                 for sub, c in cmd.commands.items()}
        else:
            default_map[name] = _param_defaults(cmd, {**common, **block})
    ctx.default_map = default_map
    return value


def _param_defaults(cmd: click.Command, values: dict) -> dict:
    """Config keys are long option names without dashes; click wants parameter names."""
    by_option = {}
    for p in cmd.params:
        for opt in getattr(p, "opts", ()):
            if opt.startswith("--"):
                by_option[opt[2:].replace("-", "_")] = p.name
    out = {}
    for key, value in values.items():
        if key not in by_option:
            if key in COMMON_KEYS:
                continue
            raise click.BadParameter(f"unknown setting {key!r} for {cmd.name}")
        out[by_option[key]] = value
    return out


def _runtime_errors(fn):
    """Map library failures that survive validation to exit code 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except CondensationError as exc:
            raise click.ClickException(f"condensation rejected: {exc}") from None
        except (ValueError, KeyError, OSError, ArithmeticError) as exc:
            raise click.ClickException(str(exc)) from None

    return wrapper


def _emit(text: str, output: str | None) -> None:
    if output is None:
        click.echo(text, nl=not text.endswith("\n"))
    else:
        Path(output).write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _model(spec: str) -> GroundTruthModel:
    models = builtin_models()
    if spec in models:
        return models[spec]
    path = Path(spec)
    if not path.is_file():
        raise ValidationError(f"unknown model {spec!r}; builtin models are {', '.join(sorted(models))}")
    try:
        return GroundTruthModel.from_dict(json.loads(path.read_text()))
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"invalid model file {spec}: {exc}") from None


def _graph(path: str | None, model: str | None) -> Rdceg:
    """A fitted graph from a fit/graph JSON file, or a builtin model's generating graph."""
    if (path is None) == (model is None):
        raise ValidationError("give exactly one of --graph and --model")
    if model is not None:
        return _model(model).rdceg()
    try:
        d = json.loads(Path(path).read_text())
        if d.get("schema") == FIT_SCHEMA:
            d = d["graph"]
        return Rdceg.from_dict(d)
    except (ValueError, KeyError, TypeError, StructureError, StagingError) as exc:
        raise ValidationError(f"invalid graph file {path}: {exc}") from None


def _vertex_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", type=click.Path(exists=True, dir_okay=False), callback=_load_config, is_eager=True,
              expose_value=False, help="JSON file with option defaults.")
@click.version_option(package_name="rdceg")
def main():
    """Reduced dynamic chain event graphs: simulate, fit, query, convert."""


@main.command()
@click.option("--model", "model_spec", required=True, help="Builtin model name or ground-truth JSON file.")
@click.option("--n", "n", type=click.IntRange(1), required=True, help="Population size.")
@click.option("--seed", type=SEED, default=0, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True,
              help="json writes JSON Lines.")
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="Output file (default stdout).")
@click.option("--write-model", type=click.Path(dir_okay=False), help="Also write the generating model as JSON.")
@click.option("--timestamp/--no-timestamp", default=True, show_default=True,
              help="Record the generation time in the provenance header.")
@click.option("--jobs", type=click.IntRange(1), default=1, hidden=True)
@_runtime_errors
def simulate(model_spec, n, seed, fmt, output, write_model, timestamp, jobs):
    """Simulate an open population from a ground-truth model."""
    model = _model(model_spec)
    ds = simulate_population(model, n, seed, "now" if timestamp else None)
    _emit(ds.to_jsonl() if fmt == "json" else ds.to_csv(), output)
    if write_model:
        Path(write_model).write_text(model.to_json() + "\n")


def _search_config(search_file, model, alpha, tau, censoring, beta_rule) -> SearchConfig:
    try:
        if search_file:
            config = SearchConfig.from_dict(json.loads(Path(search_file).read_text()))
        elif model is not None:
            config = SearchConfig.from_model(model)
        else:
            config = SearchConfig()
        prior = config.prior.to_dict()
        for key, value in (("alpha_total", alpha), ("tau", tau), ("censoring", censoring), ("beta_rule", beta_rule)):
            if value is not None:
                prior[key] = value
        return SearchConfig(config.hyperstages, config.hyperclusters, PriorConfig.from_dict(prior),
                            config.max_depth, config.tie_break_seed)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"invalid search settings: {exc}") from None


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Path data (.jsonl or .csv).")
@click.option("--model", "model_spec", required=True,
              help="Builtin model or ground-truth JSON supplying the event tree (and default hyperstages).")
@click.option("--search", "search_file", type=click.Path(exists=True, dir_okay=False),
              help="Search settings JSON (hyperstages, hyperclusters, prior).")
@click.option("--alpha", type=float, help="Phantom sample size for the Dirichlet priors.")
@click.option("--tau", type=float, help="Prior holding-time scale.")
@click.option("--censoring", type=click.Choice(["ignore", "survival"]))
@click.option("--beta-rule", type=click.Choice(["sum", "shared"]))
@click.option("--format", "fmt", type=click.Choice(["json", "dot"]), default="json", show_default=True)
@click.option("--output", "-o", type=click.Path(dir_okay=False))
@click.option("--dot", "dot_path", type=click.Path(dir_okay=False), help="Also write the graph in DOT.")
@click.option("--seed", type=SEED, default=0, hidden=True)
@click.option("--jobs", type=click.IntRange(1), default=1, hidden=True)
@_runtime_errors
def fit(data, model_spec, search_file, alpha, tau, censoring, beta_rule, fmt, output, dot_path, seed, jobs):
    """Select the MAP staging and clustering for path data."""
    model = _model(model_spec)
    config = _search_config(search_file, model, alpha, tau, censoring, beta_rule)
    try:
        config.resolve(model.modified.tree)
        ds = load_dataset(data)
        stats = sufficient_stats(ds, model.modified) if len(ds) else SufficientStats()
    except DataError as exc:
        raise ValidationError(str(exc)) from None
    except ValueError as exc:
        raise ValidationError(f"invalid search settings: {exc}") from None
    fitted = select_model(stats, model.modified, config)
    tree = model.modified.tree
    result = {
        "schema": FIT_SCHEMA,
        "model": model.name,
        "n_individuals": len(ds),
        "score": fitted.result.score,
        "search": fitted.result.to_dict(tree),
        "config": config.to_dict(),
        "graph": fitted.rdceg.to_dict(),
    }
    dot = rdceg_to_dot(fitted.rdceg, name=model.name)
    _emit(dot if fmt == "dot" else _dumps(result), output)
    if dot_path:
        Path(dot_path).write_text(dot)


@main.command()
@click.option("--graph", type=click.Path(exists=True, dir_okay=False), help="Fit or graph JSON.")
@click.option("--model", help="Use a builtin model's generating graph instead.")
@click.option("--vertices", help="Comma-separated vertex set to test as a cut (copies carry primes).")
@click.option("--event", multiple=True, help="Comma-separated root-to-sink vertex path; repeat for each path.")
@click.option("--slice", "slice_index", type=click.IntRange(1), default=1, show_default=True,
              help="Passage-slice to query.")
@click.option("--rollout", type=click.IntRange(1), help="Query the rolled-out graph over this many slices instead.")
@click.option("--find", "find", type=click.Choice(["fine-cuts", "cuts"]), help="List cuts of the queried graph.")
@click.option("--format", "fmt", type=click.Choice(["json"]), default="json")
@click.option("--output", "-o", type=click.Path(dir_okay=False))
@click.option("--seed", type=SEED, default=0, hidden=True)
@click.option("--jobs", type=click.IntRange(1), default=1, hidden=True)
@_runtime_errors
def query(graph, model, vertices, event, slice_index, rollout, find, fmt, output, seed, jobs):
    """Cut checks, intrinsic-event checks and conditional-independence statements."""
    r = _graph(graph, model)
    if not (vertices or event or find):
        raise ValidationError("nothing to query; pass --vertices, --event or --find")
    try:
        g = roll_out(r, rollout) if rollout else slice_dag(r, slice_index)
        vset = _vertex_list(vertices) if vertices else None
        if vset is not None:
            for v in vset:
                g.vertex(v)
        paths = [_vertex_list(p) for p in event]
        for p in paths:
            for v in p:
                g.vertex(v)
    except (KeyError, ValueError) as exc:
        raise ValidationError(str(exc.args[0] if exc.args else exc)) from None
    out = {"graph": "rollout" if rollout else "slice", "depth": rollout or slice_index}
    if vset is not None:
        report = classify(g, vset)
        out["report"] = report.to_dict()
        if rollout:
            # statements are read off passage-slices, whose vertices carry no copy primes
            out["statements"] = []
            out["statements_note"] = "statements are read from passage-slices; rerun without --rollout"
        elif report.kind in ("cut", "fine-cut"):
            out["statements"] = ci_statements(r, report, slice_index=slice_index)
        else:
            out["statements"] = []
    if paths:
        ok, counter = is_intrinsic(g, paths)
        out["intrinsic"] = {"event": paths, "intrinsic": ok, "counterexample": counter}
    if find:
        found = find_fine_cuts(g) if find == "fine-cuts" else find_cuts(g)
        out[find] = [c.vertices for c in found]
    _emit(_dumps(out), output)


@main.command()
@click.option("--graph", type=click.Path(exists=True, dir_okay=False), help="Fit or graph JSON.")
@click.option("--model", help="Use a builtin model's generating graph instead.")
@click.option("--untimed", type=click.Choice(["renormalize", "degenerate"]), default="renormalize", show_default=True)
@click.option("--keep", help="Comma-separated states to keep (condensation).")
@click.option("--first-passage", "passage", help="FROM:TO states for a Monte Carlo first-passage query.")
@click.option("--horizon", type=float, default=float("inf"), show_default=True)
@click.option("--samples", type=click.IntRange(1), default=100_000, show_default=True)
@click.option("--seed", type=SEED, default=0, show_default=True)
@click.option("--jobs", type=click.IntRange(1), default=1, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["json", "csv", "dot"]), default="json", show_default=True,
              help="csv needs --first-passage; dot draws the state diagram.")
@click.option("--output", "-o", type=click.Path(dir_okay=False))
@_runtime_errors
def smp(graph, model, untimed, keep, passage, horizon, samples, seed, jobs, fmt, output):
    """Convert to a semi-Markov process; optionally condense and run first-passage queries."""
    r = _graph(graph, model)
    if fmt == "csv" and not passage:
        raise ValidationError("--format csv needs --first-passage")
    if not horizon > 0:
        raise ValidationError("--horizon must be positive")
    process = to_smp(r, untimed=untimed)
    try:
        keep_states = _vertex_list(keep) if keep else None
        for s in keep_states or ():
            process.state(s)
        if passage:
            src, sep, dst = passage.partition(":")
            if not sep:
                raise ValueError("--first-passage takes FROM:TO")
            process.state(src), process.state(dst)
    except (KeyError, ValueError) as exc:
        raise ValidationError(str(exc.args[0] if exc.args else exc)) from None
    if keep_states is not None:
        process = condense_smp(process, keep_states)
    process.check()
    result = first_passage(process, src, dst, horizon, samples, seed, jobs) if passage else None
    if fmt == "dot":
        text = smp_to_dot(process)
    elif fmt == "csv":
        text = result.to_csv()
    else:
        d = {"smp": process.to_dict()}
        if result is not None:
            d["first_passage"] = result.to_dict()
        text = _dumps(d)
    _emit(text, output)


@main.command()
@click.option("--truth", required=True, help="Builtin model name or ground-truth JSON file.")
@click.option("--fit", "fit_file", type=click.Path(exists=True, dir_okay=False),
              help="Fit JSON to compare with the truth (default: the truth itself).")
@click.option("--data", type=click.Path(exists=True, dir_okay=False),
              help="Path data for the leave-one-out monitors.")
@click.option("--estimator", type=click.Choice(["theta-mean", "compound-mean"]), default="theta-mean", show_default=True)
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True)
@click.option("--output", "-o", type=click.Path(dir_okay=False))
@click.option("--seed", type=SEED, default=0, hidden=True)
@click.option("--jobs", type=click.IntRange(1), default=1, hidden=True)
@_runtime_errors
def diagnose(truth, fit_file, data, estimator, fmt, output, seed, jobs):
    """Situational and cluster error against a generating model, plus leave-one-out monitors."""
    model = _model(truth)
    fitted = _graph(fit_file, None) if fit_file else model.rdceg()
    try:
        ds = load_dataset(data) if data else None
    except DataError as exc:
        raise ValidationError(str(exc)) from None
    report = error_report(model, fitted, fit_name=fit_file or "truth", estimator=estimator)
    records, notes = [], []
    if ds is not None:
        prior = PriorConfig()
        if fit_file:
            d = json.loads(Path(fit_file).read_text())
            if d.get("schema") == FIT_SCHEMA:
                prior = PriorConfig.from_dict(d["config"]["prior"])
        kappa = {e: fitted.hued.clustering.kappa_of(e) for e in fitted.hued.tree.timed_edges}
        scorer = Scorer(fitted.hued.modified, sufficient_stats(ds, fitted.hued.modified), kappa, prior)
        records, notes = leave_one_out(scorer, fitted.hued.staging, fitted.hued.clustering)
    if fmt == "csv":
        lines = ["kind,element,error"]
        lines += [f"situation,{k},{v!r}" for k, v in sorted(report.per_situation.items())]
        lines += [f"edge,{k},{v!r}" for k, v in sorted(report.per_edge.items())]
        lines += [f"total,situational,{report.situational!r}", f"total,cluster,{report.cluster!r}"]
        _emit("\n".join(lines) + "\n", output)
    else:
        _emit(_dumps({"errors": report.to_dict(), "leave_one_out": [r.to_dict() for r in records],
                      "notes": notes}), output)


@main.group()
def repro():
    """Reproduce the simulation experiments."""


@repro.command("falls-study")
@click.option("--scale", type=click.FloatRange(0, 1, min_open=True), default=1.0, show_default=True,
              help="Fraction of the 100 replicates per sample size to run.")
@click.option("--sizes", help="Comma-separated sample sizes (default 500,1500,2500,5000,7500,10000).")
@click.option("--model", "model_spec", default="falls", show_default=True)
@click.option("--seed", type=SEED, default=0, show_default=True)
@click.option("--jobs", type=click.IntRange(1), default=1, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="Summary table (default stdout).")
@click.option("--rows", "rows_path", type=click.Path(dir_okay=False), help="Also write per-replicate rows as CSV.")
@_runtime_errors
def falls_study(scale, sizes, model_spec, seed, jobs, fmt, output, rows_path):
    """Replicate grid over sample sizes and the prior grid; prints mean errors per setting."""
    model = _model(model_spec)
    try:
        ns = [int(x) for x in sizes.split(",")] if sizes else list(FALLS_SAMPLE_SIZES)
        if any(n < 1 for n in ns):
            raise ValueError
    except ValueError:
        raise ValidationError("--sizes must be positive integers") from None
    replicates = max(1, round(100 * scale))
    rows = run_study(model if model_spec not in builtin_models() else model_spec, ns, replicates,
                     DEFAULT_PRIOR_GRID, seed, jobs)
    summary = summarize(rows)
    _emit(summary_to_csv(summary) if fmt == "csv" else _dumps(summary), output)
    if rows_path:
        Path(rows_path).write_text(rows_to_csv(rows))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
