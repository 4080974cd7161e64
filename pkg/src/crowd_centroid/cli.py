"""Command-line pipeline: simulate -> views -> aggregate -> distill -> evaluate.

Flat subcommands with file-based handoff (CSV/JSONL/JSON/TOML); every
command writes a run manifest next to its output recording the resolved
flags, input digests, seed, RNG algorithm, and toolkit version, so a rerun
with identical inputs reproduces outputs byte for byte.

Exit codes: 0 success, 2 usage/config/parse errors, 3 data errors raised
mid-computation. ``CROWD_CENTROID_THREADS`` caps worker parallelism (all
current code paths are single-threaded, so any cap is honored trivially).
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import aggregation, annotations, annotator_models, distill, evaluation, simulate
from .distributions import Categorical
from .errors import (
    ConfigError,
    ConstantSeries,
    CrowdCentroidError,
    DegenerateInput,
    NonFiniteLoss,
)
from .simulate import RNG_ALGORITHM

VIEW_METHODS = ("standard", "softmax", "ds", "mace")

_DATA_ERRORS = (DegenerateInput, NonFiniteLoss, ConstantSeries)


class DataError(click.ClickException):
    exit_code = 3


def _threads() -> int:
    raw = os.environ.get("CROWD_CENTROID_THREADS")
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise click.UsageError(f"CROWD_CENTROID_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise click.UsageError(f"CROWD_CENTROID_THREADS must be >= 1, got {value}")
    return value


def _sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(
    command: str,
    parameters: dict,
    inputs: dict[str, str],
    manifest_path: Path,
    seed: int | None,
) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "rng": RNG_ALGORITHM,
        "seed": seed,
        "threads": _threads(),
        "parameters": parameters,
        "inputs": {
            name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()
        },
    }
    with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run(command_name, fn):
    """Map toolkit exceptions onto the exit-code contract."""
    try:
        return fn()
    except _DATA_ERRORS as exc:
        raise DataError(f"{command_name}: {exc}") from exc
    except CrowdCentroidError as exc:
        raise click.UsageError(f"{command_name}: {exc}") from exc


@click.group()
@click.version_option(__version__, prog_name="crowd-centroid")
def main():
    """Crowd-annotation soft-labeling pipeline."""
    _threads()  # validate the env var once up front


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _profiles_from_toml(entries, k: int) -> list[simulate.AnnotatorProfile]:
    profiles: list[simulate.AnnotatorProfile] = []
    for entry in entries:
        kind = entry.get("type")
        count = int(entry.get("count", 1))
        if count < 1:
            raise ConfigError(f"annotator count must be >= 1, got {count}")
        if kind == "confusion":
            if "matrix" in entry:
                profile = simulate.AnnotatorProfile.confusion(entry["matrix"])
            elif "diagonal" in entry:
                profile = simulate.AnnotatorProfile.diagonal(k, float(entry["diagonal"]))
            else:
                raise ConfigError("confusion annotator needs 'matrix' or 'diagonal'")
        elif kind == "spammer":
            dist = entry.get("dist", [1.0 / k] * k)
            profile = simulate.AnnotatorProfile.spammer(dist)
        elif kind == "faithful":
            profile = simulate.AnnotatorProfile.faithful(
                k, float(entry["competence"]), entry.get("spam")
            )
        else:
            raise ConfigError(f"annotator type must be confusion|spammer|faithful, got {kind!r}")
        profiles.extend([profile] * count)
    return profiles


def _sim_config_from_toml(path: str) -> simulate.SimConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    try:
        prior = Categorical(np.asarray(doc["class_prior"], dtype=np.float64))
        profiles = _profiles_from_toml(doc["annotators"], prior.k)
        return simulate.SimConfig(
            n_items=int(doc["n_items"]),
            class_prior=prior,
            profiles=tuple(profiles),
            annotations_per_item=int(doc["annotations_per_item"]),
            seed=int(doc["seed"]),
            labels=tuple(doc["labels"]) if "labels" in doc else None,
        )
    except KeyError as exc:
        raise ConfigError(f"simulation config missing key {exc}") from exc


@main.command("simulate")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", "out_dir", required=True, type=click.Path(file_okay=False))
def cmd_simulate(config_path: str, out_dir: str):
    """Generate a synthetic crowd: annotations.csv + truth.csv."""

    def run():
        cfg = _sim_config_from_toml(config_path)
        ann, truth = simulate.generate_crowd(cfg)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        simulate.write_annotations_csv(ann, out / "annotations.csv")
        simulate.write_truth_csv(ann.item_ids, truth, ann.label_space, out / "truth.csv")
        _write_manifest(
            "simulate",
            {"config": str(config_path), "out_dir": str(out_dir)},
            {"config": config_path},
            out / "manifest.json",
            seed=cfg.seed,
        )
        click.echo(f"wrote {out / 'annotations.csv'} and {out / 'truth.csv'}")

    _run("simulate", run)


# ---------------------------------------------------------------------------
# views
# ---------------------------------------------------------------------------

@main.command("views")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--label-space", "label_space_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--methods", default="standard,softmax,ds,mace", show_default=True,
              help="Comma-separated subset of standard,softmax,ds,mace.")
@click.option("--min-annotations", default=1, show_default=True, type=int)
@click.option("--max-iters", default=100, show_default=True, type=int)
@click.option("--tol", default=1e-6, show_default=True, type=float)
@click.option("--smoothing", default=0.01, show_default=True, type=float)
@click.option("--restarts", default=5, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--models-dir", type=click.Path(file_okay=False),
              help="Also serialize fitted latent-truth models here.")
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
def cmd_views(input_path, label_space_path, methods, min_annotations, max_iters,
              tol, smoothing, restarts, seed, models_dir, output_path):
    """Turn annotations into per-item distributions, one per method."""
    method_list = tuple(m.strip() for m in methods.split(",") if m.strip())
    unknown = [m for m in method_list if m not in VIEW_METHODS]
    if unknown or not method_list:
        raise click.UsageError(
            f"unknown methods {unknown}; valid methods are {', '.join(VIEW_METHODS)}"
        )

    def run():
        space = annotations.load_label_space(label_space_path) if label_space_path else None
        ann = annotations.load_annotations(input_path, label_space=space)
        ann = annotations.filter_min_annotations(ann, min_annotations)
        counts = annotations.vote_counts(ann)
        em_cfg = annotator_models.EmConfig(
            max_iters=max_iters, tol=tol, smoothing=smoothing, restarts=restarts, seed=seed
        )
        views: dict[str, list[Categorical]] = {}
        fitted = {}
        for name in method_list:
            if name == "standard":
                views[name] = annotations.standard_normalize(counts)
            elif name == "softmax":
                views[name] = annotations.softmax_normalize(counts)
            elif name == "ds":
                model = annotator_models.fit_dawid_skene(ann, em_cfg)
                fitted[name] = model
                views[name] = model.posterior_dists
            elif name == "mace":
                model = annotator_models.fit_mace(ann, em_cfg)
                fitted[name] = model
                views[name] = model.posterior_dists
        ensemble = aggregation.Ensemble.from_views(ann.item_ids, views)
        aggregation.write_ensemble_jsonl(ensemble, output_path)
        if models_dir:
            mdir = Path(models_dir)
            mdir.mkdir(parents=True, exist_ok=True)
            for name, model in fitted.items():
                annotator_models.save_model(model, mdir / f"{name}_model.json")
        inputs = {"input": input_path}
        if label_space_path:
            inputs["label_space"] = label_space_path
        _write_manifest(
            "views",
            {
                "input": str(input_path),
                "label_space": str(label_space_path) if label_space_path else None,
                "methods": list(method_list),
                "min_annotations": min_annotations,
                "max_iters": max_iters,
                "tol": tol,
                "smoothing": smoothing,
                "restarts": restarts,
                "seed": seed,
                "models_dir": str(models_dir) if models_dir else None,
                "output": str(output_path),
            },
            inputs,
            Path(str(output_path) + ".manifest.json"),
            seed=seed,
        )
        click.echo(f"wrote {output_path} ({ensemble.n_items} items x {ensemble.m} methods)")

    _run("views", run)


# ---------------------------------------------------------------------------
# aggregate
# ---------------------------------------------------------------------------

@main.command("aggregate")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--aggregator", required=True, type=click.Choice(aggregation.AGGREGATORS))
@click.option("--lambda", "lam", default=0.01, show_default=True, type=float,
              help="Temperature regularization weight (temp/hybrid).")
@click.option("--t-min", default=0.25, show_default=True, type=float)
@click.option("--step-size", default=0.05, show_default=True, type=float)
@click.option("--max-steps", default=2000, show_default=True, type=int)
@click.option("--cccp-max-iters", default=200, show_default=True, type=int)
@click.option("--cccp-tol", default=1e-10, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
def cmd_aggregate(input_path, aggregator, lam, t_min, step_size, max_steps,
                  cccp_max_iters, cccp_tol, seed, output_path):
    """Aggregate an ensemble file with avg, jsc, temp, or hybrid."""

    def run():
        ensemble = aggregation.read_ensemble_jsonl(input_path)
        tcfg = aggregation.TempFitConfig(
            lam=lam, step_size=step_size, max_steps=max_steps, t_min=t_min, seed=seed
        )
        ccfg = aggregation.CccpConfig(max_iters=cccp_max_iters, tol=cccp_tol)
        if aggregator == "avg":
            dists = aggregation.average(ensemble)
            converged = [True] * ensemble.n_items
        elif aggregator == "jsc":
            result = aggregation.js_centroid(ensemble, ccfg)
            dists, converged = result.dists, result.converged
        elif aggregator == "temp":
            dists = aggregation.temperature_scaled_average(ensemble, tcfg)
            converged = [True] * ensemble.n_items
        else:
            result = aggregation.hybrid(ensemble, tcfg, ccfg)
            dists, converged = result.dists, result.converged
        aggregation.write_aggregate_jsonl(ensemble.item_ids, aggregator, dists, converged, output_path)
        _write_manifest(
            "aggregate",
            {
                "input": str(input_path),
                "aggregator": aggregator,
                "lambda": lam,
                "t_min": t_min,
                "step_size": step_size,
                "max_steps": max_steps,
                "cccp_max_iters": cccp_max_iters,
                "cccp_tol": cccp_tol,
                "seed": seed,
                "output": str(output_path),
            },
            {"input": input_path},
            Path(str(output_path) + ".manifest.json"),
            seed=seed,
        )
        n_failed = sum(1 for c in converged if not c)
        if n_failed:
            click.echo(f"warning: {n_failed} items did not converge", err=True)
        click.echo(f"wrote {output_path} ({len(dists)} items, aggregator={aggregator})")

    _run("aggregate", run)


# ---------------------------------------------------------------------------
# distill
# ---------------------------------------------------------------------------

def _train_config_from_toml(path: str | None) -> distill.TrainConfig:
    if path is None:
        return distill.TrainConfig()
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    allowed = {"step_size", "max_epochs", "batch_size", "l2", "seed", "tol"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown training config keys {sorted(unknown)}")
    return distill.TrainConfig(**doc)


@main.command("distill")
@click.option("--features", "features_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--targets", "targets_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="TOML with step_size, max_epochs, batch_size, l2, seed, tol.")
@click.option("--model-out", "model_out", required=True, type=click.Path(dir_okay=False))
@click.option("--trace-out", "trace_out", type=click.Path(dir_okay=False))
def cmd_distill(features_path, targets_path, config_path, model_out, trace_out):
    """Train the linear softmax student on soft targets from a JSONL file.

    Feature rows keep their file order; targets are matched by item_id and
    replace the CSV's target columns when an id is present in both.
    """

    def run():
        ds = distill.load_feature_csv(features_path)
        item_ids, _, probs, _ = aggregation.read_aggregate_jsonl(targets_path)
        by_id = {item: probs[i] for i, item in enumerate(item_ids)}
        missing = [item for item in ds.item_ids if item not in by_id]
        if missing:
            raise click.UsageError(f"distill: item_id {missing[0]!r} missing from targets")
        targets = np.stack([by_id[item] for item in ds.item_ids])
        if targets.shape[1] != ds.k:
            raise click.UsageError(
                f"distill: targets have {targets.shape[1]} classes, features file has {ds.k}"
            )
        aligned = distill.FeatureDataset(
            item_ids=ds.item_ids, features=ds.features, targets=targets
        )
        cfg = _train_config_from_toml(config_path)
        model = distill.train(aligned, cfg)
        distill.save_model(model, model_out)
        trace_path = trace_out if trace_out else str(Path(model_out).with_suffix(".trace.csv"))
        distill.write_loss_trace_csv(model.loss_trace, trace_path)
        inputs = {"features": features_path, "targets": targets_path}
        if config_path:
            inputs["config"] = config_path
        _write_manifest(
            "distill",
            {
                "features": str(features_path),
                "targets": str(targets_path),
                "config": str(config_path) if config_path else None,
                "model_out": str(model_out),
                "trace_out": str(trace_path),
                "train_config": {
                    "step_size": cfg.step_size,
                    "max_epochs": cfg.max_epochs,
                    "batch_size": cfg.batch_size,
                    "l2": cfg.l2,
                    "seed": cfg.seed,
                    "tol": cfg.tol,
                },
            },
            inputs,
            Path(str(model_out) + ".manifest.json"),
            seed=cfg.seed,
        )
        click.echo(f"wrote {model_out} (final loss {model.loss_trace[-1]:.6g})")

    _run("distill", run)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

@main.command("evaluate")
@click.option("--probs", "probs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--splits", default=5, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--splits-csv", "splits_csv", type=click.Path(dir_okay=False),
              help="Also write per-split temperatures and NLLs as CSV.")
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
def cmd_evaluate(probs_path, gold_path, splits, seed, splits_csv, output_path):
    """Score aggregate probabilities against gold labels (macro-F1 + CLL)."""

    def run():
        item_ids, _, probs, _ = aggregation.read_aggregate_jsonl(probs_path)
        gold_items, gold_idx, labels = _load_gold(gold_path)
        if len(labels) != probs.shape[1]:
            raise click.UsageError(
                f"evaluate: gold has {len(labels)} distinct labels, probs have {probs.shape[1]} classes"
            )
        by_id = dict(zip(gold_items, gold_idx))
        missing = [item for item in item_ids if item not in by_id]
        if missing:
            raise click.UsageError(f"evaluate: item_id {missing[0]!r} missing from gold")
        golds = np.array([by_id[item] for item in item_ids], dtype=np.int64)
        report = evaluation.evaluate(
            probs, golds, evaluation.CllConfig(n_splits=splits, seed=seed)
        )
        evaluation.write_report_json(report, output_path)
        if splits_csv:
            evaluation.write_splits_csv(report, splits_csv)
        _write_manifest(
            "evaluate",
            {
                "probs": str(probs_path),
                "gold": str(gold_path),
                "splits": splits,
                "seed": seed,
                "splits_csv": str(splits_csv) if splits_csv else None,
                "output": str(output_path),
            },
            {"probs": probs_path, "gold": gold_path},
            Path(str(output_path) + ".manifest.json"),
            seed=seed,
        )
        click.echo(f"wrote {output_path} (macro_f1={report.macro_f1:.4f}, cll={report.cll:.4f})")

    _run("evaluate", run)


def _load_gold(path: str) -> tuple[list[str], list[int], tuple[str, ...]]:
    """Read item_id,label CSV; label order is lexicographic, as for inferred
    annotation label spaces."""
    import csv as _csv

    from .errors import EmptyInput, ParseError

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"gold CSV {path} is empty") from None
        if tuple(h.strip() for h in header) != ("item_id", "label"):
            raise ParseError(f"expected header item_id,label, got {','.join(header)}")
        rows = [(r[0], r[1]) for r in reader if r]
    if not rows:
        raise EmptyInput(f"gold CSV {path} has no data rows")
    labels = tuple(sorted({label for _, label in rows}))
    index = {label: i for i, label in enumerate(labels)}
    return [item for item, _ in rows], [index[label] for _, label in rows], labels


if __name__ == "__main__":
    main()
