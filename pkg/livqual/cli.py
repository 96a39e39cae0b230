"""
livqual command line.

Workflow
--------
1. ``synth``     write a synthetic real/fake corpus and its manifest (or bring your own manifest).
2. ``extract``   ten quality measures per image  -> features.csv
3. ``select``    exhaustive LOO subset search on the dev split -> subset.json, ranking.csv, curve.csv
4. ``train``     fit the discriminant on a split -> model.json
5. ``classify``  label images (single image: exit 0 real, 1 fake, 2 error)
6. ``evaluate``  FLR/FFR/ACE from a decisions CSV or a model and features
7. ``crossval``  two-stage cross-validation per sensor, with an averaged Total row
8. ``breakdown`` per-material / per-procedure ACE
9. ``usage``     how often each measure appears in the best subsets
``pipeline`` runs 2-7 for every sensor of a manifest in one go.

Environment variables
---------------------
    LIVQUAL_THREADS    : cap on worker threads/processes
    LIVQUAL_LOG_LEVEL  : base log level (``-v``/``-q`` shift it)
    BRAINTRUST_API_KEY : enables ``--track``
    BRAINTRUST_PROJECT : Braintrust project name
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path
from typing import Optional

import click
from dotenv import load_dotenv

from .classifier import classify, classify_many, fit_lda, load_model, mask_names, mask_to_bits, save_model
from .config import Settings, load_config
from .errors import LivQualError, SingleClassInput
from .evaluation import (
    FeatureSet,
    Split,
    compute_rates,
    cross_validate,
    cross_validate_breakdown,
    format_crossval_table,
    load_manifest,
    summarize_sensors,
)
from .features_csv import (
    SubsetFile,
    extract_batch,
    items_from_input,
    items_from_manifest,
    parse_mask_option,
    read_decisions,
    read_feature_set,
    read_subset,
    write_curve,
    write_decisions,
    write_features,
    write_ranking,
    write_report_csv,
    write_subset,
)
from .image import load_image
from .log import configure_logging
from .quality import FEATURE_NAMES, extract_quality_vector, feature_usage
from .selection import best_by_cardinality, exhaustive_select, training_gap
from .synth import make_liveness_corpus
from .tracking import CrossValTracker

EXIT_REAL, EXIT_FAKE, EXIT_ERROR = 0, 1, 2


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_ERROR)


def reports_errors(func):
    """Turn LivQualError into a one-line message and exit code 2."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except LivQualError as exc:
            _fail(f"{type(exc).__name__}: {exc}")

    return wrapper


def _mask_option(value: str) -> int:
    try:
        return parse_mask_option(value)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--subset") from exc


def _show_progress() -> bool:
    return sys.stderr.isatty()


def _load_split(path: Path, sensor: Optional[str], split: Optional[str]) -> FeatureSet:
    """Rows of ``sensor`` (all when None) and ``split`` ("all" keeps every split)."""
    data = read_feature_set(path)
    if sensor:
        data = data.for_sensor(sensor)
    if split and split != "all":
        data = data.for_split(split)
    if len(data) == 0:
        raise click.UsageError(f"no rows for sensor={sensor or '*'} split={split or '*'} in {path}")
    return data


def _single_sensor(data: FeatureSet, sensor: Optional[str]) -> str:
    if sensor:
        return sensor
    sensors = sorted(set(data.sensors))
    if len(sensors) != 1:
        raise click.UsageError(f"features hold several sensors ({', '.join(sensors)}); pass --sensor")
    return sensors[0]


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
@click.option("-q", "--quiet", count=True, help="Less logging (repeatable).")
@click.pass_context
def main(ctx: click.Context, verbose: int, quiet: int) -> None:
    """Fingerprint liveness detection from image quality measures."""
    load_dotenv()
    try:
        settings = Settings.from_env()
    except LivQualError as exc:
        _fail(str(exc))
    configure_logging(settings.log_level, verbose - quiet)
    ctx.obj = settings


# ===========================================================================
# extract
# ===========================================================================

@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True, path_type=Path), help="Image file or directory.")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Dataset manifest CSV.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Features CSV to write.")
@click.option("--sensor", default=None, help="Manifest: only this sensor. Input: sensor tag for the rows.")
@click.option("--debug-dir", type=click.Path(file_okay=False, path_type=Path), help="Dump masks and orientation fields.")
@click.option("--threads", type=int, default=None, help="Worker threads (capped by LIVQUAL_THREADS).")
@click.pass_obj
@reports_errors
def extract(settings: Settings, input_path, manifest, config_path, out, sensor, debug_dir, threads) -> None:
    """Compute the ten quality measures for every image."""
    if (input_path is None) == (manifest is None):
        raise click.UsageError("pass exactly one of --input or --manifest")
    config = load_config(config_path)
    if manifest is not None:
        dataset = load_manifest(manifest)
        for line in dataset.summary_lines():
            click.echo(line)
        items = items_from_manifest(dataset, sensor)
    else:
        items = items_from_input(input_path, sensor or "")
    if not items:
        _fail("no images to extract")

    rows, failures = extract_batch(items, config, settings.workers(threads), _show_progress(), debug_dir)
    write_features(rows, out)
    click.echo(f"wrote {len(rows)} rows to {out} ({len(failures)} skipped)")
    if not rows:
        sys.exit(EXIT_ERROR)


# ===========================================================================
# select / train
# ===========================================================================

@main.command()
@click.option("--dev", "dev_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--sensor", default=None)
@click.option("--split", default="dev", show_default=True, type=click.Choice(["dev", "test", "all"]), help="Split to select on, or 'all'.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path), help="subset.json")
@click.option("--ranking", type=click.Path(dir_okay=False, path_type=Path), help="Full ranking CSV.")
@click.option("--curve", type=click.Path(dir_okay=False, path_type=Path), help="Best ACE per subset size CSV.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--workers", type=int, default=None, help="Worker processes (capped by LIVQUAL_THREADS).")
@click.pass_obj
@reports_errors
def select(settings: Settings, dev_path, sensor, split, out, ranking, curve, config_path, workers) -> None:
    """Exhaustive leave-one-out search over all 1,023 feature subsets."""
    devset = _load_split(dev_path, sensor, split)
    sensor = _single_sensor(devset, sensor)
    config = load_config(config_path)
    result = exhaustive_select(devset, sensor, config, settings.workers(workers), _show_progress())

    write_subset(SubsetFile.from_score(sensor, result.best), out)
    if ranking:
        write_ranking(result.ranking, ranking)
    if curve:
        write_curve(best_by_cardinality(result.ranking), curve)
    best = result.best
    click.echo(f"{sensor}: {best.bits} ({', '.join(best.names)}) LOO ACE {best.loo_ace:.2f}% "
               f"(FLR {best.loo_flr:.2f}%, FFR {best.loo_ffr:.2f}%)")


@main.command()
@click.option("--features", "features_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--sensor", default=None)
@click.option("--split", default="dev", show_default=True, type=click.Choice(["dev", "test", "all"]), help="Split to train on, or 'all'.")
@click.option("--subset", required=True, help="subset.json, a 10-bit string or feature names.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path), help="model.json")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@reports_errors
def train(features_path, sensor, split, subset, out, config_path) -> None:
    """Fit the liveness discriminant on one sensor's samples."""
    data = _load_split(features_path, sensor, split)
    sensor = _single_sensor(data, sensor)
    model = fit_lda(data.features, data.is_real, _mask_option(subset), sensor, load_config(config_path))
    save_model(model, out)
    click.echo(f"{sensor}: trained on {model.n_real} real / {model.n_fake} fake with {', '.join(mask_names(model.mask))} -> {out}")


# ===========================================================================
# classify / evaluate
# ===========================================================================

@main.command(name="classify")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--features", "features_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--split", default="all", show_default=True, type=click.Choice(["dev", "test", "all"]), help="With --features: split to classify.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Decisions CSV to write.")
@click.argument("images", nargs=-1, type=click.Path(path_type=Path))
def classify_cmd(model_path, features_path, split, out, images) -> None:
    """Label images (or precomputed feature rows) real or fake; prints `path label score`."""
    try:
        model = load_model(model_path)
    except LivQualError as exc:
        _fail(f"{type(exc).__name__}: {exc}")

    if features_path is not None:
        if images:
            raise click.UsageError("pass images or --features, not both")
        try:
            data = read_feature_set(features_path)
        except LivQualError as exc:
            _fail(f"{type(exc).__name__}: {exc}")
        if model.sensor in data.sensors:
            data = data.for_sensor(model.sensor)
        if split != "all":
            data = data.for_split(split)
        decisions = classify_many(model, data.features)
        for path, decision in zip(data.paths, decisions):
            click.echo(f"{path} {decision.label.value} {decision.score:.6g}")
        if out:
            write_decisions(data.paths, decisions, out, data.labels)
        return

    if not images:
        raise click.UsageError("no images given")
    paths, decisions = [], []
    for image_path in images:
        try:
            vector = extract_quality_vector(load_image(image_path), model.config, source=str(image_path))
        except LivQualError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            if len(images) == 1:
                sys.exit(EXIT_ERROR)
            continue
        decision = classify(model, vector)
        click.echo(f"{image_path} {decision.label.value} {decision.score:.6g}")
        paths.append(str(image_path))
        decisions.append(decision)
    if out:
        write_decisions(paths, decisions, out)
    if not decisions:
        sys.exit(EXIT_ERROR)
    if len(images) == 1:
        sys.exit(EXIT_REAL if decisions[0].is_real else EXIT_FAKE)


def _echo_rates(report, prefix: str = "") -> None:
    def pct(value):
        return "undefined" if value is None else f"{value:.2f}"

    click.echo(f"{prefix}FLR {pct(report.flr)}  FFR {pct(report.ffr)}  ACE {pct(report.ace)}  "
               f"(real {report.n_real}, fake {report.n_fake})")


@main.command()
@click.option("--decisions", "decisions_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--features", "features_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--split", default="test", show_default=True, type=click.Choice(["dev", "test", "all"]), help="With --model: split to evaluate, or 'all'.")
@reports_errors
def evaluate(decisions_path, model_path, features_path, split) -> None:
    """FLR, FFR and ACE of a set of decisions."""
    if decisions_path:
        truth, predicted = read_decisions(decisions_path)
    elif model_path and features_path:
        model = load_model(model_path)
        data = _load_split(features_path, model.sensor, split)
        truth, predicted = data.labels, [d.label for d in classify_many(model, data.features)]
    else:
        raise click.UsageError("pass --decisions, or --model with --features")
    try:
        report = compute_rates(predicted, truth)
    except SingleClassInput as exc:
        _echo_rates(exc.partial)
        _fail(str(exc))
    _echo_rates(report)


# ===========================================================================
# crossval / breakdown / usage
# ===========================================================================

def _sensors_of(path: Path, sensor: tuple[str, ...]) -> list[str]:
    return list(sensor) or list(dict.fromkeys(read_feature_set(path).sensors))


@main.command()
@click.option("--features", "features_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--sensor", multiple=True, help="Sensor(s) to evaluate; default every sensor in the file.")
@click.option("--subset", required=True, help="subset.json, bits or names; used for every sensor.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False, path_type=Path), help="sensor,stage,flr,ffr,ace CSV.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--track/--no-track", default=False, help="Log runs to Braintrust.")
@click.pass_obj
@reports_errors
def crossval(settings: Settings, features_path, sensor, subset, report_path, config_path, track) -> None:
    """Train on dev/test on test, then swap; ACE is the mean of both stages."""
    config = load_config(config_path)
    mask = _mask_option(subset)
    tracker = CrossValTracker(settings) if track else None
    reports = []
    for name in _sensors_of(features_path, sensor):
        dev = _load_split(features_path, name, Split.DEV.value)
        test = _load_split(features_path, name, Split.TEST.value)
        report = cross_validate(dev, test, mask, name, config)
        if tracker:
            tracker.log_run(report, dev, test, config)
        reports.append(report)
    _print_reports(reports)
    if report_path:
        write_report_csv(reports, report_path)
    if tracker:
        tracker.flush()


def _print_reports(reports) -> None:
    rows = list(reports)
    if len(rows) > 1:
        rows.append(summarize_sensors({r.sensor: r for r in reports}))
    click.echo(format_crossval_table(rows))


@main.command()
@click.option("--features", "features_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Manifest with material/procedure columns.")
@click.option("--sensor", required=True)
@click.option("--subset", required=True, help="subset.json, bits or names.")
@click.option("--group-by", type=click.Choice(["material", "procedure"]), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@reports_errors
def breakdown(features_path, manifest, sensor, subset, group_by, config_path) -> None:
    """ACE per fake material or acquisition procedure, reals shared by all groups."""
    dataset = load_manifest(manifest)
    dev = _load_split(features_path, sensor, Split.DEV.value).with_attributes(dataset)
    test = _load_split(features_path, sensor, Split.TEST.value).with_attributes(dataset)
    groups = cross_validate_breakdown(dev, test, _mask_option(subset), sensor, group_by, load_config(config_path))
    click.echo(f"{group_by:<16} {'ACE1':>7} {'ACE2':>7} {'ACE':>7}")
    for g in groups:
        def pct(stage):
            return f"{stage.ace:7.2f}" if stage is not None and stage.ace is not None else f"{'-':>7}"
        final = f"{g.final_ace:7.2f}" if g.final_ace is not None else f"{'-':>7}"
        click.echo(f"{g.group:<16} {pct(g.stage1)} {pct(g.stage2)} {final}")


@main.command()
@click.argument("subsets", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@reports_errors
def usage(subsets) -> None:
    """Count how often each measure appears in the per-sensor best subsets."""
    best = {}
    for path in subsets:
        subset = read_subset(path)
        best[subset.sensor] = subset.mask
    result = feature_usage(best)
    click.echo(f"{'feature':<8} " + " ".join(f"{s[:10]:>10}" for s in best) + f" {'total':>6}")
    for name in FEATURE_NAMES:
        marks = " ".join(f"{'x' if best[s] >> FEATURE_NAMES.index(name) & 1 else '':>10}" for s in best)
        click.echo(f"{name:<8} {marks} {result.per_feature[name]:>6}")
    for prop, count in result.per_property.items():
        click.echo(f"{prop}: {count}")
    for source, count in result.per_source.items():
        click.echo(f"{source}: {count}")


# ===========================================================================
# synth / pipeline
# ===========================================================================

@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--n-per-class", default=100, show_default=True, type=int)
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--sensor", default="synthetic", show_default=True)
@click.option("--size", default=256, show_default=True, type=int)
@reports_errors
def synth(out, n_per_class, seed, sensor, size) -> None:
    """Write a synthetic real/fake corpus with a manifest."""
    manifest = make_liveness_corpus(n_per_class, seed, out, sensor, size, _show_progress())
    click.echo(f"wrote {len(manifest.rows)} images and {out / 'manifest.csv'}")


@main.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--synth", "synth_n", type=int, default=None, help="Generate a synthetic corpus with N images per class.")
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--size", default=256, show_default=True, type=int, help="With --synth: image side in pixels.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--workers", type=int, default=None)
@click.option("--track/--no-track", default=False, help="Log runs to Braintrust.")
@click.pass_obj
@reports_errors
def pipeline(settings: Settings, manifest, synth_n, seed, size, out, config_path, workers, track) -> None:
    """Extract, select, train and cross-validate every sensor of a manifest."""
    if (manifest is None) == (synth_n is None):
        raise click.UsageError("pass exactly one of --manifest or --synth")
    out.mkdir(parents=True, exist_ok=True)
    if synth_n is not None:
        make_liveness_corpus(synth_n, seed, out / "corpus", size=size, progress=_show_progress())
        manifest = out / "corpus" / "manifest.csv"
    config = load_config(config_path)
    n_workers = settings.workers(workers)

    dataset = load_manifest(manifest)
    for line in dataset.summary_lines():
        click.echo(line)
    rows, failures = extract_batch(items_from_manifest(dataset), config, n_workers, _show_progress())
    features_path = write_features(rows, out / "features.csv")
    click.echo(f"extracted {len(rows)} images ({len(failures)} skipped) -> {features_path}")
    if not rows:
        sys.exit(EXIT_ERROR)

    tracker = CrossValTracker(settings) if track else None
    reports = []
    for sensor in dataset.sensors:
        dev = _load_split(features_path, sensor, Split.DEV.value)
        test = _load_split(features_path, sensor, Split.TEST.value)
        result = exhaustive_select(dev, sensor, config, n_workers, _show_progress())
        write_subset(SubsetFile.from_score(sensor, result.best), out / f"subset_{sensor}.json")
        write_ranking(result.ranking, out / f"ranking_{sensor}.csv")
        write_curve(best_by_cardinality(result.ranking), out / f"curve_{sensor}.csv")
        save_model(fit_lda(dev.features, dev.is_real, result.best.mask, sensor, config), out / f"model_{sensor}.json")

        report = cross_validate(dev, test, result.best.mask, sensor, config)
        reports.append(report)
        if tracker:
            tracker.log_run(report, dev, test, config, result.best)
        click.echo(f"{sensor}: subset {mask_to_bits(result.best.mask)} ({', '.join(result.best.names)}), "
                   f"LOO ACE {result.best.loo_ace:.2f}%, cross-validated ACE {report.final_ace:.2f}% "
                   f"(gap {training_gap(result.best, report):+.2f})")

    _print_reports(reports)
    write_report_csv(reports, out / "report.csv")
    if tracker:
        tracker.flush()


if __name__ == "__main__":
    main()
