"""Command-line interface: transform, reconstruct, train, classify,
evaluate and sweep."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np
from PIL import Image

from .coder import CoderConfig, project_test
from .datasets import (
    load_data,
    normalize,
    parse_idx_images,
)
from .evaluation import PipelineConfig, cross_validate, fit_pipeline, sweep_k
from .recognizer import classify as classify_code
from .recognizer import load_model, recognize_image, save_model
from .transform import (
    CoveringMode,
    ShrinkageConfig,
    TransformConfig,
    bits_per_pixel,
    deserialize_pyramid,
    feature_vector,
    forward,
    inverse,
    serialize_pyramid,
    side_info_cost,
)
from .datasets import stratified_folds


def _read_image(path: Path) -> np.ndarray:
    """Load an image for the transform: .npy arrays are used natively when
    already square power-of-two, anything else is normalised to 32x32."""
    if path.suffix == ".npy":
        arr = np.load(path)
        n = arr.shape[0] if arr.ndim == 2 else 0
        if arr.ndim == 2 and arr.shape[0] == arr.shape[1] and n >= 4 and not (n & (n - 1)):
            return np.asarray(arr, dtype=float)
        return normalize(arr)
    with Image.open(path) as im:
        return normalize(np.asarray(im.convert("L")))


def _write_image(arr: np.ndarray, path: Path) -> None:
    if path.suffix == ".npy":
        np.save(path, arr)
        return
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(path)


def _covering_mode(mode: str, lam: float) -> CoveringMode:
    return CoveringMode(mode, lam if mode == "relaxed" else 0.0)


@click.group()
def main():
    """Tetrolet transform + sparse concept coding character recognition."""


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--levels", type=int, default=None, help="Decomposition depth; default log2(N)-1.")
@click.option("--mode", type=click.Choice(["strict", "relaxed"]), default="relaxed")
@click.option("--lambda", "lam", type=float, default=25.0, help="Relaxed-mode tolerance.")
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
def transform(input_path, levels, mode, lam, out_path):
    """Forward transform; writes the serialized pyramid and prints stats."""
    image = _read_image(input_path)
    pyramid = forward(image, levels, _covering_mode(mode, lam))
    out_path.write_bytes(serialize_pyramid(pyramid))

    coeffs = np.concatenate(
        [pyramid.final_lowpass.ravel()]
        + [lv.highpass.ravel() for lv in pyramid.levels]
    )
    indices = pyramid.covering_indices()
    stats = {
        "n": pyramid.image_side,
        "levels": pyramid.levels_count,
        "mode": mode,
        "lambda": lam,
        "coefficients": int(coeffs.size),
        "nonzero_coefficients": int(np.count_nonzero(np.abs(coeffs) > 1e-12)),
        "covering_indices": int(indices.size),
        "covering_bits_per_index": bits_per_pixel(indices),
        "side_info_cost": side_info_cost(pyramid.image_side, pyramid.levels_count),
        "out": str(out_path),
    }
    click.echo(json.dumps(stats, indent=2, sort_keys=True))


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
def reconstruct(in_path, out_path):
    """Inverse transform of a serialized pyramid."""
    pyramid = deserialize_pyramid(in_path.read_bytes())
    _write_image(inverse(pyramid), out_path)
    click.echo(f"wrote {out_path}")


def _pipeline_config(k, tau, rho, lam, mode, levels, seed, rho_absolute=False) -> PipelineConfig:
    return PipelineConfig(
        transform=TransformConfig(
            levels=levels,
            mode=_covering_mode(mode, lam),
            shrinkage=ShrinkageConfig(),
        ),
        coder=CoderConfig(k=k, tau=tau, rho=rho, seed=seed),
        rho_relative=not rho_absolute,
    )


_data_option = click.option(
    "--data",
    "data_path",
    type=click.Path(exists=True, path_type=Path),
    required=True,
    help="MNIST IDX directory or <root>/<class>/*.png|pgm corpus.",
)


@main.command()
@_data_option
@click.option("--k", type=int, default=64)
@click.option("--tau", type=float, default=0.1)
@click.option("--rho", type=float, default=0.05)
@click.option("--lambda", "lam", type=float, default=25.0)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--mode", type=click.Choice(["strict", "relaxed"]), default="relaxed")
@click.option("--levels", type=int, default=None)
@click.option("--split", type=click.Choice(["train", "test", "all"]), default="train")
@click.option("--limit-per-class", type=int, default=None)
@click.option("--rho-absolute", is_flag=True, help="Use --rho as-is instead of scaling by the largest basis correlation.")
def train(data_path, k, tau, rho, lam, seed, out_path, mode, levels, split, limit_per_class, rho_absolute):
    """Build a model: concept basis plus per-class code dictionaries."""
    dataset = load_data(data_path, split=split)
    if limit_per_class is not None:
        dataset = dataset.limit_per_class(limit_per_class, seed=seed)
    config = _pipeline_config(k, tau, rho, lam, mode, levels, seed, rho_absolute)
    t0 = time.perf_counter()
    model = fit_pipeline(dataset, config)
    save_model(model, out_path)
    click.echo(
        f"trained on {len(dataset)} images, {model.class_count} classes, "
        f"k={k}, in {time.perf_counter() - t0:.1f}s -> {out_path}"
    )


@main.command(name="classify")
@click.option("--model", "model_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--input", "input_path", type=click.Path(exists=True, path_type=Path), required=True)
def classify_cmd(model_path, input_path):
    """Classify one image file or every image in an IDX file."""
    model = load_model(model_path)
    if input_path.suffix == "" or "idx3" in input_path.name:
        images = parse_idx_images(input_path.read_bytes())
        for i in range(images.shape[0]):
            label = recognize_image(normalize(images[i]), model)
            click.echo(f"{i}\t{model.class_names[label]}")
        return
    image = _read_image(input_path)
    vec = feature_vector(image, model.transform)
    code = project_test(vec, model.basis)
    label, scores = classify_code(code, model)
    click.echo(f"label: {model.class_names[label]}")
    for cid in sorted(scores):
        marker = " <-" if cid == label else ""
        click.echo(f"  class {model.class_names[cid]}: {scores[cid]:.6f}{marker}")


@main.command()
@_data_option
@click.option("--folds", type=int, default=5)
@click.option("--seed", type=int, default=0)
@click.option("--k", type=int, default=64)
@click.option("--limit-per-class", type=int, default=None)
@click.option("--tau", type=float, default=0.1)
@click.option("--rho", type=float, default=0.05)
@click.option("--lambda", "lam", type=float, default=25.0)
@click.option("--mode", type=click.Choice(["strict", "relaxed"]), default="relaxed")
@click.option("--levels", type=int, default=None)
@click.option("--split", type=click.Choice(["train", "test", "all"]), default="train")
@click.option("--out", "out_prefix", type=click.Path(path_type=Path), default=Path("evaluation"))
@click.option("--csv-latency", is_flag=True, help="Embed measured latency in the CSV (breaks byte-reproducibility).")
@click.option("--rho-absolute", is_flag=True)
def evaluate(data_path, folds, seed, k, limit_per_class, tau, rho, lam, mode, levels, split, out_prefix, csv_latency, rho_absolute):
    """Stratified cross-validation; prints a table, writes CSV and JSON."""
    dataset = load_data(data_path, split=split)
    if limit_per_class is not None:
        dataset = dataset.limit_per_class(limit_per_class, seed=seed)
    config = _pipeline_config(k, tau, rho, lam, mode, levels, seed, rho_absolute)
    plan = stratified_folds(dataset.labels, fold_count=folds, seed=seed)
    note = f"{data_path} split={split} limit={limit_per_class} n={len(dataset)}"
    report = cross_validate(dataset, config, plan, dataset_note=note)
    click.echo(report.human_table())
    csv_path = out_prefix.with_suffix(".csv")
    json_path = out_prefix.with_suffix(".json")
    csv_path.write_text(report.to_csv(include_latency=csv_latency))
    json_path.write_text(report.to_json())
    click.echo(f"wrote {csv_path} and {json_path}")


@main.command()
@_data_option
@click.option("--ks", default="64,100,200,300,400", help="Comma-separated concept dimensions.")
@click.option("--seed", type=int, default=0)
@click.option("--folds", type=int, default=5)
@click.option("--limit-per-class", type=int, default=None)
@click.option("--tau", type=float, default=0.1)
@click.option("--rho", type=float, default=0.05)
@click.option("--lambda", "lam", type=float, default=25.0)
@click.option("--mode", type=click.Choice(["strict", "relaxed"]), default="relaxed")
@click.option("--levels", type=int, default=None)
@click.option("--split", type=click.Choice(["train", "test", "all"]), default="train")
@click.option("--out", "out_prefix", type=click.Path(path_type=Path), default=Path("sweep"))
@click.option("--csv-latency", is_flag=True)
@click.option("--rho-absolute", is_flag=True)
def sweep(data_path, ks, seed, folds, limit_per_class, tau, rho, lam, mode, levels, split, out_prefix, csv_latency, rho_absolute):
    """Concept-dimension sweep over identical folds."""
    dataset = load_data(data_path, split=split)
    if limit_per_class is not None:
        dataset = dataset.limit_per_class(limit_per_class, seed=seed)
    k_list = [int(s) for s in ks.split(",") if s.strip()]
    config = _pipeline_config(k_list[0], tau, rho, lam, mode, levels, seed, rho_absolute)
    plan = stratified_folds(dataset.labels, fold_count=folds, seed=seed)
    table = sweep_k(dataset, k_list, config, plan)
    click.echo(table.human_table())
    csv_path = out_prefix.with_suffix(".csv")
    json_path = out_prefix.with_suffix(".json")
    csv_path.write_text(table.to_csv(include_latency=csv_latency))
    json_path.write_text(table.to_json())
    click.echo(f"wrote {csv_path} and {json_path}")


if __name__ == "__main__":
    sys.exit(main())
