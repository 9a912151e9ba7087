import functools
import logging
from pathlib import Path

import click
import numpy as np

from config import DEFAULT_SEPARATION, PROFILE_DEFAULTS, VARIANTS, AppConfig, describe_defaults, parse_config
from services.dataset import PROFILES, generate_synthetic, load_csv, write_csv
from services.evaluation import evaluate_embedding, pca_fit, setcover_subsample
from services.experiment_runner import run_experiment
from services.kiae_model import REPR_ACTIVATIONS, SEQUENCE_MODES, KiaeConfig, LatentEmbedding, encode, load_model, save_model, train
from services.knowledge import (
    GammaTable,
    KnowledgeMatrix,
    audit_triangle,
    build_from_labels,
    corrupt_noisy,
    fill_missing_dr,
    load_knowledge_csv,
    mask_random_pairs,
    write_knowledge_csv,
)
from services.numerics import make_rng
from ui.display_manager import DisplayManager
from utils.errors import ConfigError, KiaeError
from utils.excel_writer import write_centroids_csv, write_embedding_csv


def handle_errors(command):
    """Turn service errors into click failures: bad config exits 2, a failed run exits 1."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except ConfigError as e:
            raise click.UsageError(str(e))
        except (KiaeError, FileNotFoundError) as e:
            logging.error(f"{command.__name__} failed: {e}")
            raise click.ClickException(str(e))

    return wrapper


def data_options(command):
    command = click.option("--id-column", default=None, help="Sample id column (default: row number).")(command)
    command = click.option("--label-column", default="label", show_default=True, help="Label column; 'none' for unlabelled data.")(command)
    return command


def _load(path, label_column, id_column):
    label = None if label_column in (None, "", "none") else label_column
    return load_csv(path, label_column=label, id_column=id_column)


# -------------------------------------------------------
# ENTRY POINT
# -------------------------------------------------------
@click.group()
@click.option("--log-level", default=None, help=f"Log verbosity (default: env {AppConfig.LOG_ENV_VAR} or INFO).")
def main(log_level):
    """Knowledge-integrated autoencoder: train, embed and compare against a plain AE."""
    AppConfig.configure_logging(log_level)


@main.command()
@click.argument("profile", type=click.Choice(sorted(PROFILES)))
@click.option("--n", "n", type=int, default=None, help="Sample count (profile default).")
@click.option("--d", "d", type=int, default=None, help="Feature count (profile default).")
@click.option("--k", "k", type=int, default=None, help="Category count (profile default).")
@click.option("--separation", type=float, default=None, help="Distance between cluster means (profile default).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="CSV file to write.")
@handle_errors
def generate(profile, n, d, k, separation, seed, out):
    """Write a synthetic labelled dataset as CSV."""
    if separation is None:
        separation = PROFILE_DEFAULTS.get(profile, {}).get("separation", DEFAULT_SEPARATION)
    ds = generate_synthetic(profile, n=n, d=d, K=k, separation=separation, rng=make_rng(seed))
    write_csv(ds, out)
    click.echo(f"Wrote {ds.n} samples x {ds.d} features ({ds.n_categories} categories) to {out}")


# -------------------------------------------------------
# KNOWLEDGE MATRIX
# -------------------------------------------------------
@main.group()
def knowledge():
    """Build, complete or corrupt knowledge matrix files."""


@knowledge.command("build")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@data_options
@click.option("--gamma", type=float, default=1.0, show_default=True, help="Cross-category offset.")
@click.option("--alpha1", type=float, default=0.0, show_default=True)
@click.option("--alpha2", type=float, default=1.0, show_default=True)
@click.option("--known-fraction", type=float, default=1.0, show_default=True, help="Share of pairs kept as known.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@handle_errors
def knowledge_build(data, label_column, id_column, gamma, alpha1, alpha2, known_fraction, seed, out):
    """Draw M_T from the dataset labels."""
    ds = _load(data, label_column, id_column)
    rng = make_rng(seed)
    mt = build_from_labels(ds, GammaTable.uniform(ds.n_categories, gamma, alpha1, alpha2), rng)
    if known_fraction < 1.0:
        mt = mask_random_pairs(mt, known_fraction, rng)
    write_knowledge_csv(mt, out)
    click.echo(f"Wrote {mt.n}x{mt.n} knowledge matrix ({mt.known_pair_count()} known pairs) to {out}")


@knowledge.command("fill")
@click.argument("matrix", type=click.Path(exists=True, dir_okay=False))
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@data_options
@click.option("--k-neighbors", type=int, default=5, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@handle_errors
def knowledge_fill(matrix, data, label_column, id_column, k_neighbors, out):
    """Complete missing entries with the k-NN distance regressor."""
    mt = load_knowledge_csv(matrix)
    audit_triangle(mt)
    filled = fill_missing_dr(mt, _load(data, label_column, id_column), k_neighbors=k_neighbors)
    write_knowledge_csv(filled, out)
    click.echo(f"Filled {filled.known_pair_count() - mt.known_pair_count()} pairs; wrote {out}")


@knowledge.command("corrupt")
@click.option("--n", "n", type=int, required=True, help="Sample count.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@handle_errors
def knowledge_corrupt(n, seed, out):
    """Write a uniform-noise matrix (faulty knowledge)."""
    write_knowledge_csv(corrupt_noisy(n, make_rng(seed)), out)
    click.echo(f"Wrote {n}x{n} noise matrix to {out}")


# -------------------------------------------------------
# MODEL
# -------------------------------------------------------
@main.command("train")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@data_options
@click.option("--knowledge", "knowledge_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Knowledge matrix CSV; without it a plain AE is trained.")
@click.option("--omega1", type=float, default=0.5, show_default=True, help="Reconstruction weight when --knowledge is given.")
@click.option("--lstm-hidden", type=int, default=32, show_default=True)
@click.option("--fc-a", type=int, default=64, show_default=True)
@click.option("--fc-b", type=int, default=32, show_default=True)
@click.option("--repr-dim", type=int, default=4, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--learning-rate", type=float, default=1e-3, show_default=True)
@click.option("--sequence-mode", type=click.Choice(SEQUENCE_MODES), default="single_step", show_default=True)
@click.option("--repr-activation", type=click.Choice(REPR_ACTIVATIONS), default="relu", show_default=True,
              help="Activation of the representation layer.")
@click.option("--window", type=int, default=None)
@click.option("--jump", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Checkpoint (.npz) to write.")
@handle_errors
def train_command(data, label_column, id_column, knowledge_path, omega1, lstm_hidden, fc_a, fc_b, repr_dim,
                  batch_size, epochs, learning_rate, sequence_mode, repr_activation, window, jump, seed, out):
    """Train a model and save its checkpoint."""
    ds = _load(data, label_column, id_column)
    if knowledge_path is None:
        mt, omega1 = KnowledgeMatrix.unknown(ds.n), 1.0
    else:
        mt = load_knowledge_csv(knowledge_path)
    config = KiaeConfig(
        input_dim=ds.d, lstm_hidden=lstm_hidden, fc_dims=(fc_a, fc_b), repr_dim=repr_dim,
        omega1=omega1, omega2=1.0 - omega1, batch_size=batch_size, epochs=epochs,
        learning_rate=learning_rate, sequence_mode=sequence_mode, repr_activation=repr_activation,
        window=window, jump=jump, seed=seed,
    )
    model, history = train(config, ds, mt)
    save_model(model, out)
    final = f"{history[-1]:.6f}" if history else "n/a"
    click.echo(f"Trained {len(history)} epochs (final mean loss {final}); wrote {out}")


@main.command("encode")
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@data_options
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Embedding CSV to write.")
@handle_errors
def encode_command(model_path, data, label_column, id_column, out):
    """Write the latent representation of every sample."""
    ds = _load(data, label_column, id_column)
    z = encode(load_model(model_path), ds)
    names = [ds.label_names[k] for k in ds.labels] if ds.is_labelled else None
    write_embedding_csv(z, names, out)
    click.echo(f"Wrote {len(z.sample_ids)} x {z.vectors.shape[1]} embedding to {out}")


# -------------------------------------------------------
# EVALUATION
# -------------------------------------------------------
def _load_embedding(path):
    ds = load_csv(path, label_column="label", id_column="sample_id")
    return ds, LatentEmbedding(ds.sample_ids, ds.samples)


@main.command("evaluate")
@click.argument("embedding", type=click.Path(exists=True, dir_okay=False))
@click.option("--centroids", type=click.Path(dir_okay=False), default=None, help="Optional centroid CSV to write.")
@handle_errors
def evaluate_command(embedding, centroids):
    """Ward-cluster an embedding CSV and score it against its labels."""
    ds, z = _load_embedding(embedding)
    report = evaluate_embedding(z, ds.labels, ds.n_categories, "evaluate")
    if centroids:
        write_centroids_csv(report, centroids)
    click.echo(f"misclassification {report.misclassification:.6f}")


@main.command("plot")
@click.argument("embedding", type=click.Path(exists=True, dir_okay=False))
@click.option("--subsample", type=int, default=90, show_default=True, help="Farthest-first points to draw.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="SVG file to write.")
@handle_errors
def plot_command(embedding, subsample, out):
    """Render an embedding CSV as a 2-D PCA scatter plot."""
    ds, z = _load_embedding(embedding)
    report = evaluate_embedding(z, ds.labels, ds.n_categories, "plot")
    chosen = setcover_subsample(z.vectors, min(subsample, ds.n))
    fit = pca_fit(z.vectors)
    components = min(2, ds.d)
    points = fit.transform(z.vectors[chosen], components)
    centres = fit.transform(report.centroid_vectors, components)
    if components == 1:
        points = np.column_stack([points, np.zeros(len(points))])
        centres = np.column_stack([centres, np.zeros(len(centres))])
    DisplayManager.emit_scatter(
        points, report.assignment.cluster_index[chosen], ds.labels[chosen],
        centres, report.centroid_distances, out, title=Path(embedding).stem,
    )
    click.echo(f"Wrote {len(chosen)}-point scatter to {out}")


# -------------------------------------------------------
# EXPERIMENT
# -------------------------------------------------------
@main.command("experiment", epilog="Config keys and defaults:\n\n\b\n" + describe_defaults())
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override [experiment] seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Override the output directory.")
@click.option("--variant", "variants", type=click.Choice(VARIANTS), multiple=True, help="Repeatable; replaces the variant list.")
@click.option("--data", type=click.Path(dir_okay=False), default=None, help="Dataset CSV replacing the configured source.")
@click.option("--synthetic", type=click.Choice(sorted(PROFILES)), default=None, help="Synthetic profile replacing the configured source.")
@handle_errors
def experiment(config_path, seed, out, variants, data, synthetic):
    """Compare ae, kiae and noisy_kiae on one dataset (misclassification per split)."""
    if data and synthetic:
        raise click.UsageError("--data and --synthetic are mutually exclusive")
    spec = parse_config(config_path).with_overrides(
        seed=seed,
        output_dir=Path(out) if out else None,
        variants=tuple(variants) or None,
        dataset=data or (f"synthetic:{synthetic}" if synthetic else None),
    )
    result = run_experiment(spec)
    DisplayManager.show_results(result.results)
    if not result.ok:
        for variant, reason in result.failed.items():
            click.echo(f"{variant} failed: {reason}", err=True)
        raise SystemExit(1)


if __name__ == "__main__":
    main()
