"""Variant x split comparison of AE, KiAE and noisy KiAE on one dataset."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from config import AppConfig, ExperimentSpec
from services.dataset import Dataset, SplitSpec, generate_synthetic, load_csv, split
from services.evaluation import EvalReport, evaluate_embedding, pca_fit, setcover_subsample
from services.kiae_model import KiaeModel, LatentEmbedding, encode, train
from services.knowledge import (
    KnowledgeMatrix,
    audit_triangle,
    build_from_labels,
    corrupt_noisy,
    fill_missing_dr,
    load_knowledge_csv,
    mask_random_pairs,
    subset,
)
from ui.display_manager import DisplayManager
from utils.errors import DomainError, KiaeError, ShapeError
from utils.excel_writer import write_centroids_csv, write_embedding_csv, write_results_csv, write_results_workbook

RESULT_COLUMNS = ["dataset", "variant", "split", "misclassification"]

# SeedSequence([master, code]) streams; model init uses the master seed itself
DATA_STREAM = 100
VARIANT_STREAMS = {"ae": 0, "kiae": 1, "noisy_kiae": 2}


@dataclass
class RunResult:
    results: pd.DataFrame
    output_dir: Path
    failed: Dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failed


@dataclass
class _Artifacts:
    embedding: LatentEmbedding
    labels: np.ndarray
    report: EvalReport


def stream_rng(seed: int, code: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(code)])))


def _score(model: KiaeModel, cohort: Dataset, tag: str) -> Tuple[EvalReport, LatentEmbedding]:
    z = encode(model, cohort)
    present = np.unique(cohort.labels)
    if present.size < cohort.n_categories:
        logging.warning(f"Split {tag}: only {present.size} of {cohort.n_categories} categories present")
    return evaluate_embedding(z, cohort.labels, int(present.size), tag), z


class ExperimentRunner:
    """
    Trains every requested variant of one experiment spec, scores each split
    and writes the results table, embeddings, centroids and scatter plots.
    """

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.output_dir = Path(spec.output_dir)

    def load_dataset(self) -> Dataset:
        spec = self.spec
        if spec.is_synthetic:
            ds = generate_synthetic(
                spec.profile,
                n=spec.synthetic_n,
                d=spec.synthetic_d,
                K=spec.synthetic_k,
                separation=spec.synthetic_separation,
                rng=stream_rng(spec.seed, DATA_STREAM),
            )
        else:
            ds = load_csv(spec.dataset, spec.label_column, spec.id_column, spec.categorical_columns)
        if not ds.is_labelled:
            raise DomainError(f"dataset {spec.dataset_name} has no labels; misclassification cannot be scored")
        return ds

    def knowledge_for_variant(self, variant: str, ds: Dataset) -> Optional[KnowledgeMatrix]:
        """Full-dataset M_T for a variant before per-cohort completion; None for ae."""
        spec = self.spec
        rng = stream_rng(spec.seed, VARIANT_STREAMS[variant])
        if variant == "ae":
            return None
        if variant == "noisy_kiae":
            return corrupt_noisy(ds.n, rng)
        if spec.knowledge_path is not None:
            mt = load_knowledge_csv(spec.knowledge_path)
            if mt.n != ds.n:
                raise ShapeError(f"knowledge matrix is {mt.n}x{mt.n} but the dataset has {ds.n} samples")
            audit_triangle(mt)
            return mt
        mt = build_from_labels(ds, spec.gamma_table(ds.n_categories), rng)
        if spec.known_fraction < 1.0:
            mt = mask_random_pairs(mt, spec.known_fraction, rng)
        return mt

    def _cohort_knowledge(self, mt: Optional[KnowledgeMatrix], cohort: Dataset, positions) -> KnowledgeMatrix:
        if mt is None:
            return KnowledgeMatrix.unknown(cohort.n)
        part = subset(mt, positions)
        if self.spec.missing_policy == "fill" and not part.is_complete:
            part = fill_missing_dr(part, cohort, k_neighbors=self.spec.k_neighbors)
        return part

    def run_variant(self, variant: str, ds: Dataset) -> Tuple[Dict[str, float], _Artifacts]:
        spec = self.spec
        config = spec.kiae_config(ds.d, variant)
        mt = self.knowledge_for_variant(variant, ds)
        scores: Dict[str, float] = {}
        artifacts: Dict[str, _Artifacts] = {}

        if "fit" in spec.splits:
            logging.info(f"[{variant}] training on all {ds.n} samples")
            model, _ = train(config, ds, self._cohort_knowledge(mt, ds, np.arange(ds.n)))
            report, z = _score(model, ds, "fit")
            scores["fit"] = report.misclassification
            artifacts["fit"] = _Artifacts(z, ds.labels, report)

        if "train" in spec.splits or "test" in spec.splits:
            split_spec = SplitSpec("train_test", spec.train_fraction, spec.folds, spec.seed % 2**32)
            train_part, test_part, folds = split(ds, split_spec)
            position = {sid: k for k, sid in enumerate(ds.sample_ids)}
            train_positions = np.array([position[sid] for sid in train_part.sample_ids], dtype=np.int64)

            if "train" in spec.splits:
                rates = []
                for number, (fit_idx, val_idx) in enumerate(folds, start=1):
                    logging.info(f"[{variant}] fold {number}/{len(folds)}")
                    cohort = train_part.take(fit_idx)
                    model, _ = train(config, cohort, self._cohort_knowledge(mt, cohort, train_positions[fit_idx]))
                    report, z = _score(model, train_part.take(val_idx), f"train fold {number}")
                    rates.append(report.misclassification)
                    artifacts["train"] = _Artifacts(z, train_part.labels[val_idx], report)
                scores["train"] = float(np.mean(rates))

            if "test" in spec.splits:
                logging.info(f"[{variant}] training on {train_part.n} samples, testing on {test_part.n}")
                model, _ = train(config, train_part, self._cohort_knowledge(mt, train_part, train_positions))
                report, z = _score(model, test_part, "test")
                scores["test"] = report.misclassification
                artifacts["test"] = _Artifacts(z, test_part.labels, report)

        chosen = next(artifacts[tag] for tag in ("test", "fit", "train") if tag in artifacts)
        return scores, chosen

    def _emit_artifacts(self, variant: str, ds: Dataset, art: _Artifacts) -> pd.DataFrame:
        out = self.output_dir
        names = [ds.label_names[k] for k in art.labels]
        write_embedding_csv(art.embedding, names, out / f"embedding_{variant}.csv")
        centroids = write_centroids_csv(art.report, out / f"centroids_{variant}.csv")

        vectors = art.embedding.vectors
        if vectors.shape[0] >= 2:
            chosen = setcover_subsample(vectors, min(self.spec.subsample, vectors.shape[0]))
            fit = pca_fit(vectors)
            components = min(2, vectors.shape[1])
            points = fit.transform(vectors[chosen], components)
            centres = fit.transform(art.report.centroid_vectors, components)
            if components == 1:
                points = np.column_stack([points, np.zeros(len(points))])
                centres = np.column_stack([centres, np.zeros(len(centres))])
            DisplayManager.emit_scatter(
                points,
                art.report.assignment.cluster_index[chosen],
                art.labels[chosen],
                centres,
                art.report.centroid_distances,
                out / f"scatter_{variant}.svg",
                title=f"{ds.name} / {variant} / {art.report.split_tag}",
            )
        return centroids

    def run(self) -> RunResult:
        """Run every requested variant; a failing variant is logged and skipped."""
        spec, out = self.spec, self.output_dir
        spec.check_paths()
        root = logging.getLogger()
        handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
        handler.setFormatter(logging.Formatter(AppConfig.LOG_FORMAT))
        previous_level = root.level
        root.addHandler(handler)
        root.setLevel(min(previous_level or logging.INFO, logging.INFO))

        rows: List[dict] = []
        centroid_sheets: Dict[str, pd.DataFrame] = {}
        failed: Dict[str, str] = {}
        try:
            ds = self.load_dataset()
            logging.info(f"Experiment on {spec.dataset_name}: n={ds.n}, d={ds.d}, K={ds.n_categories}, seed={spec.seed}")
            for variant in spec.variants:
                try:
                    scores, art = self.run_variant(variant, ds)
                    centroid_sheets[variant] = self._emit_artifacts(variant, ds, art)
                except (KiaeError, OSError, MemoryError) as e:
                    logging.error(f"Variant {variant} aborted: {e}")
                    failed[variant] = str(e)
                    continue
                for tag in spec.splits:
                    rows.append({"dataset": spec.dataset_name, "variant": variant, "split": tag, "misclassification": scores[tag]})

            results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
            write_results_csv(results, out / "results.csv")
            write_results_workbook(results, centroid_sheets, out / "results.xlsx")
            logging.info(f"Wrote results for {len(centroid_sheets)} of {len(spec.variants)} variants to {out}")
        finally:
            root.removeHandler(handler)
            root.setLevel(previous_level)
            handler.close()
        return RunResult(results, out, failed)


def run_experiment(spec: ExperimentSpec) -> RunResult:
    return ExperimentRunner(spec).run()
