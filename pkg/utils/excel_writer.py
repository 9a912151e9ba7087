from pathlib import Path
from typing import Dict, Optional, Sequence

import pandas as pd

from services.evaluation import EvalReport
from services.kiae_model import LatentEmbedding


def _real(value) -> str:
    return repr(float(value))


def write_results_csv(results: pd.DataFrame, path) -> Path:
    """results.csv: dataset, variant, split, misclassification (full precision)."""
    path = Path(path)
    frame = results.copy()
    frame["misclassification"] = [_real(v) for v in frame["misclassification"]]
    frame.to_csv(path, index=False, encoding="utf-8")
    return path


def read_results_csv(path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"dataset": str, "variant": str, "split": str}, encoding="utf-8")
    frame["misclassification"] = frame["misclassification"].astype(float)
    return frame


def write_embedding_csv(z: LatentEmbedding, label_names: Optional[Sequence[str]], path) -> Path:
    """One row per sample: sample_id, label, z0..z{r-1}; readable by load_csv.

    The label column is left out when label_names is None.
    """
    path = Path(path)
    frame = pd.DataFrame({"sample_id": list(z.sample_ids)})
    if label_names is not None:
        frame["label"] = list(label_names)
    for j in range(z.vectors.shape[1]):
        frame[f"z{j}"] = [_real(v) for v in z.vectors[:, j]]
    frame.to_csv(path, index=False, encoding="utf-8")
    return path


def centroid_frame(report: EvalReport) -> pd.DataFrame:
    K, r = report.centroid_vectors.shape
    frame = pd.DataFrame({"cluster": list(range(K))})
    for j in range(r):
        frame[f"z{j}"] = report.centroid_vectors[:, j]
    for k in range(K):
        frame[f"dist_{k}"] = report.centroid_distances[:, k]
    return frame


def write_centroids_csv(report: EvalReport, path) -> pd.DataFrame:
    frame = centroid_frame(report)
    text = frame.copy()
    for column in text.columns[1:]:
        text[column] = [_real(v) for v in text[column]]
    text.to_csv(Path(path), index=False, encoding="utf-8")
    return frame


def write_results_workbook(results: pd.DataFrame, centroids: Dict[str, pd.DataFrame], path) -> Path:
    """results.xlsx: a Results sheet plus one centroid sheet per completed variant."""
    path = Path(path)
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        results.to_excel(writer, index=False, sheet_name="Results")
        for variant, frame in centroids.items():
            frame.to_excel(writer, index=False, sheet_name=f"centroids_{variant}"[:31])
    return path
