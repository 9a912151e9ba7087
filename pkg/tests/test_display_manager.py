import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest

from ui.display_manager import DisplayManager
from utils.errors import DomainError, ShapeError

SVG = "{http://www.w3.org/2000/svg}"


def _scatter(tmp_path, **overrides):
    args = dict(
        projected=np.array([[0.0, 0.0], [0.1, 0.2], [5.0, 5.0], [5.2, 4.9]]),
        predicted=[0, 0, 1, 1],
        true_labels=[0, 0, 1, 1],
        centroids=np.array([[0.05, 0.1], [5.1, 4.95]]),
        centroid_distances=np.array([[0.0, 7.25], [7.25, 0.0]]),
        path=tmp_path / "scatter.svg",
        title="demo",
    )
    args.update(overrides)
    return DisplayManager.emit_scatter(**args)


class TestEmitScatter:
    def test_points_centroids_and_links(self, tmp_path):
        path = _scatter(tmp_path)
        text = path.read_text(encoding="utf-8")
        assert text.count('class="point"') == 4
        assert text.count('class="centroid"') == 2
        assert text.count('class="centroid-link"') == 1
        assert ">7.250</text>" in text

    def test_well_formed_svg(self, tmp_path):
        root = ET.fromstring(_scatter(tmp_path).read_bytes())
        assert root.tag == f"{SVG}svg"
        assert root.find(f"{SVG}title").text == "demo"

    def test_title_with_markup_characters_is_escaped(self, tmp_path):
        path = _scatter(tmp_path, title="R&D <cohort>")
        root = ET.fromstring(path.read_bytes())
        assert root.find(f"{SVG}title").text == "R&D <cohort>"
        assert "R&amp;D &lt;cohort&gt;" in path.read_text(encoding="utf-8")

    def test_marker_follows_true_label(self, tmp_path):
        text = _scatter(tmp_path, true_labels=[0, 1, 2, 3]).read_text(encoding="utf-8")
        assert text.count('<circle class="point"') == 1
        assert text.count('<rect class="point"') == 1
        assert text.count('<polygon class="point"') == 2

    def test_link_count_for_three_centroids(self, tmp_path):
        d = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 1.5], [2.0, 1.5, 0.0]])
        path = _scatter(
            tmp_path,
            predicted=[0, 1, 2, 2],
            centroids=np.array([[0.0, 0.0], [0.1, 0.2], [5.1, 4.95]]),
            centroid_distances=d,
        )
        assert path.read_text(encoding="utf-8").count('class="centroid-link"') == 3

    def test_identical_points_still_render(self, tmp_path):
        path = _scatter(
            tmp_path,
            projected=np.zeros((4, 2)),
            centroids=np.zeros((2, 2)),
        )
        assert "nan" not in path.read_text(encoding="utf-8")

    def test_empty_projection(self, tmp_path):
        with pytest.raises(DomainError):
            _scatter(tmp_path, projected=np.zeros((0, 2)), predicted=[], true_labels=[])
        assert not (tmp_path / "scatter.svg").exists()

    def test_wrong_width(self, tmp_path):
        with pytest.raises(ShapeError):
            _scatter(tmp_path, projected=np.zeros((4, 3)))

    def test_label_length_mismatch(self, tmp_path):
        with pytest.raises(ShapeError):
            _scatter(tmp_path, predicted=[0, 1])


class TestShowResults:
    def test_pivoted_table(self, capsys):
        results = pd.DataFrame(
            [
                {"dataset": "toy", "variant": "ae", "split": "fit", "misclassification": 0.25},
                {"dataset": "toy", "variant": "kiae", "split": "fit", "misclassification": 0.05},
            ]
        )
        DisplayManager.show_results(results)
        out = capsys.readouterr().out
        assert "kiae" in out and "0.0500" in out and "0.2500" in out

    def test_empty_results(self, capsys):
        DisplayManager.show_results(pd.DataFrame(columns=["dataset", "variant", "split", "misclassification"]))
        assert "No completed variants." in capsys.readouterr().out
