import time

import numpy as np
import pandas as pd
import pytest

from config import ExperimentSpec
from services import experiment_runner
from services.dataset import generate_synthetic, load_csv, write_csv
from services.experiment_runner import RESULT_COLUMNS, ExperimentRunner, run_experiment
from services.knowledge import corrupt_noisy, write_knowledge_csv
from services.numerics import make_rng
from utils.errors import DomainError
from utils.excel_writer import read_results_csv

TINY_MODEL = dict(lstm_hidden=4, fc_dims=(6, 4), repr_dim=2, epochs=2, batch_size=16)


def _spec(tmp_path, **changes):
    options = dict(
        dataset="synthetic:physics_like",
        variants=("ae", "kiae", "noisy_kiae"),
        output_dir=tmp_path / "out",
        synthetic_n=60,
        synthetic_d=4,
        synthetic_k=2,
        separation=6.0,
        model_options=TINY_MODEL,
        folds=3,
        subsample=20,
        seed=7,
    )
    options.update(changes)
    return ExperimentSpec(**options)


class TestRunExperiment:
    def test_full_run_writes_every_artifact(self, tmp_path):
        result = run_experiment(_spec(tmp_path))
        assert result.ok
        out = tmp_path / "out"
        results = read_results_csv(out / "results.csv")
        assert list(results.columns) == RESULT_COLUMNS
        assert len(results) == 9
        assert set(results["split"]) == {"fit", "train", "test"}
        assert results["misclassification"].between(0.0, 1.0).all()
        for variant in ("ae", "kiae", "noisy_kiae"):
            for name in (f"embedding_{variant}.csv", f"centroids_{variant}.csv", f"scatter_{variant}.svg"):
                assert (out / name).exists()
        assert "epoch 2/2" in (out / "run.log").read_text(encoding="utf-8")
        sheets = pd.read_excel(out / "results.xlsx", sheet_name=None)
        assert set(sheets) == {"Results", "centroids_ae", "centroids_kiae", "centroids_noisy_kiae"}

    def test_embedding_comes_from_the_test_cohort(self, tmp_path):
        run_experiment(_spec(tmp_path, variants=("kiae",)))
        z = load_csv(tmp_path / "out" / "embedding_kiae.csv", label_column="label")
        assert z.n == 12
        assert z.d == 2
        assert all(sid.startswith("physics_like-") for sid in z.sample_ids)

    def test_single_variant(self, tmp_path):
        result = ExperimentRunner(_spec(tmp_path, variants=("ae",), splits=("fit",))).run()
        assert result.results[["variant", "split"]].values.tolist() == [["ae", "fit"]]
        assert not (tmp_path / "out" / "embedding_kiae.csv").exists()

    def test_replay_is_byte_identical(self, tmp_path):
        first = _spec(tmp_path, output_dir=tmp_path / "a", splits=("fit", "test"))
        second = _spec(tmp_path, output_dir=tmp_path / "b", splits=("fit", "test"))
        run_experiment(first)
        run_experiment(second)
        for name in ("results.csv", "embedding_ae.csv", "embedding_kiae.csv", "centroids_noisy_kiae.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_failed_variant_does_not_stop_the_others(self, tmp_path):
        wrong = write_knowledge_csv(corrupt_noisy(5, make_rng(0)), tmp_path / "wrong.csv")
        result = run_experiment(_spec(tmp_path, splits=("fit",), knowledge_path=wrong))
        assert not result.ok
        assert set(result.failed) == {"kiae"}
        assert sorted(result.results["variant"]) == ["ae", "noisy_kiae"]
        assert "Variant kiae aborted" in (tmp_path / "out" / "run.log").read_text(encoding="utf-8")

    def test_out_of_memory_variant_still_writes_results(self, tmp_path, monkeypatch):
        def exhausted(*args, **kwargs):
            raise MemoryError("Unable to allocate 60.1 GiB")

        monkeypatch.setattr(experiment_runner, "fill_missing_dr", exhausted)
        result = run_experiment(_spec(tmp_path, variants=("ae", "kiae"), splits=("fit",), known_fraction=0.5))
        assert result.failed == {"kiae": "Unable to allocate 60.1 GiB"}
        assert read_results_csv(tmp_path / "out" / "results.csv")["variant"].tolist() == ["ae"]

    def test_csv_dataset_with_partial_knowledge(self, tmp_path):
        ds = generate_synthetic("physics_like", n=50, d=3, K=2, separation=6.0, rng=make_rng(2))
        path = write_csv(ds, tmp_path / "toy.csv")
        for policy in ("fill", "ignore"):
            spec = _spec(
                tmp_path,
                dataset=str(path),
                variants=("kiae",),
                splits=("fit", "test"),
                known_fraction=0.5,
                missing_policy=policy,
                output_dir=tmp_path / policy,
            )
            result = run_experiment(spec)
            assert result.ok
            assert set(result.results["dataset"]) == {"toy"}

    def test_missing_dataset_fails_before_training(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            run_experiment(_spec(tmp_path, dataset=str(tmp_path / "absent.csv")))
        assert not (tmp_path / "out" / "results.csv").exists()


class TestKnowledgeForVariant:
    def test_ae_has_no_knowledge(self, tmp_path):
        runner = ExperimentRunner(_spec(tmp_path))
        assert runner.knowledge_for_variant("ae", runner.load_dataset()) is None

    def test_kiae_draws_are_seeded_per_variant(self, tmp_path):
        runner = ExperimentRunner(_spec(tmp_path))
        ds = runner.load_dataset()
        first = runner.knowledge_for_variant("kiae", ds)
        again = runner.knowledge_for_variant("kiae", ds)
        noisy = runner.knowledge_for_variant("noisy_kiae", ds)
        assert first.entries.tobytes() == again.entries.tobytes()
        assert first.is_complete and noisy.is_complete
        assert not np.array_equal(first.entries, noisy.entries)

    def test_known_fraction_masks_pairs(self, tmp_path):
        runner = ExperimentRunner(_spec(tmp_path, known_fraction=0.5))
        mt = runner.knowledge_for_variant("kiae", runner.load_dataset())
        assert 0 < mt.known_pair_count() < 60 * 59 // 2

    def test_unlabelled_dataset_rejected(self, tmp_path):
        path = tmp_path / "plain.csv"
        path.write_text("f1,f2\n1,2\n3,4\n5,6\n", encoding="utf-8")
        with pytest.raises(DomainError):
            ExperimentRunner(_spec(tmp_path, dataset=str(path), label_column=None)).load_dataset()


def _median_rates(profile, seeds):
    rates = {variant: [] for variant in ("ae", "kiae", "noisy_kiae")}
    for seed in seeds:
        runner = ExperimentRunner(ExperimentSpec(dataset=f"synthetic:{profile}", variants=tuple(rates), splits=("test",), seed=seed))
        ds = runner.load_dataset()
        for variant in rates:
            scores, _ = runner.run_variant(variant, ds)
            rates[variant].append(scores["test"])
    return {variant: float(np.median(values)) for variant, values in rates.items()}


@pytest.fixture(scope="module")
def profile_rates():
    """Median test misclassification over seeds 0-4 per profile, with the wall time it took."""
    cache = {}

    def rates(profile):
        if profile not in cache:
            started = time.perf_counter()
            medians = _median_rates(profile, range(5))
            cache[profile] = (medians, time.perf_counter() - started)
        return cache[profile][0]

    rates.elapsed = lambda: sum(seconds for _, seconds in cache.values())
    return rates


@pytest.mark.slow
@pytest.mark.parametrize("profile", ["physics_like", "biology_like"])
def test_knowledge_beats_plain_and_noise_is_worst(profile_rates, profile):
    rates = profile_rates(profile)
    assert rates["kiae"] < rates["ae"], rates
    assert rates["noisy_kiae"] > rates["ae"], rates


@pytest.mark.slow
def test_physics_like_rate_bounds(profile_rates):
    rates = profile_rates("physics_like")
    assert rates["kiae"] <= 0.10, rates
    assert rates["noisy_kiae"] >= 0.30, rates


@pytest.mark.slow
def test_profile_comparison_runs_within_ten_minutes(profile_rates):
    profile_rates("physics_like")
    profile_rates("biology_like")
    assert profile_rates.elapsed() < 600


@pytest.mark.slow
def test_biology_centroid_distances_follow_the_gamma_order():
    ordered = 0
    for seed in range(5):
        runner = ExperimentRunner(ExperimentSpec(dataset="synthetic:biology_like", variants=("kiae",), splits=("fit",), seed=seed))
        _, art = runner.run_variant("kiae", runner.load_dataset())
        report = art.report
        by_label = np.zeros((3, 3))
        for a in range(3):
            for b in range(3):
                by_label[report.best_label_map[a], report.best_label_map[b]] = report.centroid_distances[a, b]
        ordered += by_label[0, 1] < by_label[0, 2] < by_label[1, 2]
    assert ordered >= 4
