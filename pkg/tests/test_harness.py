import csv
import inspect

import numpy as np
import pytest

from labelleak import attacks as attacks_mod
from labelleak.datagen import LabeledStream
from labelleak.exceptions import SchemaError
from labelleak.harness import (SUMMARY_COLUMNS, ExperimentConfig, aggregate_summaries, client_windows, loso_partition,
                               run_experiment, run_sweep, sweep_configs, train_checkpoints, write_report)
from labelleak.model import load_checkpoint

SMALL = {"class_count": 4, "length": 4000, "mean_dwell_windows": 6.0}


def small_cfg(**kw):
    base = dict(stream=dict(SMALL), client_count=3, batch_size=20, hidden_dims=[16], seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def baseline():
    return run_experiment(small_cfg())


def test_loso_partition():
    clients = [LabeledStream(c, np.zeros((1, 1)), [0]) for c in "abc"]
    pool, held = loso_partition(clients, "b")
    assert [c.client_id for c in pool] == ["a", "c"] and held.client_id == "b"
    with pytest.raises(LookupError):
        loso_partition(clients, "z")


def test_rows_cover_every_client_and_attack(baseline):
    rows = baseline.rows()
    assert len(rows) == 3 * len(baseline.config.attacks)
    assert {r["client"] for r in rows} == {"c00", "c01", "c02"}
    for r in rows:
        assert r["n_batches"] > 0 and 0.0 <= r["classacc"] <= 1.0


def test_aggregates_are_client_means(baseline):
    for name, agg in baseline.aggregates().items():
        vals = [r["classacc"] for r in baseline.rows() if r["attack"] == name]
        assert agg["classacc"] == pytest.approx(np.mean(vals))


def test_runs_are_deterministic(baseline):
    again = run_experiment(small_cfg())
    assert again.rows() == baseline.rows()
    other = run_experiment(small_cfg(seed=2))
    assert other.rows() != baseline.rows()


def test_zero_noise_equals_no_defense(baseline):
    quiet = run_experiment(small_cfg(ldp={"noise_sigma": 0.0}))
    for a, b in zip(quiet.rows(), baseline.rows()):
        assert {k: v for k, v in a.items() if k != "ldp"} == {k: v for k, v in b.items() if k != "ldp"}
    assert quiet.rows()[0]["ldp"] == "noise0"


def test_single_class_sequential_llbg_is_perfect():
    cfg = small_cfg(stream={**SMALL, "class_count": 2, "null_weight": 1.0}, sampling="sequential",
                    attacks=["llbg"])
    report = run_experiment(cfg)
    assert all(r["classacc"] == 1.0 for r in report.rows())


def test_bias_free_model_skips_bias_attacks():
    report = run_experiment(small_cfg(final_layer_has_bias=False, attacks=["llbg", "ebi", "ilrg", "llg"]))
    by = {r["attack"]: r for r in report.rows() if r["client"] == "c00"}
    for name in ("llbg", "ebi", "ilrg"):
        assert by[name]["classacc"] == "skipped:capability"
    assert isinstance(by["llg"]["classacc"], float)
    assert report.aggregates()["llbg"]["classacc"] is None


def test_config_round_trip(tmp_path):
    cfg = small_cfg(ldp={"clip_norm": 0.1, "noise_sigma": None, "order": "clip_then_noise"})
    cfg.save(tmp_path / "c.json")
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(SchemaError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(SchemaError):
        ExperimentConfig.from_dict({"stream": {"classes": 3}})


def test_report_files(tmp_path, baseline):
    paths = write_report(baseline, tmp_path)
    with open(paths["summary"], newline="") as fh:
        reader = csv.reader(fh)
        assert next(reader) == SUMMARY_COLUMNS
        assert sum(1 for _ in reader) == len(baseline.rows())
    assert "confusion_c00_llbg" in paths
    agg = aggregate_summaries([paths["summary"]])
    by = {r["attack"]: r for r in agg}
    for name, vals in baseline.aggregates().items():
        assert by[name]["classacc"] == pytest.approx(vals["classacc"], rel=1e-12)
        assert by[name]["clients"] == 3


def test_attacks_see_only_update_and_snapshot():
    # the server's view: each attack gets the shared update, plus the model it broadcast
    for cls in attacks_mod.ATTACKS.values():
        assert list(inspect.signature(cls.reconstruct).parameters) == ["self", "update"]
        assert list(inspect.signature(cls.fit).parameters) == ["self", "model"]


def test_sweep_grid_and_output(tmp_path):
    base = small_cfg(attacks=["llbg", "llg"])
    grid = sweep_configs(base, ["sequential", "shuffled"], [None, {"noise_sigma": 0.1}])
    assert [(c.sampling, c.ldp_label) for c in grid] == [("sequential", "none"), ("sequential", "noise0.1"),
                                                        ("shuffled", "none"), ("shuffled", "noise0.1")]
    reports = run_sweep(base, ["sequential", "shuffled"], [None], directory=tmp_path)
    assert len(reports) == 2
    with open(tmp_path / "summary.csv", newline="") as fh:
        assert sum(1 for _ in csv.DictReader(fh)) == 2 * 3 * 2


@pytest.mark.slow
def test_trained_checkpoints_are_reused(tmp_path):
    cfg = small_cfg(epochs=3, attacks=["llbg"])
    paths = train_checkpoints(cfg, tmp_path)
    assert len(paths) == 3
    m = load_checkpoint(paths[0])
    assert m.trained_epochs == 3
    fresh = run_experiment(small_cfg(epochs=3, attacks=["llbg"], trained=True))
    cached = run_experiment(small_cfg(epochs=3, attacks=["llbg"], trained=True, checkpoint_dir=str(tmp_path)))
    assert fresh.rows() == cached.rows()


def test_windows_share_class_count():
    windows, arch = client_windows(small_cfg())
    assert {w.class_count for w in windows.values()} == {4}
    assert arch.input_dim == 3 * 50 and arch.class_count == 4
