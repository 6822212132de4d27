import json

import numpy as np
import pytest

from ssdal import cli, gradcheck
from ssdal.io import read_attributes_csv, read_features_csv, write_attributes_csv, write_features_csv
from ssdal.net import GradientBundle, forward, load_checkpoint
from ssdal.pipeline import predict_deep_attributes

FAST = """\
seed = 1
data_dir = {d}/data
model_dir = {d}/models
report_dir = {d}/reports
split.train_identities = 8
split.unlabeled_identities = 8
split.test_identities = 6
eval.probe_set_size = 4
eval.num_tests = 2
stage1.epochs = 2
stage2.epochs = 2
stage2.triplets_per_epoch = 16
stage3.epochs = 2
baseline.epochs = 2
baseline.triplets_per_epoch = 16
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(FAST.format(d=tmp_path))
    return path


def test_synth_deterministic_and_row_counts(config, tmp_path):
    assert cli.main(["synth", str(config)]) == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()}
    assert cli.main(["synth", str(config)]) == 0
    assert first == {p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()}
    t = read_features_csv(tmp_path / "data" / "t_features.csv")
    g = read_features_csv(tmp_path / "data" / "gallery_features.csv")
    p = read_features_csv(tmp_path / "data" / "probe_features.csv")
    assert len(t.sample_ids) == 8 * 2 * 2 and len(g.sample_ids) == 6 * 2 and len(p.sample_ids) == 6


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed = 1\n")
    assert cli.main(["synth", str(bad)]) == 2
    bad.write_text("nonsense = 1\ndata_dir = x\n")
    assert cli.main(["synth", str(bad)]) == 2


def test_unwritable_path_exit_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"data_dir = {blocker}/sub\n")
    assert cli.main(["synth", str(cfg)]) == 3


def test_stage2_without_stage1_exit_4(config):
    assert cli.main(["synth", str(config)]) == 0
    assert cli.main(["train", str(config), "--stage", "2"]) == 4


def test_all_equals_sequential_stages(config, tmp_path):
    assert cli.main(["synth", str(config)]) == 0
    assert cli.main(["train", str(config), "--stage", "all"]) == 0
    together = (tmp_path / "models" / "final.model").read_bytes()
    for s in ("1", "2", "3"):
        assert cli.main(["train", str(config), "--stage", s]) == 0
    assert (tmp_path / "models" / "final.model").read_bytes() == together
    report = json.loads((tmp_path / "models" / "report_all.json").read_text())
    assert set(report["losses"]) == {"stage1", "stage2", "stage3"}


def test_predict_policies(config, tmp_path):
    cli.main(["synth", str(config)])
    cli.main(["train", str(config), "--stage", "1"])
    model = tmp_path / "models" / "stage1.model"
    feats = tmp_path / "data" / "probe_features.csv"
    out = tmp_path / "pred.csv"
    assert cli.main(["predict", "--model", str(model), "--features", str(feats), "--policy", "threshold",
                     "--out", str(out)]) == 0
    _, bits = read_attributes_csv(out)
    expected = predict_deep_attributes(load_checkpoint(model), read_features_csv(feats).features, 0.0)
    np.testing.assert_array_equal(bits, expected)
    assert cli.main(["predict", "--model", str(model), "--features", str(feats), "--tau", "min",
                     "--out", str(out)]) == 0
    assert np.all(read_attributes_csv(out)[1] == 1)
    assert cli.main(["predict", "--model", str(model), "--features", str(feats), "--policy", "top-p", "--p", "4",
                     "--out", str(out)]) == 0
    assert np.all(read_attributes_csv(out)[1].sum(axis=1) == 4)


def test_predict_dim_mismatch_exit_5(config, tmp_path):
    cli.main(["synth", str(config)])
    cli.main(["train", str(config), "--stage", "1"])
    bad = tmp_path / "bad.csv"
    write_features_csv(bad, np.zeros((2, 3)))
    assert cli.main(["predict", "--model", str(tmp_path / "models" / "stage1.model"), "--features", str(bad),
                     "--out", str(tmp_path / "o.csv")]) == 5


def test_eval_cmc_self_matching(tmp_path):
    f = np.eye(4)
    write_features_csv(tmp_path / "p.csv", f, [0, 1, 2, 3], [0] * 4)
    write_features_csv(tmp_path / "g.csv", f, [0, 1, 2, 3], [1] * 4)
    assert cli.main(["eval", "cmc", "--out-dir", str(tmp_path / "r"), "--probe", str(tmp_path / "p.csv"),
                     "--gallery", str(tmp_path / "g.csv"), "--num-tests", "1"]) == 0
    assert json.loads((tmp_path / "r" / "cmc.json").read_text())["rank1"] == 100.0


def test_eval_map_derived_example(tmp_path):
    write_features_csv(tmp_path / "q.csv", np.array([[0.0]]), [1], [0])
    write_features_csv(tmp_path / "g.csv", np.array([[0.0], [1.0], [2.0], [3.0]]), [1, 2, 1, 3], [1, 1, 1, 1])
    assert cli.main(["eval", "map", "--out-dir", str(tmp_path / "r"), "--query", str(tmp_path / "q.csv"),
                     "--gallery", str(tmp_path / "g.csv"), "--distance", "squared_euclidean"]) == 0
    got = json.loads((tmp_path / "r" / "map.json").read_text())["map_percent"]
    assert got == pytest.approx(100 * (1 + 2 / 3) / 2, abs=1e-9)


def test_eval_probe_missing_from_gallery_exit_5(tmp_path):
    write_features_csv(tmp_path / "p.csv", np.eye(2), [0, 9], [0, 0])
    write_features_csv(tmp_path / "g.csv", np.eye(2), [0, 1], [1, 1])
    assert cli.main(["eval", "cmc", "--out-dir", str(tmp_path / "r"), "--probe", str(tmp_path / "p.csv"),
                     "--gallery", str(tmp_path / "g.csv")]) == 5


def test_eval_attr_perfect(tmp_path):
    labels = np.array([[1, 0, 1], [0, 1, 0]])
    write_attributes_csv(tmp_path / "l.csv", labels)
    write_attributes_csv(tmp_path / "s.csv", labels * 0.9 + 0.05)
    assert cli.main(["eval", "attr", "--out-dir", str(tmp_path / "r"), "--attributes", str(tmp_path / "l.csv"),
                     "--predictions", str(tmp_path / "s.csv")]) == 0
    assert json.loads((tmp_path / "r" / "attr.json").read_text())["attribute_accuracy_percent"] == 100.0


def test_gradcheck_passes_and_lists_every_loss(tmp_path, capsys):
    cfg = tmp_path / "g.cfg"
    cfg.write_text("gradcheck.seeds = 2\n")
    assert cli.main(["gradcheck", str(cfg), "--report", str(tmp_path / "g.json")]) == 0
    report = json.loads((tmp_path / "g.json").read_text())
    assert set(report["max_relative_error"]) == set(gradcheck.LOSSES)
    out = capsys.readouterr().out
    assert all(name in out for name in gradcheck.LOSSES)


def test_gradcheck_catches_corrupted_gradient(tmp_path, monkeypatch):
    def broken(seed):
        params, evaluate = gradcheck.hinge_triplet_case(seed)

        def wrong(p):
            loss, g = evaluate(p)
            return loss, g.scaled(1.01)  # 1% gradient error

        return params, wrong

    monkeypatch.setitem(gradcheck.LOSSES, "hinge_triplet", broken)
    cfg = tmp_path / "g.cfg"
    cfg.write_text("gradcheck.seeds = 2\n")
    assert cli.main(["gradcheck", str(cfg)]) == 6


def test_run_all_reports(config, tmp_path):
    assert cli.main(["run-all", str(config)]) == 0
    summary = json.loads((tmp_path / "reports" / "run_all.json").read_text())
    assert set(summary["metrics"]) == {"stage1", "stage2", "ssdal", "baseline_fc"}
    assert "wall_times" not in summary["pipeline"]
    assert (tmp_path / "reports" / "run_all.timings.json").exists()
    for name in ("stage1", "stage2", "ssdal", "baseline_fc"):
        rows = (tmp_path / "reports" / f"cmc_{name}.csv").read_text().splitlines()
        assert rows[0] == "rank,score"
