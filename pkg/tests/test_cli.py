import numpy as np
import pytest

from attncloud.cli import main
from attncloud.cloud import PointCloud, read_cloud, write_cloud

# one tiny configuration shared by the end-to-end tests
SMALL = [
    "families=multi-part-plane",
    "train_shapes=6", "val_shapes=2", "test_shapes=2",
    "points_per_shape=48", "partial_points=24",
    "out_points=16", "branches=2", "latent_dim=8",
    "interim_dim=3", "interim_count=4", "attn_widths=4",
    "encoder_hidden=4,8",
    "epochs=2", "batch_size=4", "lr=0.001",
]

SMALL_COMPLETE = SMALL[:7] + [
    "task=complete", "branches=2", "coarse_points=6",
    "completion_latent_dim=12", "branch_dim=6",
    "interim_dim=3", "interim_count=4", "attn_widths=4",
    "encoder_hidden=4,8", "feature_hidden=8",
    "epochs=2", "batch_size=4", "lr=0.001",
]


def run(*argv):
    return main(list(argv))


def sets(args):
    out = []
    for a in args:
        out += ["--set", a]
    return out


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert run("gen-data", "--out-dir", str(root), *sets(SMALL)) == 0
    return root


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("run")
    assert run("train", "--data", str(dataset), "--out", str(out), *sets(SMALL)) == 0
    return out


@pytest.fixture(scope="module")
def trained_completion(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("crun")
    assert run("train", "--data", str(dataset), "--out", str(out), *sets(SMALL_COMPLETE)) == 0
    return out


class TestGenData:
    def test_outputs_and_provenance(self, dataset):
        assert (dataset / "manifest.tsv").exists()
        assert (dataset / "normalization.csv").exists()
        assert (dataset / "config.txt").exists()
        assert "train_shapes = 6" in (dataset / "config.txt").read_text()

    def test_unknown_key_exit_1(self, tmp_path):
        assert run("gen-data", "--out-dir", str(tmp_path), "--set", "bogus=1") == 1

    def test_missing_flag_exit_1(self):
        assert run("gen-data") == 1


class TestTrain:
    def test_outputs(self, trained):
        assert (trained / "checkpoint.axck").exists()
        assert (trained / "loss_curve.csv").exists()
        assert (trained / "loss_curve.png").exists()
        assert (trained / "config.txt").exists()
        lines = (trained / "loss_curve.csv").read_text().splitlines()
        assert len(lines) == 3  # header + 2 epochs

    def test_missing_data_dir_exit_2(self, tmp_path):
        assert run("train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
                   *sets(SMALL)) == 2


class TestEval:
    def test_checkpoint_eval_writes_report_and_figure(self, dataset, trained, tmp_path):
        report = tmp_path / "metrics.csv"
        code = run("eval", "--checkpoint", str(trained / "checkpoint.axck"),
                   "--data", str(dataset), "--report", str(report))
        assert code == 0
        lines = report.read_text().splitlines()
        assert lines[0] == "metric,category,value,scaled_value,scale"
        assert any(line.startswith("cd-l2,average,") for line in lines)
        assert report.with_suffix(".png").exists()
        # scaled column: raw cd-l2 value times 1e4
        row = next(l for l in lines if l.startswith("cd-l2,multi-part-plane"))
        _, _, value, scaled, scale = row.split(",")
        assert float(scale) == 1e4
        assert float(scaled) == pytest.approx(float(value) * 1e4, rel=1e-12)

    def test_identical_pred_dir_gives_zero_cd_unit_fscore(self, dataset, tmp_path):
        report = tmp_path / "ident.csv"
        code = run("eval", "--pred-dir", str(dataset), "--data", str(dataset),
                   "--report", str(report), "--metrics", "cd-l1,cd-l2,fscore,jsd",
                   *sets(SMALL))
        assert code == 0
        rows = [l.split(",") for l in report.read_text().splitlines()[1:]]
        for metric, _, value, _, _ in rows:
            if metric in ("cd-l1", "cd-l2", "jsd"):
                assert float(value) == 0.0
            if metric == "fscore":
                assert float(value) == 1.0

    def test_bad_metric_exit_1(self, dataset, trained, tmp_path):
        assert run("eval", "--checkpoint", str(trained / "checkpoint.axck"),
                   "--data", str(dataset), "--report", str(tmp_path / "r.csv"),
                   "--metrics", "emd") == 1


class TestComplete:
    def test_complete_and_vanilla_share_coarse(self, dataset, trained_completion, tmp_path):
        partial = next((dataset / "multi-part-plane").glob("test_*.partial.pcf"))
        full_dir, van_dir = tmp_path / "full", tmp_path / "van"
        ck = str(trained_completion / "checkpoint.axck")
        assert run("complete", "--checkpoint", ck, "--input", str(partial),
                   "--out", str(full_dir)) == 0
        assert run("complete", "--checkpoint", ck, "--input", str(partial),
                   "--out", str(van_dir), "--vanilla") == 0
        assert (full_dir / "coarse.pcf").read_bytes() == (van_dir / "coarse.pcf").read_bytes()
        assert len(read_cloud(full_dir / "final.pcf")) == 2 * len(read_cloud(van_dir / "final.pcf"))
        assert (full_dir / "views.png").exists()

    def test_wrong_task_checkpoint_exit_1(self, trained, tmp_path, dataset):
        partial = next((dataset / "multi-part-plane").glob("test_*.partial.pcf"))
        assert run("complete", "--checkpoint", str(trained / "checkpoint.axck"),
                   "--input", str(partial), "--out", str(tmp_path / "x")) == 1


class TestSegmentAssign:
    def test_assign_then_segment(self, dataset, trained, tmp_path):
        ck = str(trained / "checkpoint.axck")
        reference = next((dataset / "multi-part-plane").glob("train_*.pcf"))
        map_path = tmp_path / "branches.map"
        assert run("assign", "--checkpoint", ck, "--reference", str(reference),
                   "--out-map", str(map_path)) == 0
        text = map_path.read_text().splitlines()
        assert len(text) == 2  # one line per branch
        out = tmp_path / "segmented.pcf"
        target = next((dataset / "multi-part-plane").glob("test_*.pcf"))
        assert run("segment", "--checkpoint", ck, "--map", str(map_path),
                   "--input", str(target), "--out", str(out)) == 0
        labeled = read_cloud(out)
        assert labeled.labels is not None and len(labeled) == 16
        assert (tmp_path / "segmented.pcf.png").exists()

    def test_corrupt_input_exit_2(self, trained, tmp_path):
        bad = tmp_path / "bad.pcf"
        bad.write_bytes(b"XXXX")
        assert run("assign", "--checkpoint", str(trained / "checkpoint.axck"),
                   "--reference", str(bad), "--out-map", str(tmp_path / "m")) == 2


class TestDeterminism:
    def test_gen_data_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run("gen-data", "--out-dir", str(d), "--threads", "1", *sets(SMALL)) == 0
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_train_and_eval_byte_identical(self, dataset, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert run("train", "--data", str(dataset), "--out", str(out),
                       "--threads", "1", *sets(SMALL)) == 0
            report = out / "metrics.csv"
            assert run("eval", "--checkpoint", str(out / "checkpoint.axck"),
                       "--data", str(dataset), "--report", str(report), "--threads", "1") == 0
            outs.append(out)
        for rel in ("checkpoint.axck", "loss_curve.csv", "loss_curve.png",
                    "config.txt", "metrics.csv", "metrics.png"):
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "gen-data" in capsys.readouterr().out
