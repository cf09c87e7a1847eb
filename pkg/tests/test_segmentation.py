import numpy as np
import pytest

from attncloud import models as Mo
from attncloud import segmentation as S
from attncloud.cloud import PointCloud
from attncloud.errors import ContractError

CFG = Mo.ReconstructionConfig(
    decoder="attn", out_points=8, branches=2, latent_dim=6,
    interim_dim=3, interim_count=4, attn_widths=(4,), encoder_hidden=(4, 8),
)


def two_cluster_reference():
    rng = np.random.default_rng(0)
    left = rng.normal(-1.0, 0.02, size=(20, 3))
    right = rng.normal(1.0, 0.02, size=(20, 3))
    pts = np.concatenate([left, right])
    labels = np.array([0] * 20 + [1] * 20)
    return PointCloud(pts, labels)


def aligned_model():
    """Branch outputs pinned exactly onto the two labeled clusters."""
    model = Mo.Autoencoder(CFG, seed=1)
    for b, center in ((0, -1.0), (1, 1.0)):
        blk = model.decoder.blocks[b]
        blk.map3d.w.data = np.zeros_like(blk.map3d.w.data)
        blk.map3d.b.data = np.full(3, center)
    return model


class TestAssignBranches:
    def test_constructed_alignment_matches_parts_exactly(self):
        smap = S.assign_branches(two_cluster_reference(), aligned_model())
        assert smap.branch_labels == {0: 0, 1: 1}
        assert set(smap.degenerate_branches) == {0, 1}  # collapsed on purpose

    def test_single_branch_gets_global_majority(self):
        cfg = Mo.ReconstructionConfig(
            decoder="attn", out_points=8, branches=1, latent_dim=6,
            interim_dim=3, interim_count=4, attn_widths=(4,), encoder_hidden=(4, 8),
        )
        model = Mo.Autoencoder(cfg, seed=2)
        rng = np.random.default_rng(3)
        pts = rng.uniform(-0.5, 0.5, (30, 3))
        pts[0] = [50.0, 50.0, 50.0]  # lone minority point, far from any output
        labels = np.array([0] + [2] * 29)
        smap = S.assign_branches(PointCloud(pts, labels), model)
        assert smap.branch_labels == {0: 2}

    def test_majority_tie_takes_lowest_id(self):
        assert S.majority_label(np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])) == 0
        assert S.majority_label(np.array([3, 3, 1, 1])) == 1

    def test_unlabeled_reference_rejected(self):
        with pytest.raises(ContractError):
            S.assign_branches(PointCloud(np.zeros((4, 3))), aligned_model())


class TestSegment:
    def test_uniform_map_labels_everything_alike(self):
        model = Mo.Autoencoder(CFG, seed=4)
        smap = S.BranchSemanticMap({0: 1, 1: 1}, ("a", "b"))
        out = S.segment(np.random.default_rng(5).uniform(-0.5, 0.5, (16, 3)), model, smap)
        assert np.all(out.labels == 1)

    def test_labels_are_branch_ids_through_map(self):
        model = Mo.Autoencoder(CFG, seed=6)
        smap = S.BranchSemanticMap({0: 2, 1: 0}, ("x", "y", "z"))
        out = S.segment(np.random.default_rng(7).uniform(-0.5, 0.5, (16, 3)), model, smap)
        assert np.array_equal(out.labels, smap.labels_for(model.decoder.branch_ids))

    def test_branch_count_mismatch_rejected(self):
        model = Mo.Autoencoder(CFG, seed=8)
        smap = S.BranchSemanticMap({0: 0}, ("a",))
        with pytest.raises(ContractError):
            S.segment(np.zeros((4, 3)) + 0.1, model, smap)


class TestScores:
    def test_consistency_on_reference_is_one(self):
        ref = two_cluster_reference()
        model = aligned_model()
        smap = S.assign_branches(ref, model)
        assert S.consistency_score(model, smap, [ref]) == 1.0

    def test_label_accuracy_on_aligned_model_is_one(self):
        ref = two_cluster_reference()
        model = aligned_model()
        smap = S.assign_branches(ref, model)
        assert S.label_accuracy(model, smap, [ref]) == 1.0

    def test_empty_test_set_rejected(self):
        model = aligned_model()
        smap = S.BranchSemanticMap({0: 0, 1: 1}, ("a", "b"))
        with pytest.raises(ContractError):
            S.consistency_score(model, smap, [])


class TestMapIO:
    def test_roundtrip(self, tmp_path):
        smap = S.BranchSemanticMap({0: 2, 1: 0, 2: 2}, ("body", "wing", "tail"), "ref0")
        p = tmp_path / "branches.map"
        S.save_map(p, smap)
        assert p.read_text() == "0\t2\ttail\n1\t0\tbody\n2\t2\ttail\n"
        back = S.load_map(p)
        assert back.branch_labels == smap.branch_labels
        assert back.label_names[0] == "body" and back.label_names[2] == "tail"

    def test_bad_line_rejected(self, tmp_path):
        p = tmp_path / "branches.map"
        p.write_text("0,2,tail\n")
        from attncloud.errors import FormatError
        with pytest.raises(FormatError):
            S.load_map(p)
