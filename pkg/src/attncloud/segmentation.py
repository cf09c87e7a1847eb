"""Unsupervised semantic segmentation via branch space-consistency.

A trained multi-branch decoder tends to generate the same spatial region of
a shape from the same branch. Labeling each branch once, from a single
reference shape with known part labels, therefore transfers semantics to
every reconstruction: each generated point simply inherits its branch's
label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import ContractError, FormatError
from .metrics import nearest_neighbors
from .models import Autoencoder, MultiBranchDecoder


def transfer_labels(generated: np.ndarray, reference: PointCloud) -> np.ndarray:
    """Label each generated point with its nearest reference point's label."""
    if reference.labels is None:
        raise ContractError("reference cloud has no part labels")
    idx, _ = nearest_neighbors(generated, reference.points)
    return reference.labels[idx]


def majority_label(labels: np.ndarray) -> int:
    """Most frequent label; ties resolve to the lowest label id."""
    return int(np.bincount(np.asarray(labels, dtype=np.intp)).argmax())


@dataclass
class BranchSemanticMap:
    branch_labels: dict  # branch id -> semantic label id
    label_names: tuple
    reference: str = ""
    degenerate_branches: tuple = field(default_factory=tuple)

    def __post_init__(self):
        ids = sorted(self.branch_labels)
        if ids != list(range(len(ids))):
            raise ContractError(f"branch ids must be contiguous from 0, got {ids}")

    @property
    def branches(self) -> int:
        return len(self.branch_labels)

    def labels_for(self, branch_ids: np.ndarray) -> np.ndarray:
        table = np.array([self.branch_labels[b] for b in range(self.branches)])
        return table[np.asarray(branch_ids, dtype=np.intp)]


def _check_multibranch(model) -> MultiBranchDecoder:
    decoder = getattr(model, "decoder", None)
    if not isinstance(decoder, MultiBranchDecoder):
        raise ContractError("segmentation needs a multi-branch reconstruction model")
    return decoder


def assign_branches(reference: PointCloud, model: Autoencoder,
                    label_names: tuple = (), reference_name: str = "") -> BranchSemanticMap:
    """Reconstruct one labeled reference shape and give every branch the
    majority label of its generated points.

    Branches whose points are all coincident (a degenerate, untrained
    pattern) still receive a label but are flagged in the diagnostics.
    """
    decoder = _check_multibranch(model)
    recon, branch_ids = model.reconstruct(reference.points)
    point_labels = transfer_labels(recon, reference)
    mapping = {}
    degenerate = []
    for b in range(decoder.branches):
        mask = branch_ids == b
        mapping[b] = majority_label(point_labels[mask])
        if np.ptp(recon[mask], axis=0).max() < 1e-12:
            degenerate.append(b)
    if not label_names:
        label_names = tuple(f"part{v}" for v in range(int(reference.labels.max()) + 1))
    return BranchSemanticMap(mapping, tuple(label_names), reference_name, tuple(degenerate))


def segment(points: np.ndarray, model: Autoencoder, smap: BranchSemanticMap) -> PointCloud:
    """Reconstruct a cloud and label each generated point by its branch."""
    decoder = _check_multibranch(model)
    if smap.branches != decoder.branches:
        raise ContractError(
            f"map covers {smap.branches} branches but the model has {decoder.branches}"
        )
    recon, branch_ids = model.reconstruct(points)
    return PointCloud(recon, smap.labels_for(branch_ids))


def consistency_score(model: Autoencoder, smap: BranchSemanticMap,
                      test_shapes: list) -> float:
    """Fraction of (shape, branch) pairs whose majority ground-truth label
    matches the map's label for that branch."""
    decoder = _check_multibranch(model)
    if not test_shapes:
        raise ContractError("consistency_score needs a nonempty test set")
    if smap.branches != decoder.branches:
        raise ContractError("map/model branch count mismatch")
    hits = total = 0
    for shape in test_shapes:
        recon, branch_ids = model.reconstruct(shape.points)
        point_labels = transfer_labels(recon, shape)
        for b in range(decoder.branches):
            hits += majority_label(point_labels[branch_ids == b]) == smap.branch_labels[b]
            total += 1
    return hits / total


def label_accuracy(model: Autoencoder, smap: BranchSemanticMap, test_shapes: list) -> float:
    """Per-point accuracy of map-propagated labels against nearest-ground-
    truth labels over a labeled test set."""
    if not test_shapes:
        raise ContractError("label_accuracy needs a nonempty test set")
    correct = total = 0
    for shape in test_shapes:
        recon, branch_ids = model.reconstruct(shape.points)
        truth = transfer_labels(recon, shape)
        predicted = smap.labels_for(branch_ids)
        correct += int((predicted == truth).sum())
        total += len(truth)
    return correct / total


def save_map(path, smap: BranchSemanticMap):
    with open(path, "w") as f:
        for b in range(smap.branches):
            label = smap.branch_labels[b]
            f.write(f"{b}\t{label}\t{smap.label_names[label]}\n")


def load_map(path) -> BranchSemanticMap:
    path = Path(path)
    mapping = {}
    names = {}
    offset = 0
    for line in path.read_text().splitlines():
        fields = line.split("\t")
        if len(fields) != 3:
            raise FormatError(path, offset, f"expected 'branch<TAB>label<TAB>name', got {line!r}")
        try:
            branch, label = int(fields[0]), int(fields[1])
        except ValueError:
            raise FormatError(path, offset, f"non-integer ids in {line!r}")
        mapping[branch] = label
        names[label] = fields[2]
        offset += len(line) + 1
    if not mapping:
        raise FormatError(path, 0, "empty branch map")
    label_names = tuple(names.get(v, f"part{v}") for v in range(max(names) + 1))
    return BranchSemanticMap(mapping, label_names)
