"""Synthetic desk-scale shape datasets, partial-cloud synthesis, and
normalization.

Three parameterized shape families stand in for mesh datasets: each shape is
a handful of rigidly posed primitives (box, cylinder, sphere, disc) sampled
uniformly by surface area, and every sampled point carries the integer label
of the part that generated it. Generation is a pure function of
(family, shape index, global seed), so regenerating a dataset reproduces the
files byte for byte.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud, read_cloud, write_cloud
from .errors import ContractError, FormatError
from .report import format_float

FAMILIES = ("multi-part-plane", "table", "composite-primitive")

# every family exposes three semantic parts
PART_NAMES = {
    "multi-part-plane": ("body", "wing", "tail"),
    "table": ("top", "leg", "shelf"),
    "composite-primitive": ("sphere", "cylinder", "box"),
}


def rotation_xyz(rx: float, ry: float, rz: float) -> np.ndarray:
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


@dataclass(frozen=True)
class Part:
    """One rigidly posed primitive surface with a semantic label."""

    kind: str  # box | cylinder | sphere | disc
    size: tuple  # box: (sx, sy, sz); cylinder: (r, h); sphere/disc: (r,)
    rotation: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)
    label: int = 0

    def area(self) -> float:
        if self.kind == "box":
            sx, sy, sz = self.size
            return 2.0 * (sx * sy + sy * sz + sz * sx)
        if self.kind == "cylinder":
            r, h = self.size
            return 2.0 * math.pi * r * h + 2.0 * math.pi * r * r
        if self.kind == "sphere":
            return 4.0 * math.pi * self.size[0] ** 2
        if self.kind == "disc":
            return math.pi * self.size[0] ** 2
        raise ContractError(f"unknown primitive kind {self.kind!r}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "box":
            pts = _sample_box(rng, self.size, n)
        elif self.kind == "cylinder":
            pts = _sample_cylinder(rng, self.size, n)
        elif self.kind == "sphere":
            pts = _sample_sphere(rng, self.size[0], n)
        elif self.kind == "disc":
            pts = _sample_disc(rng, self.size[0], n)
        else:
            raise ContractError(f"unknown primitive kind {self.kind!r}")
        return pts @ rotation_xyz(*self.rotation).T + np.asarray(self.translation)


def _sample_box(rng, size, n):
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.empty((n, 3))
    for f in range(6):
        m = face == f
        axis, sign = divmod(f, 2)
        others = [i for i in range(3) if i != axis]
        pts[m, axis] = (0.5 if sign == 0 else -0.5) * size[axis]
        pts[m, others[0]] = u[m, 0] * size[others[0]]
        pts[m, others[1]] = u[m, 1] * size[others[1]]
    return pts


def _sample_cylinder(rng, size, n):
    r, h = size
    lateral = 2.0 * math.pi * r * h
    cap = math.pi * r * r
    which = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    pts = np.empty((n, 3))
    side = which == 0
    pts[side, 0] = r * np.cos(theta[side])
    pts[side, 1] = r * np.sin(theta[side])
    pts[side, 2] = rng.uniform(-0.5, 0.5, size=int(side.sum())) * h
    for w, z in ((1, 0.5 * h), (2, -0.5 * h)):
        m = which == w
        rr = r * np.sqrt(rng.uniform(0.0, 1.0, size=int(m.sum())))
        pts[m, 0] = rr * np.cos(theta[m])
        pts[m, 1] = rr * np.sin(theta[m])
        pts[m, 2] = z
    return pts


def _sample_sphere(rng, r, n):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * r


def _sample_disc(rng, r, n):
    rr = r * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return np.stack([rr * np.cos(theta), rr * np.sin(theta), np.zeros(n)], axis=1)


@dataclass(frozen=True)
class SyntheticShapeSpec:
    family: str
    parts: tuple
    sample_count: int
    seed: int


def sample_shape(spec: SyntheticShapeSpec) -> PointCloud:
    """Area-weighted uniform surface sampling across a spec's parts."""
    if not spec.parts:
        raise ContractError("shape spec has no parts")
    areas = np.array([p.area() for p in spec.parts])
    if np.any(areas <= 0.0):
        raise ContractError("degenerate zero-area part")
    rng = np.random.default_rng(spec.seed)
    counts = rng.multinomial(spec.sample_count, areas / areas.sum())
    points = np.empty((spec.sample_count, 3))
    labels = np.empty(spec.sample_count, dtype=np.intp)
    pos = 0
    for part, cnt in zip(spec.parts, counts):
        points[pos : pos + cnt] = part.sample(rng, cnt)
        labels[pos : pos + cnt] = part.label
        pos += cnt
    return PointCloud(points, labels)


def _plane_parts(rng) -> tuple:
    body_r = rng.uniform(0.05, 0.09)
    body_len = rng.uniform(0.75, 0.95)
    wing_span = rng.uniform(0.7, 0.95)
    wing_chord = rng.uniform(0.16, 0.26)
    tail_span = rng.uniform(0.28, 0.4)
    return (
        Part("cylinder", (body_r, body_len), rotation=(0.0, math.pi / 2, 0.0), label=0),
        Part("box", (wing_chord, wing_span, 0.02),
             translation=(rng.uniform(0.0, 0.12), 0.0, 0.0), label=1),
        Part("box", (0.1, tail_span, 0.015),
             translation=(-body_len / 2 + 0.04, 0.0, 0.0), label=2),
        Part("box", (0.08, 0.015, tail_span * 0.45),
             translation=(-body_len / 2 + 0.04, 0.0, tail_span * 0.22), label=2),
    )


def _table_parts(rng) -> tuple:
    top_x = rng.uniform(0.6, 0.9)
    top_y = rng.uniform(0.6, 0.9)
    height = rng.uniform(0.5, 0.7)
    leg_r = rng.uniform(0.02, 0.035)
    inset_x, inset_y = top_x / 2 - 0.06, top_y / 2 - 0.06
    legs = tuple(
        Part("cylinder", (leg_r, height), translation=(sx * inset_x, sy * inset_y, -height / 2), label=1)
        for sx in (-1, 1) for sy in (-1, 1)
    )
    shelf = Part("box", (top_x * 0.8, top_y * 0.8, 0.02),
                 translation=(0.0, 0.0, -height * rng.uniform(0.55, 0.75)), label=2)
    return (Part("box", (top_x, top_y, 0.04), label=0),) + legs + (shelf,)


def _composite_parts(rng) -> tuple:
    return (
        Part("sphere", (rng.uniform(0.16, 0.24),),
             translation=(0.0, 0.0, rng.uniform(0.25, 0.4)), label=0),
        Part("cylinder", (rng.uniform(0.05, 0.09), rng.uniform(0.4, 0.6)),
             translation=(0.0, 0.0, 0.0), label=1),
        Part("box", (rng.uniform(0.3, 0.5), rng.uniform(0.3, 0.5), rng.uniform(0.06, 0.12)),
             translation=(0.0, 0.0, rng.uniform(-0.38, -0.3)), label=2),
    )


def shape_spec(family: str, index: int, base_seed: int, sample_count: int) -> SyntheticShapeSpec:
    """Deterministic per-shape spec with jittered part parameters."""
    if family not in FAMILIES:
        raise ContractError(f"unknown family {family!r}, expected one of {FAMILIES}")
    seed_seq = np.random.SeedSequence((base_seed, FAMILIES.index(family), index))
    param_seed, sample_seed = seed_seq.generate_state(2)
    rng = np.random.default_rng(param_seed)
    builder = {
        "multi-part-plane": _plane_parts,
        "table": _table_parts,
        "composite-primitive": _composite_parts,
    }[family]
    return SyntheticShapeSpec(family, builder(rng), sample_count, int(sample_seed))


def normalize(points) -> tuple[np.ndarray, np.ndarray, float]:
    """Center on the bounding-box midpoint and scale the max extent to 1."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise ContractError("cannot normalize an empty cloud")
    lo, hi = points.min(axis=0), points.max(axis=0)
    scale = float((hi - lo).max())
    if scale == 0.0:
        raise ContractError("cannot normalize a zero-extent cloud")
    center = (hi + lo) / 2.0
    return (points - center) / scale, center, scale


def denormalize(points, center, scale: float) -> np.ndarray:
    return np.asarray(points) * scale + np.asarray(center)


def make_partial(cloud: PointCloud, method: str = "halfspace-cut", params: dict | None = None,
                 seed: int = 0) -> PointCloud:
    """Drop points to synthesize a partial observation; output is an exact
    subset of the input.

    halfspace-cut removes points beyond a plane; viewpoint-occlusion keeps
    points visible from a sampled camera (a point is hidden when another
    point sits inside a thin angular shell in front of it). Sampled cuts are
    redrawn until at least 10% of the points survive.
    """
    params = dict(params or {})
    pts = cloud.points
    n = len(pts)
    if n == 0:
        raise ContractError("cannot cut an empty cloud")
    min_keep = max(1, int(math.ceil(0.1 * n)))

    if method == "halfspace-cut":
        if "direction" in params:
            d = np.asarray(params["direction"], dtype=np.float64)
            d = d / np.linalg.norm(d)
            o = np.asarray(params.get("origin", pts.mean(axis=0)), dtype=np.float64)
            t = float(params.get("offset", 0.0))
            keep = (pts - o) @ d <= t
            if keep.sum() < min_keep:
                raise ContractError(f"cut keeps {int(keep.sum())} points, need >= {min_keep}")
            return PointCloud(pts[keep], None if cloud.labels is None else cloud.labels[keep])
        rng = np.random.default_rng(seed)
        for _ in range(64):
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            frac = rng.uniform(*params.get("keep_range", (0.4, 0.7)))
            s = (pts - pts.mean(axis=0)) @ d
            keep = s <= np.quantile(s, frac)
            if keep.sum() >= min_keep:
                return PointCloud(pts[keep], None if cloud.labels is None else cloud.labels[keep])
        raise ContractError("could not sample a cut keeping >= 10% of points")

    if method == "viewpoint-occlusion":
        rng = np.random.default_rng(seed)
        angle_tol = float(params.get("angle_tol", 0.12))
        depth_tol = float(params.get("depth_tol", 0.05))
        distance = float(params.get("distance", 2.0))
        for _ in range(64):
            cam_dir = rng.standard_normal(3)
            cam_dir /= np.linalg.norm(cam_dir)
            cam = pts.mean(axis=0) + cam_dir * distance
            rays = pts - cam
            depth = np.linalg.norm(rays, axis=1)
            units = rays / depth[:, None]
            cosines = units @ units.T
            in_shell = cosines > math.cos(angle_tol)
            in_front = depth[None, :] < depth[:, None] - depth_tol
            keep = ~np.any(in_shell & in_front, axis=1)
            if keep.sum() >= min_keep:
                return PointCloud(pts[keep], None if cloud.labels is None else cloud.labels[keep])
        raise ContractError("could not sample a viewpoint keeping >= 10% of points")

    raise ContractError(f"unknown partial method {method!r}")


@dataclass(frozen=True)
class DatasetConfig:
    families: tuple = FAMILIES
    train_shapes: int = 200
    val_shapes: int = 40
    test_shapes: int = 40
    points_per_shape: int = 512
    partial_points: int = 256
    partial_method: str = "halfspace-cut"
    seed: int = 0

    def split_counts(self):
        return (("train", self.train_shapes), ("val", self.val_shapes), ("test", self.test_shapes))


@dataclass
class ManifestEntry:
    path: str  # relative to the dataset root
    split: str
    family: str
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0


def _generate_one(root: Path, cfg: DatasetConfig, family: str, split: str, index: int,
                  global_index: int) -> ManifestEntry:
    spec = shape_spec(family, global_index, cfg.seed, cfg.points_per_shape)
    cloud = sample_shape(spec)
    norm_pts, center, scale = normalize(cloud.points)
    normalized = PointCloud(norm_pts, cloud.labels)
    rel = f"{family}/{split}_{index:04d}.pcf"
    write_cloud(root / rel, normalized)

    partial_seq = np.random.SeedSequence((cfg.seed, FAMILIES.index(family), global_index, 7))
    cut_seed, pick_seed = partial_seq.generate_state(2)
    partial = make_partial(normalized, cfg.partial_method, seed=int(cut_seed))
    rng = np.random.default_rng(pick_seed)
    pick = rng.choice(len(partial), size=cfg.partial_points, replace=len(partial) < cfg.partial_points)
    pick.sort()
    partial_fixed = PointCloud(
        partial.points[pick], None if partial.labels is None else partial.labels[pick]
    )
    write_cloud(root / f"{family}/{split}_{index:04d}.partial.pcf", partial_fixed)
    return ManifestEntry(rel, split, family, center, scale)


def generate_dataset(out_dir, cfg: DatasetConfig, threads: int = 1) -> list[ManifestEntry]:
    """Write every shape (plus its partial), the manifest, and the
    normalization records. Byte-identical for identical (cfg, seed)."""
    root = Path(out_dir)
    jobs = []
    for family in cfg.families:
        (root / family).mkdir(parents=True, exist_ok=True)
        global_index = 0
        for split, count in cfg.split_counts():
            for i in range(count):
                jobs.append((family, split, i, global_index))
                global_index += 1

    def run(job):
        family, split, i, gi = job
        return _generate_one(root, cfg, family, split, i, gi)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(run, jobs))
    else:
        entries = [run(j) for j in jobs]

    with open(root / "manifest.tsv", "w") as f:
        for e in entries:
            f.write(f"{e.path}\t{e.split}\n")
    with open(root / "normalization.csv", "w") as f:
        f.write("path,center_x,center_y,center_z,scale\n")
        for e in entries:
            cx, cy, cz = (format_float(v) for v in e.center)
            f.write(f"{e.path},{cx},{cy},{cz},{format_float(e.scale)}\n")
    return entries


def read_manifest(data_dir) -> list[ManifestEntry]:
    root = Path(data_dir)
    manifest = root / "manifest.tsv"
    if not manifest.exists():
        raise FormatError(manifest, 0, "manifest.tsv not found")
    entries = []
    offset = 0
    for line in manifest.read_text().splitlines():
        fields = line.split("\t")
        if len(fields) != 2 or fields[1] not in ("train", "val", "test"):
            raise FormatError(manifest, offset, f"bad manifest line {line!r}")
        rel, split = fields
        if not (root / rel).exists():
            raise FormatError(manifest, offset, f"referenced file missing: {rel}")
        entries.append(ManifestEntry(rel, split, rel.split("/", 1)[0]))
        offset += len(line) + 1
    return entries


@dataclass
class LoadedShape:
    cloud: PointCloud
    partial: PointCloud | None
    family: str
    path: str


def load_split(data_dir, split: str, with_partials: bool = False,
               families: tuple | None = None) -> list[LoadedShape]:
    root = Path(data_dir)
    shapes = []
    for e in read_manifest(root):
        if e.split != split or (families is not None and e.family not in families):
            continue
        partial = None
        if with_partials:
            ppath = root / e.path.replace(".pcf", ".partial.pcf")
            partial = read_cloud(ppath) if ppath.exists() else None
        shapes.append(LoadedShape(read_cloud(root / e.path), partial, e.family, e.path))
    if not shapes:
        raise ContractError(f"no {split!r} shapes in {data_dir}")
    return shapes
