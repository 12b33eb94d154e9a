"""Synthetic point-cloud generation, degradation, normalization, and file I/O.

Clouds are plain (n, 3) float64 arrays wrapped in PointCloud. Five
procedural surface classes (sphere, box, cylinder, torus, two_planes)
stand in for object categories; incompleteness is a random half-space
crop of the complete surface. Everything is a pure function of
(spec, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    CloudParseError,
    ConfigurationError,
    ContractError,
    DegenerateCropError,
    ValidationError,
)
from .seeding import derive_seed

SHAPE_KINDS = ("sphere", "box", "cylinder", "torus", "two_planes")

# Canonical torus minor/major radius ratio; the per-axis scale stretches
# the whole surface afterwards.
_TORUS_MINOR = 0.35


@dataclass(frozen=True)
class PointCloud:
    """A finite set of 3D points in normalized coordinates.

    points: (n, 3) float64 array, n >= 1, all coordinates finite.
    class_label: optional small integer tagging the object class.
    """

    points: np.ndarray
    class_label: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"expected (n, 3) points, got shape {pts.shape}")
        if pts.shape[0] == 0:
            raise ValidationError("empty cloud")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("non-finite coordinate in cloud")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, class_label=self.class_label)


@dataclass(frozen=True)
class ShapeSpec:
    """Recipe for one procedural surface sample."""

    kind: str
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    n_points: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ConfigurationError(
                f"unknown shape kind {self.kind!r}; choose from {SHAPE_KINDS}"
            )
        if self.n_points < 8:
            raise ConfigurationError("n_points must be >= 8")
        if len(self.scale) != 3 or any(s <= 0 for s in self.scale):
            raise ConfigurationError("scale must be three positive reals")


@dataclass(frozen=True)
class CloudPair:
    """An incomplete cloud with its ground-truth completion.

    The incomplete cloud lives in the complete cloud's normalized frame
    (it is not re-normalized) so its points stay on the same surface.
    """

    incomplete: PointCloud
    complete_gt: PointCloud

    @property
    def class_label(self) -> int | None:
        return self.complete_gt.class_label


@dataclass
class LabeledDataset:
    """Cloud pairs with per-class proportions on each side."""

    pairs: list[CloudPair]
    class_weights_source: dict[int, float] = field(default_factory=dict)
    class_weights_target: dict[int, float] = field(default_factory=dict)
    class_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.pairs:
            raise ValidationError("dataset must contain at least one pair")
        if not self.class_weights_source:
            self.class_weights_source = self._proportions()
        if not self.class_weights_target:
            self.class_weights_target = dict(self.class_weights_source)
        for weights in (self.class_weights_source, self.class_weights_target):
            total = sum(weights.values())
            if any(w < 0 for w in weights.values()) or abs(total - 1.0) > 1e-9:
                raise ValidationError("class weights must be nonnegative and sum to 1")

    def _proportions(self) -> dict[int, float]:
        counts: dict[int, int] = {}
        for p in self.pairs:
            label = p.class_label if p.class_label is not None else 0
            counts[label] = counts.get(label, 0) + 1
        n = len(self.pairs)
        return {k: c / n for k, c in sorted(counts.items())}

    @property
    def labels(self) -> list[int]:
        return [p.class_label if p.class_label is not None else 0 for p in self.pairs]


def normalize_unit(cloud: PointCloud) -> PointCloud:
    """Center the bounding box at the origin and scale it into [-1, 1]^3.

    Idempotent: a cloud whose recomputed transform is identity (up to one
    ulp) is returned unchanged, so normalize(normalize(c)) == normalize(c)
    bitwise.
    """
    pts = cloud.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    scale = float(half.max())
    if scale == 0.0:
        return cloud.with_points(np.zeros_like(pts))
    if np.all(np.abs(center) <= 1e-12 * scale) and abs(scale - 1.0) <= 1e-12:
        return cloud
    out = (pts - center) / scale
    # fp round-off can push an extreme coordinate one ulp past 1
    np.clip(out, -1.0, 1.0, out=out)
    return cloud.with_points(out)


def _canonical_surface(kind: str, n: int, rng: np.random.Generator):
    """Sample points and unit normals on the canonical (unit-scale) surface."""
    if kind == "sphere":
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v.copy(), v.copy()
    if kind == "box":
        # 6 faces of [-1,1]^3, equal canonical area
        face = rng.integers(0, 6, size=n)
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        for a in range(3):
            m = axis == a
            other = [i for i in range(3) if i != a]
            pts[m, a] = sign[m]
            pts[np.ix_(m, other)] = uv[m]
            nrm[m, a] = sign[m]
        return pts, nrm
    if kind == "cylinder":
        # radius 1, half-height 1: lateral area 4*pi, two caps pi each
        areas = np.array([4.0, 1.0, 1.0]) * np.pi
        part = rng.choice(3, size=n, p=areas / areas.sum())
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        lat = part == 0
        pts[lat, 0] = np.cos(theta[lat])
        pts[lat, 1] = np.sin(theta[lat])
        pts[lat, 2] = rng.uniform(-1.0, 1.0, size=int(lat.sum()))
        nrm[lat, 0] = pts[lat, 0]
        nrm[lat, 1] = pts[lat, 1]
        for part_id, z in ((1, 1.0), (2, -1.0)):
            m = part == part_id
            r = np.sqrt(rng.uniform(0.0, 1.0, size=int(m.sum())))
            pts[m, 0] = r * np.cos(theta[m])
            pts[m, 1] = r * np.sin(theta[m])
            pts[m, 2] = z
            nrm[m, 2] = z
        return pts, nrm
    if kind == "torus":
        # major radius 1, minor _TORUS_MINOR; area element ~ (1 + r*cos(phi))
        out_pts = np.empty((0, 3))
        out_phi = np.empty(0)
        out_theta = np.empty(0)
        r = _TORUS_MINOR
        while out_pts.shape[0] < n:
            m = max(2 * (n - out_pts.shape[0]), 64)
            phi = rng.uniform(0.0, 2.0 * np.pi, size=m)
            theta = rng.uniform(0.0, 2.0 * np.pi, size=m)
            accept = rng.uniform(0.0, 1.0, size=m) < (1.0 + r * np.cos(phi)) / (1.0 + r)
            phi, theta = phi[accept], theta[accept]
            ring = 1.0 + r * np.cos(phi)
            pts = np.stack(
                [ring * np.cos(theta), ring * np.sin(theta), r * np.sin(phi)], axis=1
            )
            out_pts = np.concatenate([out_pts, pts])
            out_phi = np.concatenate([out_phi, phi])
            out_theta = np.concatenate([out_theta, theta])
        phi, theta = out_phi[:n], out_theta[:n]
        nrm = np.stack(
            [np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)],
            axis=1,
        )
        return out_pts[:n], nrm
    if kind == "two_planes":
        # two parallel unit squares at z = +-0.5
        side = np.where(rng.uniform(size=n) < 0.5, 0.5, -0.5)
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        pts = np.column_stack([uv, side])
        nrm = np.zeros((n, 3))
        nrm[:, 2] = np.sign(side)
        return pts, nrm
    raise ConfigurationError(f"unknown shape kind {kind!r}")


def generate_shape(spec: ShapeSpec) -> PointCloud:
    """Sample points uniformly on the shape surface, normalized to the unit box.

    Anisotropic per-axis scaling is corrected by rejection on the surface
    area element so the output stays area-uniform.
    """
    rng = np.random.default_rng(spec.seed)
    s = np.asarray(spec.scale, dtype=np.float64)
    # adjugate diagonal: area scaling of a surface patch with unit normal nrm
    adj = np.array([s[1] * s[2], s[0] * s[2], s[0] * s[1]])
    w_max = float(adj.max())
    accepted = np.empty((0, 3))
    while accepted.shape[0] < spec.n_points:
        m = max(2 * (spec.n_points - accepted.shape[0]), 64)
        pts, nrm = _canonical_surface(spec.kind, m, rng)
        w = np.linalg.norm(nrm * adj, axis=1) / w_max
        keep = rng.uniform(size=m) < w
        accepted = np.concatenate([accepted, pts[keep] * s])
    return normalize_unit(PointCloud(accepted[: spec.n_points]))


def crop_halfspace(cloud: PointCloud, normal: Sequence[float], offset: float) -> PointCloud:
    """Keep points p with <p, normal> <= offset, preserving order."""
    n = np.asarray(normal, dtype=np.float64)
    if n.shape != (3,) or not np.any(n != 0.0):
        raise ContractError("normal must be a nonzero 3-vector")
    keep = cloud.points @ n <= offset
    if not np.any(keep):
        raise DegenerateCropError("half-space crop removed every point; re-draw the plane")
    return cloud.with_points(cloud.points[keep])


def resample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Draw exactly n points; with replacement only when n > |cloud|."""
    if n <= 0:
        raise ConfigurationError("resample size must be positive")
    rng = np.random.default_rng(seed)
    m = len(cloud)
    idx = rng.choice(m, size=n, replace=n > m)
    return cloud.with_points(cloud.points[idx])


def random_crop_pair(
    complete: PointCloud,
    rng: np.random.Generator,
    kept_fraction_range: tuple[float, float] = (0.4, 0.7),
) -> PointCloud:
    """Crop a complete cloud by a random half-space.

    The offset is set to the order statistic of the projections matching a
    kept fraction drawn from kept_fraction_range, so the result never
    degenerates and no plane re-drawing loop is needed.
    """
    normal = rng.normal(size=3)
    normal /= np.linalg.norm(normal)
    frac = rng.uniform(*kept_fraction_range)
    proj = complete.points @ normal
    k = max(1, int(np.ceil(frac * len(complete))))
    offset = float(np.sort(proj)[k - 1])
    return crop_halfspace(complete, normal, offset)


def make_dataset(
    classes: Sequence[str],
    pairs_per_class: int,
    n_complete: int = 256,
    n_incomplete: int = 256,
    seed: int = 0,
    scale_jitter: float = 0.25,
) -> LabeledDataset:
    """Build a labeled synthetic corpus of (incomplete, complete) pairs.

    Per-pair scale jitter keeps instances within a class distinct. Both
    clouds of a pair are resampled to fixed sizes; the incomplete cloud is
    a half-space crop of the complete surface (kept fraction 0.4-0.7) and
    shares its normalized frame.
    """
    if pairs_per_class <= 0:
        raise ConfigurationError("pairs_per_class must be positive")
    pairs = []
    names = {}
    for label, kind in enumerate(classes):
        names[label] = kind
        for i in range(pairs_per_class):
            pair_seed = derive_seed(seed, "pair", kind, i)
            rng = np.random.default_rng(pair_seed)
            scale = tuple(1.0 + scale_jitter * rng.uniform(-1.0, 1.0, size=3))
            spec = ShapeSpec(
                kind=kind,
                scale=scale,
                n_points=max(4 * n_complete, 512),
                seed=derive_seed(pair_seed, "surface"),
            )
            complete = generate_shape(spec)
            incomplete = random_crop_pair(complete, rng)
            complete = resample(complete, n_complete, derive_seed(pair_seed, "rs_c"))
            incomplete = resample(incomplete, n_incomplete, derive_seed(pair_seed, "rs_i"))
            pairs.append(
                CloudPair(
                    incomplete=replace(incomplete, class_label=label),
                    complete_gt=replace(complete, class_label=label),
                )
            )
    return LabeledDataset(pairs=pairs, class_names=names)


# ---------------------------------------------------------------------------
# File I/O: XYZ ASCII (one "x y z" per line, '#' comments) and PLY ASCII import


def write_cloud(cloud: PointCloud, path: str | Path) -> None:
    path = Path(path)
    lines = ["%.17g %.17g %.17g" % (p[0], p[1], p[2]) for p in cloud.points]
    path.write_text("\n".join(lines) + "\n")


def read_cloud(path: str | Path, class_label: int | None = None) -> PointCloud:
    """Read an XYZ or PLY ASCII cloud file."""
    path = Path(path)
    text = path.read_text()
    first = text.lstrip().splitlines()[0].strip() if text.strip() else ""
    if first == "ply":
        pts = _parse_ply(text, path)
    else:
        pts = _parse_xyz(text, path)
    if len(pts) == 0:
        raise ValidationError(f"{path}: empty cloud")
    arr = np.asarray(pts, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{path}: non-finite coordinate")
    return PointCloud(arr, class_label=class_label)


def _parse_xyz(text: str, path: Path) -> list[list[float]]:
    pts = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 3:
            raise CloudParseError(
                f"{path}: line {lineno}: expected 3 fields, got {len(fields)}"
            )
        try:
            pts.append([float(f) for f in fields])
        except ValueError:
            raise CloudParseError(f"{path}: line {lineno}: malformed number") from None
    return pts


def _parse_ply(text: str, path: Path) -> list[list[float]]:
    lines = text.splitlines()
    n_vertex = None
    props: list[str] = []
    body_start = None
    in_vertex_element = False
    for i, raw in enumerate(lines):
        line = raw.strip()
        if i == 0:
            continue
        if line.startswith("format"):
            if "ascii" not in line:
                raise CloudParseError(f"{path}: only ASCII PLY is supported")
        elif line.startswith("element"):
            fields = line.split()
            in_vertex_element = fields[1] == "vertex"
            if in_vertex_element:
                n_vertex = int(fields[2])
        elif line.startswith("property") and in_vertex_element:
            props.append(line.split()[-1])
        elif line == "end_header":
            body_start = i + 1
            break
    if n_vertex is None or body_start is None:
        raise CloudParseError(f"{path}: missing vertex element or end_header")
    try:
        cols = [props.index(axis) for axis in ("x", "y", "z")]
    except ValueError:
        raise CloudParseError(f"{path}: vertex element lacks x/y/z properties") from None
    pts = []
    for lineno in range(body_start, body_start + n_vertex):
        if lineno >= len(lines):
            raise CloudParseError(f"{path}: truncated vertex data")
        fields = lines[lineno].split()
        if len(fields) < len(props):
            raise CloudParseError(f"{path}: line {lineno + 1}: short vertex row")
        try:
            pts.append([float(fields[c]) for c in cols])
        except ValueError:
            raise CloudParseError(f"{path}: line {lineno + 1}: malformed number") from None
    return pts


def save_dataset(dataset: LabeledDataset, out_dir: str | Path) -> list[Path]:
    """Write clouds as XYZ files plus an index.csv; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    index_rows = []
    for i, pair in enumerate(dataset.pairs):
        label = pair.class_label if pair.class_label is not None else 0
        name = dataset.class_names.get(label, str(label))
        p_inc = out_dir / f"{i:04d}_{name}_incomplete.xyz"
        p_com = out_dir / f"{i:04d}_{name}_complete.xyz"
        write_cloud(pair.incomplete, p_inc)
        write_cloud(pair.complete_gt, p_com)
        written += [p_inc, p_com]
        index_rows.append((p_inc.name, p_com.name, label))
    index = out_dir / "index.csv"
    with index.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_incomplete", "path_complete", "class"])
        w.writerows(index_rows)
    written.append(index)
    return written


def load_dataset(in_dir: str | Path) -> LabeledDataset:
    in_dir = Path(in_dir)
    index = in_dir / "index.csv"
    if not index.exists():
        raise ValidationError(f"{index} not found")
    pairs = []
    with index.open() as fh:
        for row in csv.DictReader(fh):
            label = int(row["class"])
            pairs.append(
                CloudPair(
                    incomplete=read_cloud(in_dir / row["path_incomplete"], label),
                    complete_gt=read_cloud(in_dir / row["path_complete"], label),
                )
            )
    return LabeledDataset(pairs=pairs)
