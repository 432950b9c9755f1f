"""Dataset generators and loaders emitting aligned multi-source records.

Three families: a 2-D mixture-of-Gaussians toy problem whose two sources
each perceive one coordinate, binarized digit images split into spatial or
noisy sources, and a synthetic three-camera pendulum scene.

Digit experiments read IDX files (big-endian, magic 0x803/0x801) from a
data directory. When no files are present, an offline corpus is built from
scikit-learn's bundled 8x8 handwritten digits, upscaled to 28x28 and
augmented with small shifts and rotations, then written through the same
IDX writer so both paths exercise the same loader.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDatasetError, FormatError, GeometryError, ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

DATA_DIR_ENV = "MSNVI_DATA_DIR"


def _flat_seed(seed) -> tuple:
    """Normalize possibly-nested seed tuples for SeedSequence entropy."""
    if isinstance(seed, (tuple, list)):
        out = ()
        for part in seed:
            out += _flat_seed(part)
        return out
    return (int(seed),)


@dataclass
class SourceTuple:
    """One data record: aligned source observations plus decoder targets.

    Targets coincide with sources except where the generative model
    reconstructs something else (pendulum coordinates, noise-free digits).
    """

    record_id: int
    sources: dict
    targets: dict

    def source_ids(self):
        return sorted(self.sources)

    def target_ids(self):
        return sorted(self.targets)


def stack_records(records):
    """Column-major view of a record list: id -> (N, D) arrays."""
    records = list(records)
    if not records:
        raise EmptyDatasetError("stack_records: no records")
    sources = {
        sid: np.stack([r.sources[sid] for r in records])
        for sid in records[0].source_ids()
    }
    targets = {
        tid: np.stack([r.targets[tid] for r in records])
        for tid in records[0].target_ids()
    }
    ids = np.array([r.record_id for r in records])
    return sources, targets, ids


# ---------------------------------------------------------------------------
# mixture of 8 bivariate Gaussians on the unit circle


@dataclass(frozen=True)
class Mog8Spec:
    n_components: int = 8
    radius: float = 1.0
    stddev: float = 0.1
    seed: int = 0


def mog8_means(spec: Mog8Spec = Mog8Spec()) -> np.ndarray:
    """Component means at angles 2*pi*j/8 starting from angle 0."""
    angles = 2.0 * np.pi * np.arange(spec.n_components) / spec.n_components
    return spec.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def gen_mog8(spec: Mog8Spec, n: int):
    """Samples with source 0 = x-coordinate, source 1 = y-coordinate."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    means = mog8_means(spec)
    comps = rng.integers(0, spec.n_components, size=n)
    points = means[comps] + spec.stddev * rng.standard_normal((n, 2))
    return [
        SourceTuple(
            record_id=i,
            sources={0: points[i, :1].copy(), 1: points[i, 1:].copy()},
            targets={0: points[i, :1].copy(), 1: points[i, 1:].copy()},
        )
        for i in range(n)
    ]


def mog8_test_points(spec: Mog8Spec = Mog8Spec(), rotation_deg: float = 2.0):
    """The 8 component means rotated by a small angle (defaults to 2 degrees)."""
    a = np.deg2rad(rotation_deg)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    return mog8_means(spec) @ rot.T


# ---------------------------------------------------------------------------
# IDX files


def write_idx_images(path, images: np.ndarray):
    """images: (N, rows, cols) uint8."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def _read_exact(f, nbytes, path):
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise FormatError(f"{path}: truncated, wanted {nbytes} bytes got {len(buf)}")
    return buf


def load_mnist_idx(images_path, labels_path):
    """Parse an IDX image/label pair into (pixels in [0,1], labels).

    Returns (images (N, rows*cols) float64 scaled by 1/255, labels (N,) int).
    """
    with open(images_path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{images_path}: bad magic 0x{magic:08x}")
        raw = _read_exact(f, n * rows * cols, images_path)
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)
    with open(labels_path, "rb") as f:
        magic, n_lab = struct.unpack(">ii", _read_exact(f, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{labels_path}: bad magic 0x{magic:08x}")
        labels = np.frombuffer(_read_exact(f, n_lab, labels_path), dtype=np.uint8)
    if n != n_lab:
        raise FormatError(f"count mismatch: {n} images vs {n_lab} labels")
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


# ---------------------------------------------------------------------------
# offline digit corpus (no-network fallback)


def build_digit_corpus(data_dir, n_train=10000, n_test=2000, seed=2024):
    """Write train/test IDX files from scikit-learn's bundled digits.

    The 1797 8x8 digits are bilinearly upscaled to 28x28, split into
    disjoint base sets, and augmented with integer shifts (+-2 px) and
    small rotations (+-10 deg) until the requested sizes are reached.
    Existing files are left untouched.
    """
    paths = digit_file_paths(data_dir)
    if all(os.path.exists(p) for p in paths.values()):
        return paths
    from scipy.ndimage import rotate, shift, zoom
    from sklearn.datasets import load_digits

    os.makedirs(data_dir, exist_ok=True)
    base = load_digits()
    images = base.images / 16.0  # (1797, 8, 8) in [0, 1]
    labels = base.target
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    order = rng.permutation(len(images))
    cut = int(0.85 * len(images))
    splits = {
        "train": (order[:cut], n_train),
        "test": (order[cut:], n_test),
    }

    big = zoom(images, (1.0, 3.5, 3.5), order=1)  # (1797, 28, 28)
    big = np.clip(big, 0.0, 1.0)

    for split, (idx, count) in splits.items():
        picks = idx[rng.integers(0, len(idx), size=count)]
        out = np.empty((count, 28, 28), dtype=np.uint8)
        angles = rng.uniform(-10.0, 10.0, size=count)
        shifts = rng.integers(-2, 3, size=(count, 2))
        for i, b in enumerate(picks):
            im = rotate(big[b], angles[i], reshape=False, order=1, cval=0.0)
            im = shift(im, shifts[i], order=0, cval=0.0)
            out[i] = np.clip(im * 255.0, 0, 255).astype(np.uint8)
        write_idx_images(paths[f"{split}_images"], out)
        write_idx_labels(paths[f"{split}_labels"], labels[picks])
    return paths


def digit_file_paths(data_dir):
    return {
        "train_images": os.path.join(data_dir, "train-images-idx3-ubyte"),
        "train_labels": os.path.join(data_dir, "train-labels-idx1-ubyte"),
        "test_images": os.path.join(data_dir, "t10k-images-idx3-ubyte"),
        "test_labels": os.path.join(data_dir, "t10k-labels-idx1-ubyte"),
    }


def load_digit_split(data_dir, split, limit=None, synthesize=True):
    """Load (images, labels) for 'train' or 'test', building the offline
    corpus first if the directory holds no IDX files."""
    paths = digit_file_paths(data_dir)
    img, lab = paths[f"{split}_images"], paths[f"{split}_labels"]
    if not (os.path.exists(img) and os.path.exists(lab)):
        if not synthesize:
            raise FormatError(f"no IDX files under {data_dir}")
        build_digit_corpus(data_dir)
    images, labels = load_mnist_idx(img, lab)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return images, labels


# ---------------------------------------------------------------------------
# digit variants: spatial splits, bit-flip noise, label source

VARIANT_TB = "TB"
VARIANT_QU = "QU"
VARIANT_NO = "NO"
VARIANT_LABELS = "LABELS"

BITFLIP_P = 0.05
SIDE = 28


def _quarter_index():
    """Pixel index arrays for top/bottom halves and the four quarters."""
    grid = np.arange(SIDE * SIDE).reshape(SIDE, SIDE)
    h = SIDE // 2
    halves = [grid[:h].ravel(), grid[h:].ravel()]
    quarters = [
        grid[:h, :h].ravel(),
        grid[:h, h:].ravel(),
        grid[h:, :h].ravel(),
        grid[h:, h:].ravel(),
    ]
    return halves, quarters


HALVES, QUARTERS = _quarter_index()


def binarize(intensities: np.ndarray, seed) -> np.ndarray:
    """Dynamic binarization: pixel ~ Bernoulli(intensity)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(_flat_seed(seed))))
    return (rng.random(intensities.shape) < intensities).astype(np.float64)


def make_mnist_variant(records, variant, seed):
    """Materialize one binarization of a digit set as SourceTuples.

    records: (intensities (N, 784), labels (N,)).
    TB -> 2 sources of 392, QU -> 4 of 196 (TL, TR, BL, BR),
    NO -> 4 noisy copies of 784 with the clean image as single target,
    LABELS -> TB plus a 10-dim one-hot label source (and target).
    """
    intensities, labels = records
    if intensities.shape[0] == 0:
        raise EmptyDatasetError("make_mnist_variant: empty record set")
    if intensities.shape[1] != SIDE * SIDE:
        raise ShapeError(f"expected {SIDE * SIDE} pixels, got {intensities.shape[1]}")
    bits = binarize(intensities, (seed, 0))
    n = bits.shape[0]

    if variant in (VARIANT_TB, VARIANT_LABELS):
        parts = {m: bits[:, HALVES[m]] for m in range(2)}
        if variant == VARIANT_LABELS:
            onehot = np.zeros((n, 10))
            onehot[np.arange(n), labels] = 1.0
            parts[2] = onehot
        sources = parts
        targets = dict(parts)
    elif variant == VARIANT_QU:
        sources = {m: bits[:, QUARTERS[m]] for m in range(4)}
        targets = dict(sources)
    elif variant == VARIANT_NO:
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(_flat_seed((seed, 1))))
        )
        sources = {}
        for m in range(4):
            flips = rng.random(bits.shape) < BITFLIP_P
            sources[m] = np.abs(bits - flips.astype(np.float64))
        targets = {0: bits}
    else:
        raise ValueError(f"unknown variant {variant!r}")

    return [
        SourceTuple(
            record_id=i,
            sources={m: sources[m][i] for m in sources},
            targets={t: targets[t][i] for t in targets},
        )
        for i in range(n)
    ]


class MnistVariantData:
    """Training-time view of a digit variant with per-epoch rebinarization."""

    def __init__(self, intensities, labels, variant, seed):
        self.intensities = intensities
        self.labels = labels
        self.variant = variant
        self.seed = seed
        self.n = intensities.shape[0]

    def epoch_arrays(self, epoch: int):
        recs = make_mnist_variant(
            (self.intensities, self.labels), self.variant, (self.seed, epoch)
        )
        return stack_records(recs)


class StaticData:
    """Fixed record list; every epoch sees the same arrays."""

    def __init__(self, records):
        self._stacked = stack_records(records)
        self.n = len(records)

    def epoch_arrays(self, epoch: int):
        return self._stacked


# ---------------------------------------------------------------------------
# perspective pendulum scene


def _look_at(position: np.ndarray) -> np.ndarray:
    """Rows: camera right, up, and viewing direction (towards the origin)."""
    fwd = -position / np.linalg.norm(position)
    world_up = np.array([0.0, 1.0, 0.0])
    if abs(fwd @ world_up) > 0.999:
        world_up = np.array([1.0, 0.0, 0.0])
    right = np.cross(world_up, -fwd)
    right = right / np.linalg.norm(right)
    up = np.cross(-fwd, right)
    return np.stack([right, up, fwd])


@dataclass(frozen=True)
class PendulumScene:
    radius: float = 1.0
    image_side: int = 32
    blob_sigma: float = 1.5
    noise_std: float = 0.1
    # focal length side/2 keeps the bob inside the frame for all three
    # poses at distance 2r; the blob then spans roughly 3-5 px
    focal_px: float = field(default=16.0)

    def camera_positions(self) -> np.ndarray:
        d = 2.0 * self.radius
        s = np.sin(np.pi / 4.0) * d
        c = np.cos(np.pi / 4.0) * d
        return np.array(
            [
                [0.0, 0.0, d],  # sensor 0: on the rotation (z) axis
                [0.0, -s, c],  # sensor 1: tilted 45 deg about x
                [s, 0.0, c],  # sensor 2: tilted 45 deg about y
            ]
        )


def bob_position(scene: PendulumScene, theta: float) -> np.ndarray:
    return np.array(
        [scene.radius * np.cos(theta), scene.radius * np.sin(theta), 0.0]
    )


def project_point(scene: PendulumScene, cam_index: int, point: np.ndarray):
    """Pinhole projection of a world point to pixel coordinates (px, py)."""
    cam = scene.camera_positions()[cam_index]
    basis = _look_at(cam)
    rel = basis @ (point - cam)
    x, y, depth = rel
    if depth <= 0.0:
        raise GeometryError(f"camera {cam_index}: point behind the image plane")
    half = (scene.image_side - 1) / 2.0
    px = half + scene.focal_px * x / depth
    py = half - scene.focal_px * y / depth
    if not (0.0 <= px <= scene.image_side - 1 and 0.0 <= py <= scene.image_side - 1):
        raise GeometryError(f"camera {cam_index}: projection ({px:.2f},{py:.2f}) off frame")
    return px, py


def _blob_image(scene: PendulumScene, px: float, py: float) -> np.ndarray:
    side = scene.image_side
    ys, xs = np.mgrid[0:side, 0:side]
    d2 = (xs - px) ** 2 + (ys - py) ** 2
    return np.exp(-d2 / (2.0 * scene.blob_sigma**2))


def render_pendulum(scene: PendulumScene, theta: float, rng) -> SourceTuple:
    """Three noisy camera images of the bob plus its (x, y) target."""
    point = bob_position(scene, theta)
    sources = {}
    for cam in range(3):
        px, py = project_point(scene, cam, point)
        img = _blob_image(scene, px, py)
        img = img + scene.noise_std * rng.standard_normal(img.shape)
        sources[cam] = np.clip(img, 0.0, 1.0).ravel()
    return SourceTuple(
        record_id=0, sources=sources, targets={0: point[:2].copy()}
    )


def simulate_sensor_failure(tup: SourceTuple, sensor_id: int, rng) -> SourceTuple:
    """Replace one sensor's image by pure clamped noise on a zero background."""
    if sensor_id not in tup.sources:
        raise ShapeError(f"unknown sensor {sensor_id}")
    noise = rng.standard_normal(tup.sources[sensor_id].shape)
    failed = np.clip(0.1 * noise, 0.0, 1.0)
    sources = dict(tup.sources)
    sources[sensor_id] = failed
    return SourceTuple(tup.record_id, sources, dict(tup.targets))


def gen_pendulum(scene: PendulumScene, n: int, seed: int):
    """Training tuples at uniformly random angles."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    records = []
    for i in range(n):
        theta = rng.uniform(0.0, 2.0 * np.pi)
        rec = render_pendulum(scene, theta, rng)
        rec.record_id = i
        records.append(rec)
    return records


def data_dir(default="data"):
    return os.environ.get(DATA_DIR_ENV, default)
