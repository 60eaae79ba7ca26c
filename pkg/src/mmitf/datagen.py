"""Synthetic tabletop scenes, coordinate augmentation and JSONL persistence."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator

import numpy as np

from . import kernels
from .features import (
    INDEX_FINGER_DIP,
    INDEX_FINGER_TIP,
    N_LANDMARKS,
    NON_RELATION,
    GeometryError,
    HandPose,
    ImageDims,
    ObjectSequence,
    RelationSequence,
    build_object_sequence,
    build_relation_sequence,
)

DEFAULT_DIMS = ImageDims(1280.0, 720.0)

# Fractions of the frame. The participant sits across the table, i.e. near
# the top edge of the table region.
TABLE_TOP = 0.4
TABLE_MARGIN = 0.03
REST_ZONE = (0.10, 0.25, 0.90, 0.45)  # x0, y0, x1, y1
MIN_SEPARATION = 0.05  # of image width
MAX_PLACEMENT_TRIES = 1000

# Hand templates in a local frame: index fingertip at the origin, the
# DIP->tip direction along +x. Units are pixels at scale 1.
POINTING_TEMPLATE = np.array(
    [
        (-130.0, 0.0),  # wrist
        (-115.0, 18.0), (-95.0, 30.0), (-78.0, 34.0), (-65.0, 32.0),  # thumb
        (-75.0, 0.0), (-45.0, 0.0), (-20.0, 0.0), (0.0, 0.0),  # index, extended
        (-78.0, -12.0), (-60.0, -20.0), (-68.0, -22.0), (-78.0, -18.0),  # middle, curled
        (-82.0, -24.0), (-66.0, -31.0), (-74.0, -33.0), (-84.0, -29.0),  # ring
        (-88.0, -34.0), (-75.0, -40.0), (-82.0, -42.0), (-90.0, -38.0),  # pinky
    ]
)
RESTING_TEMPLATE = np.array(
    [
        (-100.0, 0.0),
        (-88.0, 18.0), (-72.0, 28.0), (-58.0, 30.0), (-48.0, 28.0),
        (-50.0, 8.0), (-32.0, 10.0), (-28.0, 20.0), (-38.0, 24.0),  # index, curled
        (-52.0, -4.0), (-34.0, -5.0), (-30.0, 5.0), (-40.0, 9.0),
        (-56.0, -16.0), (-40.0, -18.0), (-36.0, -9.0), (-45.0, -5.0),
        (-62.0, -27.0), (-49.0, -30.0), (-45.0, -22.0), (-53.0, -18.0),
    ]
)

# Augmentation constants.
N_SHIFTS = 8
N_ROTATIONS = 8
N_NOISE_LEVELS = 4
SHIFT_FRACTION = 0.10
ROTATION_DEG = (-20.0, -15.0, -10.0, -5.0, 5.0, 10.0, 15.0, 20.0)
NOISE_SIGMAS = (0.75, 1.5, 2.25, 3.0)
NOISE_FRACTION = 0.3
MAX_SHIFT_TRIES = 10
MULTIPLICITY = 2 * N_SHIFTS * N_SHIFTS * N_ROTATIONS * N_NOISE_LEVELS


@dataclass(eq=False)
class Sample:
    dims: ImageDims
    hand: HandPose
    objects: ObjectSequence
    targets: tuple[int, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = tuple(sorted({int(i) for i in self.targets}))
        n = self.objects.n_objects
        if not t:
            raise ValueError("targets: must be nonempty")
        if t[0] < 0 or t[-1] > n:
            raise ValueError(f"targets: index out of range 0..{n}: {list(t)}")
        if n in t and len(t) > 1:
            raise ValueError("targets: the non-object index cannot be combined with object targets")
        self.targets = t

    @property
    def n_objects(self) -> int:
        return self.objects.n_objects

    @property
    def resting(self) -> bool:
        return self.targets == (self.objects.n_objects,)

    @cached_property
    def relations(self) -> RelationSequence:
        return build_relation_sequence(self.hand, self.objects)

    @property
    def scene(self):
        return self.meta.get("scene")

    def target_points(self) -> np.ndarray:
        return self.objects.tokens()[list(self.targets)]

    def __eq__(self, other):
        return (
            isinstance(other, Sample)
            and self.dims == other.dims
            and self.hand == other.hand
            and self.objects == other.objects
            and self.targets == other.targets
            and self.meta == other.meta
        )


@dataclass(frozen=True)
class AugmentSpec:
    mirror: bool
    shift_x_idx: int
    shift_y_idx: int
    rotation_idx: int
    noise_level: int

    def as_list(self) -> list:
        return [int(self.mirror), self.shift_x_idx, self.shift_y_idx, self.rotation_idx, self.noise_level]


def all_augment_specs() -> list[AugmentSpec]:
    return [
        AugmentSpec(bool(m), sx, sy, r, n)
        for m, sx, sy, r, n in itertools.product(
            range(2), range(N_SHIFTS), range(N_SHIFTS), range(N_ROTATIONS), range(N_NOISE_LEVELS)
        )
    ]


# --------------------------------------------------------------------------
# scene and hand synthesis
# --------------------------------------------------------------------------


def table_region(dims: ImageDims) -> tuple[float, float, float, float]:
    """(x0, y0, x1, y1) of the table area: the lower 60% of the frame."""
    return (0.0, TABLE_TOP * dims.H, dims.W, dims.H)


def generate_scene(n_objects: int, dims: ImageDims, rng: np.random.Generator) -> np.ndarray:
    """Object centroids in the table region with a minimum pairwise gap."""
    if n_objects < 1:
        raise ValueError(f"n_objects must be >= 1, got {n_objects}")
    x0, y0, x1, y1 = table_region(dims)
    mx, my = TABLE_MARGIN * dims.W, TABLE_MARGIN * dims.H
    min_d = MIN_SEPARATION * dims.W
    placed: list[np.ndarray] = []
    tries = 0
    while len(placed) < n_objects:
        if tries >= MAX_PLACEMENT_TRIES:
            raise GeometryError(f"could not place {n_objects} objects after {MAX_PLACEMENT_TRIES} tries")
        tries += 1
        c = np.array([rng.uniform(x0 + mx, x1 - mx), rng.uniform(y0 + my, y1 - my)])
        if all(np.hypot(*(c - p)) >= min_d for p in placed):
            placed.append(c)
    return np.array(placed)


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _place_template(template: np.ndarray, origin, direction: float, scale: float, left: bool) -> np.ndarray:
    local = template * scale
    if left:
        local = local * np.array([1.0, -1.0])
    return local @ _rot(direction).T + np.asarray(origin)


def synth_hand(
    pointing: bool,
    target=None,
    jitter_deg: float = 0.0,
    rng: np.random.Generator | None = None,
    dims: ImageDims = DEFAULT_DIMS,
    left: bool = False,
    max_tries: int = 200,
) -> HandPose:
    """Template hand placed in the frame.

    A pointing hand aims its DIP->tip ray at ``target`` up to a uniform
    angular error within +-jitter_deg. A resting hand lies in the rest zone.
    """
    rng = rng if rng is not None else np.random.default_rng()
    scale = rng.uniform(0.85, 1.15)
    if not pointing:
        x0, y0, x1, y1 = (REST_ZONE[0] * dims.W, REST_ZONE[1] * dims.H, REST_ZONE[2] * dims.W, REST_ZONE[3] * dims.H)
        for _ in range(max_tries):
            direction = math.radians(90.0 + rng.uniform(-45.0, 45.0))
            lm = _place_template(RESTING_TEMPLATE, (0.0, 0.0), direction, scale, left)
            lo, hi = lm.min(axis=0), lm.max(axis=0)
            if hi[0] - lo[0] > x1 - x0 or hi[1] - lo[1] > y1 - y0:
                continue
            shift = np.array([rng.uniform(x0 - lo[0], x1 - hi[0]), rng.uniform(y0 - lo[1], y1 - hi[1])])
            return HandPose(lm + shift, dims)
        raise GeometryError("could not fit a resting hand inside the rest zone")

    if target is None:
        raise ValueError("pointing hand needs a target")
    target = np.asarray(target, dtype=np.float64)
    if not dims.contains(target):
        raise GeometryError(f"target {tuple(target)} outside the image")
    for attempt in range(max_tries):
        aim = math.radians(rng.uniform(45.0, 135.0))  # fingertip -> target, pointing away from the participant
        reach = rng.uniform(40.0, 250.0) * (1.0 - attempt / max_tries)
        delta = math.radians(rng.uniform(-jitter_deg, jitter_deg)) if jitter_deg > 0 else 0.0
        tip = target - reach * np.array([math.cos(aim), math.sin(aim)])
        lm = _place_template(POINTING_TEMPLATE, tip, aim + delta, scale, left)
        if dims.contains(lm) and reach > 1.0:
            return HandPose(lm, dims)
    raise GeometryError(f"could not place a pointing hand for target {tuple(target)}")


def generate_corpus(
    n_scenes: int = 30,
    n_objects: int = 10,
    seed: int = 0,
    dims: ImageDims = DEFAULT_DIMS,
    jitter_deg: float = 5.0,
    n_single: int = 7,
    n_bimanual: int = 2,
    n_resting: int = 8,
) -> list[Sample]:
    """Base corpus mirroring the recorded protocol: per scene, single-object
    pointing tasks, bi-manual tasks (split into one sample per hand) and
    resting hands."""
    if n_scenes < 1 or n_objects < 1:
        raise ValueError("n_scenes and n_objects must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(n_scenes)
    out: list[Sample] = []
    for scene, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        objects = build_object_sequence(generate_scene(n_objects, dims, rng))
        frame = 0

        def add(hand, targets, side, task):
            out.append(
                Sample(dims, hand, objects, targets, {"scene": scene, "frame": frame, "hand": side, "task": task})
            )

        for _ in range(n_single):
            t = int(rng.integers(n_objects))
            left = bool(rng.integers(2))
            add(synth_hand(True, objects.centroids[t], jitter_deg, rng, dims, left), (t,), "left" if left else "right", "single")
            frame += 1
        for _ in range(n_bimanual):
            if n_objects < 2:
                break
            a, b = (int(i) for i in rng.choice(n_objects, size=2, replace=False))
            add(synth_hand(True, objects.centroids[a], jitter_deg, rng, dims, False), (a,), "right", "bimanual")
            add(synth_hand(True, objects.centroids[b], jitter_deg, rng, dims, True), (b,), "left", "bimanual")
            frame += 1
        for _ in range(n_resting):
            left = bool(rng.integers(2))
            add(synth_hand(False, None, 0.0, rng, dims, left), (n_objects,), "left" if left else "right", "resting")
            frame += 1
    return out


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------


def _mirror_mat(dims: ImageDims, mirror: bool) -> np.ndarray:
    m = np.eye(3)
    if mirror:
        m[0, 0] = -1.0
        m[0, 2] = dims.W
    return m


def _rotation_mat(dims: ImageDims, angle_rad: float) -> np.ndarray:
    cx, cy = dims.W / 2.0, dims.H / 2.0
    m = np.eye(3)
    m[:2, :2] = _rot(angle_rad)
    m[:2, 2] = np.array([cx, cy]) - m[:2, :2] @ np.array([cx, cy])
    return m


def _in_frame(pts: np.ndarray, dims: ImageDims) -> bool:
    return dims.contains(pts)


def _apply(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ m[:2, :2].T + m[:2, 2]


@dataclass
class AugmentPlan:
    """Per-sample magnitudes behind the 8 shift and 8 rotation slots."""

    rotations: np.ndarray  # (8,) radians, possibly shrunk to stay in frame
    shifts_x: np.ndarray  # (8,)
    shifts_y: np.ndarray  # (8,)

    def matrices(self, dims: ImageDims) -> np.ndarray:
        """2x3 maps for every (mirror, sx, sy, rot) combination, in enumeration order."""
        mats = np.empty((2, N_SHIFTS, N_SHIFTS, N_ROTATIONS, 2, 3))
        for mi in range(2):
            mir = _mirror_mat(dims, bool(mi))
            for ri in range(N_ROTATIONS):
                base = _rotation_mat(dims, self.rotations[ri]) @ mir
                for xi in range(N_SHIFTS):
                    for yi in range(N_SHIFTS):
                        m = base[:2].copy()
                        m[0, 2] += self.shifts_x[xi]
                        m[1, 2] += self.shifts_y[yi]
                        mats[mi, xi, yi, ri] = m
        return mats.reshape(-1, 2, 3)


def plan_augmentation(points: np.ndarray, dims: ImageDims, rng: np.random.Generator) -> AugmentPlan:
    """Draw shift offsets and fix rotation magnitudes so every geometric
    variant of ``points`` stays inside the frame."""
    mirrors = [_apply(_mirror_mat(dims, m), points) for m in (False, True)]
    rotations = np.empty(N_ROTATIONS)
    for k, deg in enumerate(ROTATION_DEG):
        a = math.radians(deg)
        for t in range(MAX_SHIFT_TRIES + 1):
            cand = a * (1.0 - t / MAX_SHIFT_TRIES)
            r = _rotation_mat(dims, cand)
            if all(_in_frame(_apply(r, p), dims) for p in mirrors):
                break
        rotations[k] = cand
    variants = np.concatenate(
        [_apply(_rotation_mat(dims, a), p) for a in rotations for p in mirrors], axis=0
    )
    lo = -variants.min(axis=0)
    hi = np.array([dims.W, dims.H]) - variants.max(axis=0)
    span = SHIFT_FRACTION * np.array([dims.W, dims.H])

    def draw(axis):
        out = np.empty(N_SHIFTS)
        for i in range(N_SHIFTS):
            for _ in range(MAX_SHIFT_TRIES):
                v = rng.uniform(-span[axis], span[axis])
                if lo[axis] <= v <= hi[axis]:
                    break
            out[i] = min(max(v, lo[axis]), hi[axis])
        return out

    sx = draw(0)
    sy = draw(1)
    return AugmentPlan(rotations, sx, sy)


def _noise(points: np.ndarray, sigmas: np.ndarray, rng: np.random.Generator, dims: ImageDims) -> np.ndarray:
    """Perturb ceil(30%) of the points of each variant; points is (V, K, 2)."""
    V, K, _ = points.shape
    m = math.ceil(NOISE_FRACTION * K)
    if m == 0:
        return points
    pick = np.argpartition(rng.random((V, K)), m - 1, axis=1)[:, :m]
    offs = rng.standard_normal((V, m, 2)) * sigmas[:, None, None]
    out = points.copy()
    rows = np.arange(V)[:, None]
    out[rows, pick] += offs
    np.clip(out[..., 0], 0.0, dims.W, out=out[..., 0])
    np.clip(out[..., 1], 0.0, dims.H, out=out[..., 1])
    return out


@dataclass
class AugmentedBatch:
    """All variants of one base sample, held as arrays."""

    base: Sample
    specs: np.ndarray  # (V, 5) int: mirror, sx, sy, rot, noise
    landmarks: np.ndarray  # (V, 21, 2)
    centroids: np.ndarray  # (V, N, 2)
    angles: np.ndarray  # (V, N+1)

    def __len__(self) -> int:
        return len(self.specs)

    def sample(self, i: int) -> Sample:
        b = self.base
        meta = dict(b.meta)
        meta["aug"] = [int(v) for v in self.specs[i]]
        return Sample(b.dims, HandPose(self.landmarks[i]), build_object_sequence(self.centroids[i]), b.targets, meta)

    def samples(self) -> list[Sample]:
        return [self.sample(i) for i in range(len(self))]


def augment_batch(
    sample: Sample,
    rng: np.random.Generator,
    indices=None,
    noise_scale: float = 1.0,
) -> AugmentedBatch:
    """Materialise the requested augmentation variants (default: all 4096)."""
    dims = sample.dims
    n_obj = sample.n_objects
    points = np.vstack([sample.hand.landmarks, sample.objects.centroids])
    plan = plan_augmentation(points, dims, rng)
    geo = kernels.apply_affine(points, plan.matrices(dims))  # (1024, K, 2)
    spec_grid = np.array(
        list(itertools.product(range(2), range(N_SHIFTS), range(N_SHIFTS), range(N_ROTATIONS), range(N_NOISE_LEVELS))),
        dtype=np.int64,
    )
    if indices is None:
        indices = np.arange(MULTIPLICITY)
    indices = np.asarray(indices, dtype=np.int64)
    specs = spec_grid[indices]
    pts = geo[indices // N_NOISE_LEVELS]
    sigmas = np.asarray(NOISE_SIGMAS)[specs[:, 4]] * noise_scale
    if noise_scale != 0.0:
        pts = _noise(pts, sigmas, rng, dims)
    lms = pts[:, :N_LANDMARKS]
    cents = pts[:, N_LANDMARKS:]
    if n_obj:
        ang, _ = kernels.relation_angles(lms[:, INDEX_FINGER_TIP], lms[:, INDEX_FINGER_DIP], cents)
    else:
        ang = np.zeros((len(indices), 0))
    angles = np.concatenate([ang, np.full((len(indices), 1), NON_RELATION)], axis=1)
    return AugmentedBatch(sample, specs, lms, cents, angles)


def enumerate_augmentations(sample: Sample, rng: np.random.Generator, noise_scale: float = 1.0) -> list[Sample]:
    return augment_batch(sample, rng, noise_scale=noise_scale).samples()


def iter_augmented(samples: Iterable[Sample], seed: int, noise_scale: float = 1.0) -> Iterator[AugmentedBatch]:
    """Full 4096x expansion, one array batch per base sample, each with
    its own RNG stream derived from ``seed``."""
    samples = list(samples)
    for s, ss in zip(samples, np.random.SeedSequence(seed).spawn(len(samples))):
        yield augment_batch(s, np.random.default_rng(ss), noise_scale=noise_scale)


def light_augment(
    samples: Iterable[Sample], per_sample: int, seed: int, max_noise_level: int = 3, include_base: bool = True
) -> list[Sample]:
    """Random subset of augmentation variants per base sample."""
    samples = list(samples)
    allowed = np.array(
        [i for i in range(MULTIPLICITY) if i % N_NOISE_LEVELS <= max_noise_level], dtype=np.int64
    )
    out: list[Sample] = []
    for s, ss in zip(samples, np.random.SeedSequence(seed).spawn(len(samples))):
        rng = np.random.default_rng(ss)
        if include_base:
            out.append(s)
        if per_sample > 0:
            idx = np.sort(rng.choice(allowed, size=per_sample, replace=False))
            out.extend(augment_batch(s, rng, idx).samples())
    return out


def add_noise(sample: Sample, level: int, rng: np.random.Generator, sigma: float | None = None) -> Sample:
    """Gaussian offsets on ceil(30%) of the hand and object points."""
    if not 0 <= level < N_NOISE_LEVELS:
        raise ValueError(f"noise level must be in 0..{N_NOISE_LEVELS - 1}, got {level}")
    s = NOISE_SIGMAS[level] if sigma is None else sigma
    points = np.vstack([sample.hand.landmarks, sample.objects.centroids])[None]
    noisy = _noise(points, np.array([s]), rng, sample.dims)[0]
    return Sample(
        sample.dims,
        HandPose(noisy[:N_LANDMARKS]),
        build_object_sequence(noisy[N_LANDMARKS:]),
        sample.targets,
        dict(sample.meta),
    )


def transform_sample(sample: Sample, mat: np.ndarray, dims: ImageDims | None = None) -> Sample:
    """Apply one 2x3 (or 3x3) affine map jointly to hand and objects."""
    m = np.asarray(mat, dtype=np.float64)
    lm = sample.hand.landmarks @ m[:2, :2].T + m[:2, 2]
    c = sample.objects.centroids @ m[:2, :2].T + m[:2, 2]
    return Sample(dims or sample.dims, HandPose(lm), build_object_sequence(c), sample.targets, dict(sample.meta))


def mirror_sample(sample: Sample) -> Sample:
    return transform_sample(sample, _mirror_mat(sample.dims, True))


# --------------------------------------------------------------------------
# JSONL
# --------------------------------------------------------------------------


class DatasetFormatError(ValueError):
    pass


def sample_to_json(s: Sample) -> dict:
    return {
        "dims": [s.dims.W, s.dims.H],
        "hand": s.hand.landmarks.tolist(),
        "objects": s.objects.centroids.tolist(),
        "targets": [] if s.resting else list(s.targets),
        "resting": s.resting,
        "meta": s.meta,
    }


def dumps_sample(s: Sample) -> str:
    return json.dumps(sample_to_json(s), sort_keys=True, separators=(",", ":"))


def save_jsonl(samples: Iterable[Sample], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(dumps_sample(s))
            fh.write("\n")
            n += 1
    return n


def _points(value, name: str, expect: int | None = None) -> np.ndarray:
    if not isinstance(value, list):
        raise DatasetFormatError(f"{name}: expected a list of [x, y] pairs")
    if expect is not None and len(value) != expect:
        raise DatasetFormatError(f"{name}: expected {expect}, got {len(value)}")
    try:
        arr = np.array(value, dtype=np.float64).reshape(len(value), 2)
    except (TypeError, ValueError):
        raise DatasetFormatError(f"{name}: every entry must be an [x, y] pair of numbers") from None
    if not np.all(np.isfinite(arr)):
        raise DatasetFormatError(f"{name}: non-finite coordinate")
    return arr


def _targets(value, resting, n: int, name: str) -> tuple[int, ...]:
    if not isinstance(value, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in value):
        raise DatasetFormatError(f"{name}: expected a list of integer object indices")
    if not isinstance(resting, bool):
        raise DatasetFormatError("resting: expected a boolean")
    if resting:
        if value not in ([], [n]):
            raise DatasetFormatError(f"{name}: a resting hand carries no object targets")
        return (n,)
    if not value:
        raise DatasetFormatError(f"{name}: a pointing hand needs at least one target")
    if any(i < 0 or i >= n for i in value):
        raise DatasetFormatError(f"{name}: index out of range 0..{n - 1}")
    return tuple(value)


def samples_from_json(obj) -> list[Sample]:
    """Decode one JSONL record.

    A record holds a single ``hand``; a bi-manual frame may instead carry
    ``hands`` with per-hand ``targets`` and ``resting`` lists and is split
    into one sample per hand.
    """
    if not isinstance(obj, dict):
        raise DatasetFormatError("record: expected a JSON object")
    for key in ("dims", "objects"):
        if key not in obj:
            raise DatasetFormatError(f"{key}: missing field")
    dims_v = obj["dims"]
    if not (isinstance(dims_v, list) and len(dims_v) == 2):
        raise DatasetFormatError("dims: expected [W, H]")
    try:
        dims = ImageDims(float(dims_v[0]), float(dims_v[1]))
    except (TypeError, ValueError, GeometryError) as exc:
        raise DatasetFormatError(f"dims: {exc}") from None
    objects = _points(obj["objects"], "objects")
    if not dims.contains(objects):
        raise DatasetFormatError("objects: centroid outside the image")
    meta = obj.get("meta", {})
    if not isinstance(meta, dict):
        raise DatasetFormatError("meta: expected an object")
    seq = build_object_sequence(objects)
    n = len(objects)

    def one(hand_v, targets_v, resting_v, name, extra):
        lm = _points(hand_v, name, N_LANDMARKS)
        if not dims.contains(lm):
            raise DatasetFormatError(f"{name}: landmark outside the image")
        return Sample(dims, HandPose(lm), seq, _targets(targets_v, resting_v, n, "targets"), {**meta, **extra})

    if "hands" in obj:
        hands, targets, resting = obj["hands"], obj.get("targets"), obj.get("resting")
        if not (isinstance(hands, list) and isinstance(targets, list) and isinstance(resting, list)):
            raise DatasetFormatError("hands: bi-manual records need list-valued hands, targets and resting")
        if not len(hands) == len(targets) == len(resting):
            raise DatasetFormatError("hands: hands, targets and resting differ in length")
        return [one(h, t, r, f"hands[{i}]", {"hand_index": i}) for i, (h, t, r) in enumerate(zip(hands, targets, resting))]
    for key in ("hand", "targets", "resting"):
        if key not in obj:
            raise DatasetFormatError(f"{key}: missing field")
    return [one(obj["hand"], obj["targets"], obj["resting"], "landmarks", {})]


def load_jsonl(path) -> list[Sample]:
    out: list[Sample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            try:
                out.extend(samples_from_json(obj))
            except (DatasetFormatError, GeometryError, ValueError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_augmented_jsonl(batches: Iterable[AugmentedBatch], path) -> int:
    """Stream augmented batches to JSONL without building Sample objects."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for b in batches:
            base = b.base
            targets = [] if base.resting else list(base.targets)
            for i in range(len(b)):
                rec = {
                    "dims": [base.dims.W, base.dims.H],
                    "hand": b.landmarks[i].tolist(),
                    "objects": b.centroids[i].tolist(),
                    "targets": targets,
                    "resting": base.resting,
                    "meta": {**base.meta, "aug": [int(v) for v in b.specs[i]]},
                }
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
                fh.write("\n")
                n += 1
    return n


def split_by_scene(samples: Iterable[Sample]) -> dict:
    out: dict = {}
    for s in samples:
        out.setdefault(s.scene, []).append(s)
    return out


def scene_ids(samples: Iterable[Sample]) -> list:
    seen = []
    for s in samples:
        if s.scene not in seen:
            seen.append(s.scene)
    return seen
