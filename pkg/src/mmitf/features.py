"""Raw input sequences: hand landmarks, object centroids, finger angles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

N_LANDMARKS = 21

WRIST = 0
THUMB_CMC, THUMB_MCP, THUMB_IP, THUMB_TIP = 1, 2, 3, 4
INDEX_FINGER_MCP, INDEX_FINGER_PIP, INDEX_FINGER_DIP, INDEX_FINGER_TIP = 5, 6, 7, 8
MIDDLE_FINGER_MCP, MIDDLE_FINGER_PIP, MIDDLE_FINGER_DIP, MIDDLE_FINGER_TIP = 9, 10, 11, 12
RING_FINGER_MCP, RING_FINGER_PIP, RING_FINGER_DIP, RING_FINGER_TIP = 13, 14, 15, 16
PINKY_MCP, PINKY_PIP, PINKY_DIP, PINKY_TIP = 17, 18, 19, 20

NON_OBJECT = (-1.0, -1.0)
NON_RELATION = -1.0


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ImageDims:
    W: float
    H: float

    def __post_init__(self):
        if not (self.W > 0 and self.H > 0):
            raise GeometryError(f"image dimensions must be positive, got {self.W}x{self.H}")

    def contains(self, pts, tol: float = 0.0) -> bool:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return bool(
            np.all(pts[:, 0] >= -tol)
            and np.all(pts[:, 0] <= self.W + tol)
            and np.all(pts[:, 1] >= -tol)
            and np.all(pts[:, 1] <= self.H + tol)
        )


class HandPose:
    """21 ordered 2D hand landmarks in pixel coordinates."""

    __slots__ = ("landmarks",)

    def __init__(self, landmarks, dims: ImageDims | None = None):
        lm = np.array(landmarks, dtype=np.float64)
        if lm.ndim != 2 or lm.shape[1] != 2:
            raise GeometryError(f"landmarks: expected shape (21, 2), got {lm.shape}")
        if lm.shape[0] != N_LANDMARKS:
            raise GeometryError(f"landmarks: expected 21, got {lm.shape[0]}")
        if not np.all(np.isfinite(lm)):
            raise GeometryError("landmarks: non-finite coordinate")
        if dims is not None and not dims.contains(lm):
            raise GeometryError("landmarks: coordinate outside the image")
        lm.setflags(write=False)
        self.landmarks = lm

    @property
    def wrist(self) -> np.ndarray:
        return self.landmarks[WRIST]

    @property
    def index_finger_dip(self) -> np.ndarray:
        return self.landmarks[INDEX_FINGER_DIP]

    @property
    def index_finger_tip(self) -> np.ndarray:
        return self.landmarks[INDEX_FINGER_TIP]

    def __eq__(self, other):
        return isinstance(other, HandPose) and np.array_equal(self.landmarks, other.landmarks)

    def __repr__(self):
        return f"HandPose(tip={tuple(self.index_finger_tip)}, wrist={tuple(self.wrist)})"


@dataclass(frozen=True, eq=False)
class ObjectSequence:
    """Real centroids followed by the non-object sentinel."""

    centroids: np.ndarray  # (N_t, 2)

    @property
    def n_objects(self) -> int:
        return len(self.centroids)

    @property
    def sentinel_index(self) -> int:
        return len(self.centroids)

    def tokens(self) -> np.ndarray:
        """All N_t + 1 tokens, sentinel last."""
        return np.vstack([self.centroids, np.array([NON_OBJECT])])

    def __len__(self) -> int:
        return len(self.centroids) + 1

    def __eq__(self, other):
        return isinstance(other, ObjectSequence) and np.array_equal(self.centroids, other.centroids)


@dataclass(frozen=True, eq=False)
class RelationSequence:
    angles: np.ndarray  # (N_t + 1,), sentinel last
    degenerate: np.ndarray  # (N_t,) bool

    def __len__(self) -> int:
        return len(self.angles)

    @property
    def any_degenerate(self) -> bool:
        return bool(self.degenerate.any())


def centroid_of_bbox(box) -> np.ndarray:
    x_min, y_min, x_max, y_max = (float(v) for v in box)
    if not (x_min < x_max and y_min < y_max):
        raise GeometryError(f"degenerate bounding box {box}")
    return np.array([(x_min + x_max) / 2.0, (y_min + y_max) / 2.0])


def finger_vector(hand: HandPose) -> np.ndarray:
    return hand.index_finger_tip - hand.index_finger_dip


def finger_vector_is_degenerate(hand: HandPose) -> bool:
    return bool(np.hypot(*finger_vector(hand)) <= kernels.DEGENERATE_EPS)


def angle_and_flag(hand: HandPose, centroid) -> tuple[float, bool]:
    """Angle between the finger vector and the fingertip->centroid vector.

    Degenerate geometry (zero finger vector, centroid on the fingertip)
    yields pi/2 with the flag set.
    """
    c = np.asarray(centroid, dtype=np.float64).reshape(1, 1, 2)
    a, d = kernels.relation_angles(
        hand.index_finger_tip.reshape(1, 2), hand.index_finger_dip.reshape(1, 2), c
    )
    return float(a[0, 0]), bool(d[0, 0])


def angle_to_centroid(hand: HandPose, centroid) -> float:
    return angle_and_flag(hand, centroid)[0]


def build_object_sequence(centroids) -> ObjectSequence:
    c = np.array(centroids, dtype=np.float64).reshape(-1, 2)
    c.setflags(write=False)
    return ObjectSequence(c)


def build_relation_sequence(hand: HandPose, objects: ObjectSequence) -> RelationSequence:
    n = objects.n_objects
    if n:
        a, d = kernels.relation_angles(
            hand.index_finger_tip.reshape(1, 2),
            hand.index_finger_dip.reshape(1, 2),
            objects.centroids.reshape(1, n, 2),
        )
        angles = np.append(a[0], NON_RELATION)
        degenerate = d[0].copy()
    else:
        angles = np.array([NON_RELATION])
        degenerate = np.zeros(0, dtype=bool)
    return RelationSequence(angles, degenerate)
