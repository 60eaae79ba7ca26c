"""Coordinate normalisation, modality projections and 2D sinusoidal encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .features import NON_OBJECT, NON_RELATION, HandPose, ImageDims, ObjectSequence, RelationSequence

PE_BASE = 10000.0


def _is_sentinel_point(p) -> bool:
    return float(p[0]) == NON_OBJECT[0] and float(p[1]) == NON_OBJECT[1]


def normalize_point(p, dims: ImageDims) -> np.ndarray:
    x, y = float(p[0]), float(p[1])
    if not (0.0 <= x <= dims.W and 0.0 <= y <= dims.H):
        raise ValueError(f"point ({x}, {y}) outside the {dims.W}x{dims.H} image")
    return np.array([x / dims.W, y / dims.H])


def normalize_points(pts: np.ndarray, wh: np.ndarray) -> np.ndarray:
    """Vectorised ``normalize_point``; ``wh`` broadcasts against ``pts``."""
    return pts / wh


def _axis_encoding(v: np.ndarray, d_T: int) -> np.ndarray:
    half = d_T // 2
    j = np.arange(half)
    freq = PE_BASE ** (2.0 * (j // 2) / d_T)
    ang = np.asarray(v, dtype=np.float64)[..., None] / freq
    return np.where(j % 2 == 0, np.sin(ang), np.cos(ang))


def positional_encode(p_norm, d_T: int) -> np.ndarray:
    """concat(PE(x), PE(y)) with d_T/2 components per axis.

    Accepts a single point or any array of points with trailing axis 2.
    """
    if d_T % 2:
        raise ValueError(f"d_T must be even, got {d_T}")
    p = np.asarray(p_norm, dtype=np.float64)
    return np.concatenate([_axis_encoding(p[..., 0], d_T), _axis_encoding(p[..., 1], d_T)], axis=-1)


@dataclass
class EncodingParams:
    d_T: int
    W_h_x: nx.Tensor  # (d_T/2,)
    W_h_y: nx.Tensor
    W_o_x: nx.Tensor
    W_o_y: nx.Tensor
    W_r: nx.Tensor  # (d_T,)

    @classmethod
    def init(cls, d_T: int, rng: np.random.Generator) -> "EncodingParams":
        if d_T <= 0 or d_T % 2:
            raise ValueError(f"d_T must be a positive even integer, got {d_T}")
        h = d_T // 2

        # fan_in is 1 for every projection
        def u(n):
            return nx.Tensor(rng.uniform(-1.0, 1.0, size=n), requires_grad=True)

        return cls(d_T, u(h), u(h), u(h), u(h), u(d_T))

    def named(self) -> dict[str, nx.Tensor]:
        return {
            "W_h_x": self.W_h_x,
            "W_h_y": self.W_h_y,
            "W_o_x": self.W_o_x,
            "W_o_y": self.W_o_y,
            "W_r": self.W_r,
        }


def embed_point(p_norm, proj) -> nx.Tensor:
    """concat(proj_x * x, proj_y * y) for one point or a batch of points."""
    wx, wy = proj
    p = np.asarray(p_norm, dtype=np.float64)
    return nx.concat([nx.mul(p[..., 0:1], wx), nx.mul(p[..., 1:2], wy)], axis=-1)


def remap_angles(theta) -> np.ndarray:
    """Map valid angles onto [0, 2pi]; the sentinel passes through."""
    t = np.asarray(theta, dtype=np.float64)
    sentinel = t == NON_RELATION
    if np.any(~sentinel & ((t < 0.0) | (t > np.pi))):
        raise ValueError("relation angle outside [0, pi]")
    return np.where(sentinel, t, 2.0 * t)


def embed_angle(theta, W_r: nx.Tensor) -> nx.Tensor:
    return nx.mul(remap_angles(theta)[..., None], W_r)


def _object_inputs(centroids: np.ndarray, wh: np.ndarray, d_T: int):
    """Normalised object tokens (sentinel raw) and their PE rows (sentinel zero)."""
    lead = centroids.shape[:-2]
    coords = np.concatenate(
        [normalize_points(centroids, wh), np.broadcast_to(np.array(NON_OBJECT), lead + (1, 2))], axis=-2
    )
    pe = positional_encode(coords, d_T)
    pe[..., -1, :] = 0.0
    return coords, pe


def assemble_arrays(landmarks, centroids, angles, wh, params: EncodingParams):
    """Batched assembly.

    ``landmarks`` (B, 21, 2), ``centroids`` (B, N, 2), ``angles`` (B, N+1),
    ``wh`` (B, 1, 2) image sizes. Returns Tensors (B,21,d), (B,N+1,d), (B,N+1,d).
    """
    if angles.shape[-1] != centroids.shape[-2] + 1:
        raise ValueError(
            f"relation sequence length {angles.shape[-1]} != object sequence length {centroids.shape[-2] + 1}"
        )
    d_T = params.d_T
    p_norm = normalize_points(landmarks, wh)
    P = nx.add(embed_point(p_norm, (params.W_h_x, params.W_h_y)), positional_encode(p_norm, d_T))
    coords, pe = _object_inputs(centroids, wh, d_T)
    O = nx.add(embed_point(coords, (params.W_o_x, params.W_o_y)), pe)
    R = embed_angle(angles, params.W_r)
    return P, O, R


def assemble(
    hand: HandPose,
    objects: ObjectSequence,
    relations: RelationSequence,
    params: EncodingParams,
    dims: ImageDims,
):
    """Unbatched assembly of the pose, object and relation token matrices."""
    if len(objects) != len(relations):
        raise ValueError(f"object sequence length {len(objects)} != relation sequence length {len(relations)}")
    wh = np.array([[dims.W, dims.H]])
    for p in objects.centroids:
        normalize_point(p, dims)
    return assemble_arrays(hand.landmarks, objects.centroids, relations.angles, wh, params)
