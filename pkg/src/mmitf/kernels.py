"""Hot geometric kernels with a numba path and a pure-numpy fallback.

Set ``MMITF_DISABLE_NUMBA=1`` to force the numpy implementations. Both
implementations are importable directly (``numpy_kernels`` and
``numba_kernels``) so they can be compared in tests and benchmarks.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

# Norms at or below this are treated as zero-length vectors.
DEGENERATE_EPS = 1e-12


def _disabled() -> bool:
    return os.environ.get("MMITF_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------


def _np_relation_angles(tips, dips, centroids):
    finger = tips - dips  # (B, 2)
    to_c = centroids - tips[:, None, :]  # (B, N, 2)
    dot = finger[:, None, 0] * to_c[..., 0] + finger[:, None, 1] * to_c[..., 1]
    cross = finger[:, None, 0] * to_c[..., 1] - finger[:, None, 1] * to_c[..., 0]
    angles = np.arctan2(np.abs(cross), dot)
    fn = np.hypot(finger[:, 0], finger[:, 1])[:, None]
    cn = np.hypot(to_c[..., 0], to_c[..., 1])
    degenerate = (fn <= DEGENERATE_EPS) | (cn <= DEGENERATE_EPS)
    angles = np.where(degenerate, np.pi / 2, angles)
    return angles, degenerate


def _np_apply_affine(points, mats):
    # out[v, k, :] = mats[v, :, :2] @ points[k] + mats[v, :, 2]
    out = np.einsum("vij,kj->vki", mats[:, :, :2], points)
    out += mats[:, None, :, 2]
    return out


def _np_line_distances(anchors, dirs, points):
    rel = points - anchors[:, None, :]
    return np.abs(dirs[:, None, 0] * rel[..., 1] - dirs[:, None, 1] * rel[..., 0])


def _np_patch_indices(points, x0, y0, pw, ph, rows, cols):
    col = np.floor((points[:, 0] - x0) / pw).astype(np.int64)
    row = np.floor((points[:, 1] - y0) / ph).astype(np.int64)
    out = np.empty((points.shape[0], 2), dtype=np.int64)
    out[:, 0] = np.clip(row, 0, rows - 1)
    out[:, 1] = np.clip(col, 0, cols - 1)
    return out


numpy_kernels = SimpleNamespace(
    relation_angles=_np_relation_angles,
    apply_affine=_np_apply_affine,
    line_distances=_np_line_distances,
    patch_indices=_np_patch_indices,
    backend="numpy",
)


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------


def _build_numba():
    from numba import njit

    @njit(cache=True, nogil=True)
    def relation_angles(tips, dips, centroids):
        B, N = centroids.shape[0], centroids.shape[1]
        angles = np.empty((B, N))
        degenerate = np.zeros((B, N), dtype=np.bool_)
        for b in range(B):
            fx = tips[b, 0] - dips[b, 0]
            fy = tips[b, 1] - dips[b, 1]
            fn = np.sqrt(fx * fx + fy * fy)
            for i in range(N):
                cx = centroids[b, i, 0] - tips[b, 0]
                cy = centroids[b, i, 1] - tips[b, 1]
                cn = np.sqrt(cx * cx + cy * cy)
                if fn <= DEGENERATE_EPS or cn <= DEGENERATE_EPS:
                    angles[b, i] = np.pi / 2
                    degenerate[b, i] = True
                else:
                    angles[b, i] = np.arctan2(abs(fx * cy - fy * cx), fx * cx + fy * cy)
        return angles, degenerate

    @njit(cache=True, nogil=True)
    def apply_affine(points, mats):
        V, K = mats.shape[0], points.shape[0]
        out = np.empty((V, K, 2))
        for v in range(V):
            a, b, tx = mats[v, 0, 0], mats[v, 0, 1], mats[v, 0, 2]
            c, d, ty = mats[v, 1, 0], mats[v, 1, 1], mats[v, 1, 2]
            for k in range(K):
                x, y = points[k, 0], points[k, 1]
                out[v, k, 0] = a * x + b * y + tx
                out[v, k, 1] = c * x + d * y + ty
        return out

    @njit(cache=True, nogil=True)
    def line_distances(anchors, dirs, points):
        B, N = points.shape[0], points.shape[1]
        out = np.empty((B, N))
        for b in range(B):
            for i in range(N):
                rx = points[b, i, 0] - anchors[b, 0]
                ry = points[b, i, 1] - anchors[b, 1]
                out[b, i] = abs(dirs[b, 0] * ry - dirs[b, 1] * rx)
        return out

    @njit(cache=True, nogil=True)
    def patch_indices(points, x0, y0, pw, ph, rows, cols):
        M = points.shape[0]
        out = np.empty((M, 2), dtype=np.int64)
        for m in range(M):
            c = int(np.floor((points[m, 0] - x0) / pw))
            r = int(np.floor((points[m, 1] - y0) / ph))
            out[m, 0] = min(max(r, 0), rows - 1)
            out[m, 1] = min(max(c, 0), cols - 1)
        return out

    return SimpleNamespace(
        relation_angles=relation_angles,
        apply_affine=apply_affine,
        line_distances=line_distances,
        patch_indices=patch_indices,
        backend="numba",
    )


try:
    numba_kernels = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_kernels = None


def active():
    """Return the kernel namespace selected by the environment."""
    if _disabled() or numba_kernels is None:
        return numpy_kernels
    return numba_kernels


def relation_angles(tips, dips, centroids):
    """Unsigned finger-to-centroid angles for a batch of hands.

    ``tips``/``dips`` are (B, 2), ``centroids`` is (B, N, 2). Returns
    ``(angles, degenerate)`` of shape (B, N); degenerate entries are pi/2.
    """
    return active().relation_angles(
        np.ascontiguousarray(tips, dtype=np.float64),
        np.ascontiguousarray(dips, dtype=np.float64),
        np.ascontiguousarray(centroids, dtype=np.float64).reshape(len(tips), -1, 2),
    )


def apply_affine(points, mats):
    """Apply V 2x3 affine maps to K points, giving (V, K, 2)."""
    return active().apply_affine(
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(mats, dtype=np.float64),
    )


def line_distances(anchors, dirs, points):
    return active().line_distances(
        np.ascontiguousarray(anchors, dtype=np.float64),
        np.ascontiguousarray(dirs, dtype=np.float64),
        np.ascontiguousarray(points, dtype=np.float64).reshape(len(anchors), -1, 2),
    )


def patch_indices(points, x0, y0, pw, ph, rows, cols):
    return active().patch_indices(
        np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2),
        float(x0), float(y0), float(pw), float(ph), int(rows), int(cols),
    )
