"""Per-patch scatter loops with a numba path and a pure-numpy path.

Every vertex patch assembles a small dense system from signed element
blocks; with hundreds of patches per flux the per-call overhead of
``np.add.at`` is noticeable, so the loops are compiled when numba is
available. Set ``EQUIFLUX_DISABLE_NUMBA=1`` to force the numpy versions.
Both implementations are importable by name so they can be compared.
"""

from __future__ import annotations

import os

import numpy as np


def assemble_patch_numpy(blocks, idx, sign, n):
    """Dense n x n sum of signed element blocks; entries with idx < 0 are dropped."""
    nb, m, _ = blocks.shape
    S = blocks * sign[:, :, None] * sign[:, None, :]
    rows = np.broadcast_to(idx[:, :, None], (nb, m, m))
    cols = np.broadcast_to(idx[:, None, :], (nb, m, m))
    keep = (rows >= 0) & (cols >= 0)
    out = np.zeros((n, n))
    np.add.at(out, (rows[keep], cols[keep]), S[keep])
    return out


def scatter_vector_numpy(vals, idx, sign, n):
    """Length-n sum of signed element vectors; entries with idx < 0 are dropped."""
    keep = idx >= 0
    out = np.zeros(n)
    np.add.at(out, idx[keep], (vals * sign)[keep])
    return out


def _assemble_patch_loops(blocks, idx, sign, n):
    nb, m, _ = blocks.shape
    out = np.zeros((n, n))
    for b in range(nb):
        for i in range(m):
            gi = idx[b, i]
            if gi < 0:
                continue
            si = sign[b, i]
            for j in range(m):
                gj = idx[b, j]
                if gj >= 0:
                    out[gi, gj] += si * sign[b, j] * blocks[b, i, j]
    return out


def _scatter_vector_loops(vals, idx, sign, n):
    nb, m = vals.shape
    out = np.zeros(n)
    for b in range(nb):
        for i in range(m):
            gi = idx[b, i]
            if gi >= 0:
                out[gi] += sign[b, i] * vals[b, i]
    return out


def _numba_enabled() -> bool:
    return os.environ.get("EQUIFLUX_DISABLE_NUMBA", "0").strip().lower() not in ("1", "true", "yes")


try:
    import numba

    assemble_patch_numba = numba.njit(cache=True, nogil=True)(_assemble_patch_loops)
    scatter_vector_numba = numba.njit(cache=True, nogil=True)(_scatter_vector_loops)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    assemble_patch_numba = scatter_vector_numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_enabled()


def _prep(vals, idx, sign):
    return (np.ascontiguousarray(vals, dtype=np.float64),
            np.ascontiguousarray(idx, dtype=np.int64),
            np.ascontiguousarray(sign, dtype=np.float64))


def assemble_patch(blocks, idx, sign, n):
    blocks, idx, sign = _prep(blocks, idx, sign)
    if USE_NUMBA:
        return assemble_patch_numba(blocks, idx, sign, int(n))
    return assemble_patch_numpy(blocks, idx, sign, int(n))


def scatter_vector(vals, idx, sign, n):
    vals, idx, sign = _prep(vals, idx, sign)
    if USE_NUMBA:
        return scatter_vector_numba(vals, idx, sign, int(n))
    return scatter_vector_numpy(vals, idx, sign, int(n))
