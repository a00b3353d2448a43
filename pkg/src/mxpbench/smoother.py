"""Forward Gauss-Seidel in relaxation form over a multicolor ordering.

One sweep walks the color blocks in order; rows inside a block share no
coupling, so the whole block updates at once from already-written values of
earlier colors and frozen halo values (cross-rank couplings see the values
exchanged at the start of the sweep — block-Jacobi between ranks).  Row
accumulation order is fixed (ascending global column), which keeps sweeps
bitwise reproducible and lets a plain sequential sweep over the reordered
matrix serve as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

from contextlib import nullcontext

import numpy as np

from .comm import exchange, exchange_overlapped


class SingularDiagonal(Exception):
    """A zero diagonal entry reached the smoother (corrupt input guard)."""


@dataclass
class SmootherWorkspace:
    """Sweep counts: nu1 pre-smooth, nu2 post-smooth, nu_c at the coarsest level."""

    nu1: int = 1
    nu2: int = 1
    nu_c: int = 1

    def __post_init__(self):
        if min(self.nu1, self.nu2, self.nu_c) < 1:
            raise ValueError("sweep counts must all be >= 1")


def _sweep_cache(A, coloring):
    cached = A._caches.get("gs")
    if cached is not None and cached[0] is coloring:
        return cached[1]
    offvals, safecols, diag = A.offdiag_view()
    if np.any(diag == 0):
        raise SingularDiagonal("zero diagonal entry in smoother input")
    start0, end0 = int(coloring.color_offsets[0]), int(coloring.color_offsets[1])
    has_halo = (A.col_idx[start0:end0] >= A.n_rows).any(axis=1)
    rows_nh = np.flatnonzero(~has_halo) + start0
    rows_h = np.flatnonzero(has_halo) + start0
    data = {
        "offvals": offvals,
        "cols": safecols,
        "diag": diag,
        "c0_interior": (rows_nh, offvals[rows_nh], safecols[rows_nh], diag[rows_nh]),
        "c0_boundary": (rows_h, offvals[rows_h], safecols[rows_h], diag[rows_h]),
    }
    A._caches["gs"] = (coloring, data)
    return data


def _update_block(z, r, offvals, cols, diag, start, end):
    acc = np.zeros(end - start, dtype=z.dtype)
    for s in range(offvals.shape[1]):
        acc += offvals[start:end, s] * z[cols[start:end, s]]
    z[start:end] = (r[start:end] - acc) / diag[start:end]


def _update_rows(z, r, rows, vals, cols, diag):
    if not len(rows):
        return
    acc = np.zeros(len(rows), dtype=z.dtype)
    for s in range(vals.shape[1]):
        acc += vals[:, s] * z[cols[:, s]]
    z[rows] = (r[rows] - acc) / diag


def forward_gs_sweep(A, r, z, coloring, plan=None, world=None, rank=0,
                     z_is_zero=False, overlap=True, tally=None):
    """One forward sweep: z_i <- (r_i - sum_{j!=i} a_ij z_j) / a_ii, color by color.

    ``z`` must carry the halo tail.  When ``z_is_zero`` the caller asserts the
    iterate (tail included) is all zero, so the halo exchange is skipped.
    With ``overlap`` the first color's interior rows (those with no halo
    dependency) are updated while halo messages are in flight; the result is
    bitwise identical to the blocking path.
    """
    cache = _sweep_cache(A, coloring)
    offvals, cols, diag = cache["offvals"], cache["cols"], cache["diag"]
    offsets = coloring.color_offsets
    timer = tally.timed("GS") if tally is not None else nullcontext()

    with timer:
        first_color_done = False
        if z_is_zero:
            z[:] = 0
        elif world is not None and plan is not None and plan.neighbors:
            if overlap:
                rows_nh, v_nh, c_nh, d_nh = cache["c0_interior"]
                exchange_overlapped(
                    z, plan, world, rank,
                    lambda: _update_rows(z, r, rows_nh, v_nh, c_nh, d_nh))
                rows_h, v_h, c_h, d_h = cache["c0_boundary"]
                _update_rows(z, r, rows_h, v_h, c_h, d_h)
                first_color_done = True
            else:
                exchange(z, plan, world, rank)
        for c in range(coloring.num_colors):
            if c == 0 and first_color_done:
                continue
            _update_block(z, r, offvals, cols, diag,
                          int(offsets[c]), int(offsets[c + 1]))
    if tally is not None:
        tally.add("gs_sweep", A.dtype, nnz=A.nnz_total, n=A.n_rows)

