"""Independent-set (multicolor) row orderings for parallel Gauss-Seidel.

Rows that share no local coupling may relax simultaneously, so we partition
each rank's rows into color classes and reorder the system color by color.
Couplings into neighbor ranks are ignored here: each subdomain is colored
on its own, without communication.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Coloring:
    color: np.ndarray          # color id per row, in the pre-reorder row order
    num_colors: int
    color_offsets: np.ndarray  # block start per color after reordering; len nc+1
    perm: np.ndarray           # new row -> old row
    iperm: np.ndarray          # old row -> new row


def _local_adjacency(A):
    """Per-row arrays of locally-coupled row indices (halo/padding excluded)."""
    n = A.n_rows
    adj = []
    for i in range(n):
        cols = A.col_idx[i, :A.row_nnz[i]]
        local = cols[(cols >= 0) & (cols < n) & (cols != i)]
        adj.append(local)
    return adj


def color(A, strategy="greedy", seed=0):
    """Color the local rows of ``A``.

    greedy: first-fit in ascending row order; deterministic, ignores the seed.
    jpl:    random-weight independent-set rounds (Jones-Plassmann-Luby style),
            seeded; each selected row takes the smallest color its already
            colored neighbors have not used, which bounds the color count by
            the maximum degree plus one.
    """
    n = A.n_rows
    adj = _local_adjacency(A)
    colors = np.full(n, -1, dtype=np.int32)

    if strategy == "greedy":
        for i in range(n):
            used = {colors[j] for j in adj[i] if colors[j] >= 0}
            c = 0
            while c in used:
                c += 1
            colors[i] = c
    elif strategy == "jpl":
        rng = np.random.default_rng(seed)
        remaining = set(range(n))
        while remaining:
            w = rng.random(n)
            selected = [i for i in remaining
                        if all((w[i], i) > (w[j], j)
                               for j in adj[i] if j in remaining)]
            for i in selected:
                used = {colors[j] for j in adj[i] if colors[j] >= 0}
                c = 0
                while c in used:
                    c += 1
                colors[i] = c
            remaining.difference_update(selected)
    else:
        raise ValueError(f"unknown coloring strategy: {strategy!r}")

    num_colors = int(colors.max()) + 1 if n else 0
    counts = np.bincount(colors, minlength=num_colors)
    offsets = np.zeros(num_colors + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    perm = np.lexsort((np.arange(n), colors))  # stable (color, original index)
    iperm = np.empty_like(perm)
    iperm[perm] = np.arange(n)
    return Coloring(color=colors, num_colors=num_colors, color_offsets=offsets,
                    perm=perm, iperm=iperm)


def identity_coloring(n):
    """Single-color trivial ordering (used by tests and degenerate cases)."""
    return Coloring(color=np.zeros(n, dtype=np.int32), num_colors=1,
                    color_offsets=np.array([0, n], dtype=np.int64),
                    perm=np.arange(n), iperm=np.arange(n))


def check_coloring(A, coloring):
    """True iff no two locally coupled rows share a color."""
    for i, neighbors in enumerate(_local_adjacency(A)):
        ci = coloring.color[i]
        if any(coloring.color[j] == ci for j in neighbors):
            return False
    return True


def permute_system(A, vectors, coloring):
    """Apply the symmetric reordering P A P^T and permute ``vectors`` by P.

    Rows are gathered by perm; owned column ids are relabeled through iperm.
    The entry order inside each row is untouched: entries are sorted by global
    column id, and a symmetric relabeling does not change global ids.
    """
    from .problem import EllMatrix

    n = A.n_rows
    perm = coloring.perm
    col_idx = A.col_idx[perm].copy()
    owned = (col_idx >= 0) & (col_idx < n)
    col_idx[owned] = coloring.iperm[col_idx[owned]]
    out = EllMatrix(n_rows=n, width=A.width,
                    values=A.values[perm].copy(),
                    col_idx=col_idx,
                    col_global=A.col_global[perm].copy(),
                    row_nnz=A.row_nnz[perm].copy(),
                    diag_pos=A.diag_pos[perm].copy(),
                    nnz_total=A.nnz_total,
                    n_cols_extended=A.n_cols_extended)
    return out, [v[perm].copy() for v in vectors]
