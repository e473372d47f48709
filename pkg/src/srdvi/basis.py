"""Orthonormal tangent bases for the sphere of square-root densities.

The basis is built once at the uniform density, where the tangent space
is simply the zero-mean functions, and carried to any other footpoint by
parallel transport.  Ordering is fixed: frequency-major, sine before
cosine, the linear element last.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import GridFn, gram_schmidt, grid_nodes, trapezoid_weights
from .sphere import Srd, TangentVec, transport_arrays


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    at: Srd
    elems: tuple[TangentVec, ...]
    n_pairs: int

    def __post_init__(self):
        if len(self.elems) != 2 * self.n_pairs + 1:
            raise ValueError(f"expected {2 * self.n_pairs + 1} elements, got {len(self.elems)}")

    @property
    def n(self) -> int:
        return len(self.elems)

    def matrix(self) -> np.ndarray:
        """Elements stacked as an (N, M) array."""
        return np.stack([e.v.values for e in self.elems])

    def gram(self) -> np.ndarray:
        B = self.matrix()
        return (B * trapezoid_weights(B.shape[1])) @ B.T


def raw_uniform_basis(n: int, m: int) -> list[GridFn]:
    t = grid_nodes(m)
    raw = []
    for k in range(1, (n - 1) // 2 + 1):
        raw.append(GridFn(np.sin(2 * np.pi * k * t)))
        raw.append(GridFn(np.cos(2 * np.pi * k * t)))
    raw.append(GridFn(1.0 - t))
    return raw


def build_uniform_basis(n: int, m: int) -> OrthonormalBasis:
    """N orthonormal tangent vectors at the uniform square-root density.

    ``1 - t`` has mean 1/2, so the constant is projected out before
    orthonormalization; the trigonometric elements already have zero mean
    on the grid.
    """
    if n < 3 or n % 2 == 0:
        raise ValueError(f"basis size must be odd and >= 3, got {n}")
    if n >= m / 2:
        raise ValueError(f"basis size {n} is not resolvable on a {m}-point grid")
    raw = raw_uniform_basis(n, m)
    one = GridFn.constant(1.0, m)
    # the constant leads the list so every later vector is made orthogonal to it
    ortho = gram_schmidt([one] + raw)[1:]
    at = Srd.uniform(m)
    elems = tuple(TangentVec(at, e) for e in ortho)
    return OrthonormalBasis(at, elems, (n - 1) // 2)


def transport_basis(basis: OrthonormalBasis, target: Srd) -> OrthonormalBasis:
    """Parallel-transport every element from ``basis.at`` to ``target``."""
    B = basis.matrix()
    moved = transport_arrays(B, basis.at.values, target.values, trapezoid_weights(B.shape[1]))
    elems = tuple(TangentVec(target, GridFn(row)) for row in moved)
    return OrthonormalBasis(target, elems, basis.n_pairs)


def write_basis_csv(basis: OrthonormalBasis, path: str | Path) -> None:
    """Dump the basis as an M x N matrix, one column per element."""
    B = basis.matrix()
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"b{k}" for k in range(B.shape[0])])
        for row in B.T:
            wr.writerow([f"{x:.17g}" for x in row])
