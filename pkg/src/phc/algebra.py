"""Multiplication rules for hypercomplex linear layers.

A rule is a set of n contribution matrices, each n by n. Summing their
Kronecker products with n component weight matrices yields the block weight
matrix of the layer; the functions here construct, initialize, assemble and
analyze those pieces as plain numpy arrays. Differentiable assembly lives in
the layer code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import derive_rng

SCHEMES = ("complex", "quaternion", "shifted-identity", "uniform")


@dataclass
class ContributionSet:
    """The n matrices defining how algebra components mix under the product."""

    n: int
    matrices: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"algebra dimension must be positive, got {self.n}")
        if len(self.matrices) != self.n:
            raise ValueError(f"expected {self.n} matrices, got {len(self.matrices)}")
        self.matrices = [np.asarray(m, dtype=np.float64) for m in self.matrices]
        for i, m in enumerate(self.matrices):
            if m.shape != (self.n, self.n):
                raise ValueError(
                    f"matrix {i} has shape {m.shape}, expected {(self.n, self.n)}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"matrix {i} contains non-finite entries")


def kronecker(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Kronecker product: out[i*p+r, j*q+s] = x[i,j] * y[r,s]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError(f"kronecker expects matrices, got {x.shape}, {y.shape}")
    return np.kron(x, y)


def _complex_matrices() -> list[np.ndarray]:
    return [np.array([[1.0, 0.0], [0.0, 1.0]]),
            np.array([[0.0, -1.0], [1.0, 0.0]])]


def _quaternion_matrices() -> list[np.ndarray]:
    # Sign pattern of the real 4x4 representation of the Hamilton product.
    c1 = np.eye(4)
    c2 = np.array([[0, -1, 0, 0],
                   [1, 0, 0, 0],
                   [0, 0, 0, -1],
                   [0, 0, 1, 0]], dtype=np.float64)
    c3 = np.array([[0, 0, -1, 0],
                   [0, 0, 0, 1],
                   [1, 0, 0, 0],
                   [0, -1, 0, 0]], dtype=np.float64)
    c4 = np.array([[0, 0, 0, -1],
                   [0, 0, -1, 0],
                   [0, 1, 0, 0],
                   [1, 0, 0, 0]], dtype=np.float64)
    return [c1, c2, c3, c4]


def _shifted_identity_matrices(n: int) -> list[np.ndarray]:
    alt = np.diag([(-1.0) ** i for i in range(n)])
    perm = np.zeros((n, n))
    for i in range(n):
        perm[i, (i + 1) % n] = 1.0
    out = []
    power = np.eye(n)
    for _ in range(n):
        out.append(alt @ power)
        power = power @ perm
    return out


def init_contributions(n: int, scheme: str, seed: int = 0,
                       layer_index: int = 0) -> ContributionSet:
    """Build the n contribution matrices for the requested scheme.

    The uniform scheme draws i.i.d. U(-1, 1) entries from a counter-based
    stream keyed by (seed, layer_index, matrix index), so results do not
    depend on how many layers were built before this one.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown contribution scheme {scheme!r}")
    if scheme == "complex":
        if n != 2:
            raise ValueError(f"complex scheme requires n=2, got n={n}")
        return ContributionSet(2, _complex_matrices())
    if scheme == "quaternion":
        if n != 4:
            raise ValueError(f"quaternion scheme requires n=4, got n={n}")
        return ContributionSet(4, _quaternion_matrices())
    if scheme == "shifted-identity":
        return ContributionSet(n, _shifted_identity_matrices(n))
    matrices = []
    for i in range(n):
        rng = derive_rng(seed, "contrib", layer_index, i)
        matrices.append(rng.uniform(-1.0, 1.0, size=(n, n)))
    return ContributionSet(n, matrices)


def assemble(contributions: ContributionSet, weights) -> np.ndarray:
    """Sum of Kronecker products producing the k by d block weight matrix."""
    weights = [np.asarray(w, dtype=np.float64) for w in weights]
    n = contributions.n
    if len(weights) != n:
        raise ValueError(f"expected {n} weight matrices, got {len(weights)}")
    shape = weights[0].shape
    for i, w in enumerate(weights):
        if w.ndim != 2 or w.shape != shape:
            raise ValueError(f"weight {i} has shape {w.shape}, expected {shape}")
    out = np.zeros((n * shape[0], n * shape[1]))
    for c, w in zip(contributions.matrices, weights):
        out += np.kron(c, w)
    return out


def sparsity(u: np.ndarray) -> float:
    """1 minus the mean absolute entry; near 1 means near-zero mass."""
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise ValueError("sparsity: non-finite entries")
    return 1.0 - float(np.abs(u).sum()) / u.size


def phm_param_count(n: int, k: int, d: int, with_bias: bool = False) -> int:
    """Trainable scalars in one hypercomplex layer: k*d/n + n**3 (+ k)."""
    if k % n or d % n:
        raise ValueError(f"k={k} and d={d} must be divisible by n={n}")
    count = (k * d) // n + n ** 3
    return count + k if with_bias else count


def matrix_to_csv(m: np.ndarray, path) -> None:
    """Row-major CSV with 17 significant digits."""
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        for row in m:
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")
