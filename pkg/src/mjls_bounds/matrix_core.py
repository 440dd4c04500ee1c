"""Dense small-matrix kernel shared by every other module.

Matrices are plain ``float64`` numpy arrays; :func:`as_matrix` is the checked
constructor. Stacks of matrices have shape ``(m, d, d)`` and most routines have
a batched form so callers can process many word products per numpy call.
"""

from __future__ import annotations

from collections.abc import Sequence
from enum import StrEnum
from itertools import combinations

import numpy as np
import scipy.linalg
import structlog
from numpy.typing import ArrayLike, NDArray

from mjls_bounds.errors import DimensionError, NumericFlagError

logger = structlog.get_logger()

Matrix = NDArray[np.float64]
MatrixStack = NDArray[np.float64]

# Gel'fand iteration: relative agreement of successive estimates, squaring cap,
# and the norm below which a product is declared nilpotent.
SPECTRAL_RTOL = 1e-10
MAX_SQUARINGS = 60
NILPOTENT_NORM = 1e-300

# Scaling-and-squaring is only trusted to 1e-10 relative up to this norm.
EXPM_NORM_LIMIT = 50.0


class NormKind(StrEnum):
    """Induced matrix norms."""

    SPECTRAL2 = "spectral2"
    MAX_ROW_SUM = "max_row_sum"
    MAX_COL_SUM = "max_col_sum"


def as_matrix(data: ArrayLike) -> Matrix:
    """Convert ``data`` to a finite square float64 matrix or raise DimensionError."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise DimensionError(f"expected a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("matrix entries must be finite")
    return arr


def as_stack(data: ArrayLike) -> MatrixStack:
    """Convert ``data`` to a stack of finite square matrices of equal dimension."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[1] == 0:
        raise DimensionError(f"expected a stack of square matrices, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("matrix entries must be finite")
    return arr


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product ``a @ b`` of two matrices of the same dimension."""
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a @ b


def operator_norms(stack: MatrixStack, kind: NormKind = NormKind.SPECTRAL2) -> NDArray[np.float64]:
    """Induced norm of every matrix in a stack."""
    if kind is NormKind.MAX_ROW_SUM:
        return np.abs(stack).sum(axis=-1).max(axis=-1)
    if kind is NormKind.MAX_COL_SUM:
        return np.abs(stack).sum(axis=-2).max(axis=-1)
    try:
        return np.linalg.norm(stack, ord=2, axis=(-2, -1))
    except np.linalg.LinAlgError as err:
        raise NumericFlagError(f"singular value decomposition did not converge: {err}") from err


def operator_norm(m: Matrix, kind: NormKind = NormKind.SPECTRAL2) -> float:
    """Induced norm of a single matrix.

    ``SPECTRAL2`` is the largest singular value (LAPACK SVD); the row and column
    sum norms are exact.
    """
    return float(operator_norms(m[np.newaxis], kind)[0])


def spectral_radii(stack: ArrayLike) -> NDArray[np.float64]:
    """Spectral radius of every matrix in a stack, by normalized repeated squaring.

    With ``s_k`` the Frobenius norm of the k-th iterate and the iterate replaced
    by ``(A_k / s_k)^2``, ``exp(sum_j 2^-j log s_j)`` equals ``||A^(2^k)||^(1/2^k)``
    and decreases to the spectral radius. Iteration stops per matrix once two
    successive estimates agree to ``SPECTRAL_RTOL`` or after ``MAX_SQUARINGS``.

    The log-estimate error behaves like ``c / 2^k``, so the reported value is the
    extrapolation ``2 L_k - L_(k-1)`` of the last two log-estimates, which removes
    that leading term.
    """
    work = as_stack(stack).copy()
    count = work.shape[0]
    log_rho = np.zeros(count)
    previous = np.full(count, np.inf)
    radius = np.zeros(count)
    active = np.ones(count, dtype=bool)
    weight = 1.0

    for _ in range(MAX_SQUARINGS + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        sub = work[idx]
        scale = np.sqrt(np.einsum("kij,kij->k", sub, sub))

        dead = scale < NILPOTENT_NORM
        radius[idx[dead]] = 0.0
        active[idx[dead]] = False

        live = idx[~dead]
        live_scale = scale[~dead]
        log_rho[live] += weight * np.log(live_scale)
        current = log_rho[live]
        last = previous[live]
        done = np.abs(current - last) <= SPECTRAL_RTOL
        radius[live] = np.exp(np.where(np.isfinite(last), 2.0 * current - last, current))
        previous[live] = current
        active[live[done]] = False

        normalized = sub[~dead] / live_scale[:, np.newaxis, np.newaxis]
        work[live] = normalized @ normalized
        weight /= 2.0

    if np.any(active):
        logger.debug("spectral_radius_cap_reached", unconverged=int(active.sum()))
    return radius


def spectral_radius(m: Matrix) -> float:
    """Spectral radius of ``m``; nilpotent inputs return exactly 0."""
    return float(spectral_radii(m[np.newaxis])[0])


def matrix_exponential(m: Matrix) -> Matrix:
    """``exp(m)`` by scaling-and-squaring with a Pade core."""
    norm = operator_norm(m, NormKind.MAX_ROW_SUM)
    if norm > EXPM_NORM_LIMIT:
        raise NumericFlagError(
            f"matrix norm {norm:.3g} exceeds the exponential accuracy budget {EXPM_NORM_LIMIT}"
        )
    return np.asarray(scipy.linalg.expm(m), dtype=np.float64)


def exterior_power(m: Matrix, order: int) -> Matrix:
    """Exterior power (compound matrix) of ``m`` of the given order.

    Rows and columns are indexed by the lexicographically ordered subsets of
    ``range(d)`` of size ``order``; entry ``(I, J)`` is the minor with rows ``I``
    and columns ``J``.
    """
    d = m.shape[0]
    if not 1 <= order <= d:
        raise DimensionError(f"exterior power order {order} outside 1..{d}")
    subsets = np.array(list(combinations(range(d), order)), dtype=np.intp)
    rows = subsets[:, np.newaxis, :, np.newaxis]
    cols = subsets[np.newaxis, :, np.newaxis, :]
    return np.asarray(np.linalg.det(m[rows, cols]), dtype=np.float64)


def chain_products(
    matrices: MatrixStack, words: NDArray[np.intp]
) -> tuple[MatrixStack, NDArray[np.float64]]:
    """Products ``A[w_n] ... A[w_1]`` for a batch of zero-based words.

    Returns the products normalized to unit Frobenius norm together with the log
    of the scale removed, so ``product = exp(log_scale) * normalized``. A product
    that vanishes exactly gets ``log_scale = -inf`` and a zero matrix.
    """
    count, length = words.shape
    d = matrices.shape[1]
    products = np.broadcast_to(np.eye(d), (count, d, d)).copy()
    log_scale = np.zeros(count)
    for j in range(length):
        products = matrices[words[:, j]] @ products
        scale = np.sqrt(np.einsum("kij,kij->k", products, products))
        zero = scale == 0.0
        safe = np.where(zero, 1.0, scale)
        products /= safe[:, np.newaxis, np.newaxis]
        log_scale += np.where(zero, -np.inf, np.log(safe))
    return products, log_scale


def word_product(matrices: Sequence[Matrix] | MatrixStack, word: Sequence[int]) -> Matrix:
    """Unnormalized product ``A[w_n] ... A[w_1]`` for one zero-based word."""
    product = np.eye(matrices[0].shape[0])
    for symbol in word:
        product = matrices[symbol] @ product
    return product
