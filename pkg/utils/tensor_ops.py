"""
Dense complex tensor algebra: contraction, truncated SVD and the
singular-value differentiation rule used for the entanglement regularizer.

All tensors are numpy arrays of dtype complex128 in C (row-major) order.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import DimensionError, NumericError

logger = logging.getLogger(__name__)

DTYPE = np.complex128

# Singular values below this fraction of the largest one are numerical zeros
ZERO_TOLERANCE = 1e-14


def as_tensor(data):
    """
    Convert array-like data to a C-ordered complex128 tensor

    Args:
        data (array-like): Values to convert

    Returns:
        np.ndarray: Complex tensor
    """
    return np.ascontiguousarray(np.asarray(data, dtype=DTYPE))


def contract(a, b, index_pairs):
    """
    Contract two tensors over pairs of shared axes

    Args:
        a (np.ndarray): First tensor
        b (np.ndarray): Second tensor
        index_pairs (list): (axis of a, axis of b) pairs to sum over

    Returns:
        np.ndarray: Tensor with the unpaired axes of a followed by those of b
    """
    a = np.asarray(a)
    b = np.asarray(b)
    axes_a = [int(pair[0]) for pair in index_pairs]
    axes_b = [int(pair[1]) for pair in index_pairs]

    for axis_a, axis_b in zip(axes_a, axes_b):
        if not (-a.ndim <= axis_a < a.ndim and -b.ndim <= axis_b < b.ndim):
            raise DimensionError(f"Axis pair ({axis_a}, {axis_b}) out of range for ranks {a.ndim}, {b.ndim}")
        if a.shape[axis_a] != b.shape[axis_b]:
            raise DimensionError(
                f"Cannot contract axis {axis_a} (extent {a.shape[axis_a]}) "
                f"with axis {axis_b} (extent {b.shape[axis_b]})"
            )

    return np.tensordot(a, b, axes=(axes_a, axes_b))


@dataclass(frozen=True, eq=False)
class SvdResult:
    """
    Truncated singular value decomposition of a tensor split into rows and columns

    left_isometry has shape (*row_extents, rank), right_isometry has shape
    (rank, *column_extents); singular_values are real, non-negative and
    sorted in descending order.
    """
    left_isometry: np.ndarray
    singular_values: np.ndarray
    right_isometry: np.ndarray
    truncation_error: float

    @property
    def rank(self):
        return len(self.singular_values)

    def left_matrix(self):
        """Left isometry reshaped to a (rows, rank) matrix"""
        return self.left_isometry.reshape(-1, self.rank)

    def right_matrix(self):
        """Right isometry reshaped to a (rank, columns) matrix"""
        return self.right_isometry.reshape(self.rank, -1)

    def reconstruct(self):
        """
        Rebuild the kept part of the decomposed tensor

        Returns:
            np.ndarray: U diag(s) V^dagger reshaped to the original axes
        """
        rows = self.left_isometry.shape[:-1]
        cols = self.right_isometry.shape[1:]
        matrix = (self.left_matrix() * self.singular_values) @ self.right_matrix()
        return matrix.reshape(rows + cols)


def _split_axes(ndim, split):
    if isinstance(split, (int, np.integer)):
        if not 0 < split < ndim:
            raise DimensionError(f"Split position {split} invalid for a rank-{ndim} tensor")
        return list(range(split)), list(range(split, ndim))

    row_axes, col_axes = (list(axes) for axes in split)
    if sorted(row_axes + col_axes) != list(range(ndim)) or not row_axes or not col_axes:
        raise DimensionError(f"Axis partition {split} does not cover a rank-{ndim} tensor")
    return row_axes, col_axes


def _lapack_svd(matrix):
    try:
        return scipy.linalg.svd(matrix, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge on ill-conditioned input
        logger.warning("gesdd did not converge, retrying with gesvd")
        return scipy.linalg.svd(matrix, full_matrices=False, lapack_driver="gesvd")


def svd_truncated(a, split, cutoff=1e-6, max_rank=None):
    """
    Decompose a tensor across an axis partition and discard small singular values

    The smallest singular values are dropped while the discarded weight
    (sum of discarded squares over the total) stays at or below `cutoff`;
    `max_rank` caps the kept rank even if that exceeds the cutoff.

    Args:
        a (np.ndarray): Tensor to decompose
        split (int or tuple): Number of leading row axes, or (row_axes, column_axes)
        cutoff (float): Largest tolerated relative discarded weight
        max_rank (int, optional): Largest number of kept singular values

    Returns:
        SvdResult: Isometries, kept singular values and truncation error
    """
    if cutoff < 0:
        raise ValueError(f"cutoff must be non-negative, got {cutoff}")
    if max_rank is not None and max_rank < 1:
        raise ValueError(f"max_rank must be positive, got {max_rank}")

    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise NumericError("svd_truncated received non-finite input")

    row_axes, col_axes = _split_axes(a.ndim, split)
    transposed = np.transpose(a, row_axes + col_axes)
    row_shape = transposed.shape[:len(row_axes)]
    col_shape = transposed.shape[len(row_axes):]
    matrix = transposed.reshape(int(np.prod(row_shape)), int(np.prod(col_shape))).astype(DTYPE, copy=False)

    u, s, vh = _lapack_svd(matrix)

    weights = s ** 2
    total = float(np.sum(weights))
    if total == 0.0:
        # Zero tensor: keep a single zero singular value so shapes stay valid
        keep = 1
        truncation_error = 0.0
    else:
        # tail[k] = relative weight discarded when keeping k values
        tail = np.append(np.cumsum(weights[::-1])[::-1], 0.0) / total
        keep = int(np.argmax(tail <= cutoff))
        keep = max(keep, 1)
        nonzero = int(np.count_nonzero(s > ZERO_TOLERANCE * s[0]))
        keep = min(keep, max(nonzero, 1))
        if max_rank is not None and keep > max_rank:
            keep = max_rank
            logger.debug(f"max_rank {max_rank} forces discarded weight {tail[keep]:.3e} above cutoff {cutoff:.1e}")
        truncation_error = float(tail[keep])

    return SvdResult(
        left_isometry=np.ascontiguousarray(u[:, :keep]).reshape(row_shape + (keep,)),
        singular_values=np.ascontiguousarray(s[:keep]),
        right_isometry=np.ascontiguousarray(vh[:keep, :]).reshape((keep,) + col_shape),
        truncation_error=truncation_error,
    )


def singular_value_gradient(result, upstream):
    """
    Back-propagate a gradient on the kept singular values to the decomposed matrix

    With dL = sum_i g_i d(lambda_i) and d(lambda_i) = Re[(U^dagger dA V)_ii],
    the gradient is U diag(g) V^dagger, in the convention where a complex
    gradient packs dL/dRe(A) + i dL/dIm(A). Singular vectors are not
    differentiated.

    Args:
        result (SvdResult): Decomposition the singular values came from
        upstream (array-like): dL/d(lambda_i) for each kept singular value

    Returns:
        np.ndarray: Gradient with the (rows, columns) matrix shape of the input
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (result.rank,):
        raise DimensionError(f"Upstream gradient has shape {upstream.shape}, expected ({result.rank},)")
    return (result.left_matrix() * upstream) @ result.right_matrix()


def pairwise_sum(values):
    """
    Sum along the first axis with a fixed binary-tree reduction order

    The result depends only on the values, not on threading or vectorization,
    which keeps sampled estimates bit-reproducible. Works on numpy arrays and
    torch tensors.

    Args:
        values (array or torch.Tensor): Values to reduce along axis 0

    Returns:
        Same type as input with the first axis removed
    """
    n = values.shape[0]
    if n == 0:
        return values.sum(0)

    while values.shape[0] > 1:
        if values.shape[0] % 2:
            values = _concat_zero(values)
        values = values[0::2] + values[1::2]
    return values[0]


def _concat_zero(values):
    if isinstance(values, np.ndarray):
        return np.concatenate([values, np.zeros_like(values[:1])])
    import torch
    return torch.cat([values, torch.zeros_like(values[:1])])
