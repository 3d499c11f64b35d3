"""
Dense N-order tensors and the unfolding conventions every solver relies on.

Storage is first-index-fastest (Fortran order), so the mode-0 unfolding is a
plain reshape. The mode-n unfolding puts ``I_n`` on the rows and orders the
columns with the lower remaining indices varying fastest::

    column = sum_{m != n} i_m * prod_{l < m, l != n} I_l      (0-based)

``fold`` is the exact inverse of ``unfold`` for a given mode and shape; both
only permute entries, so round trips are bit-for-bit.
"""
import hashlib

import numpy as np

from tenrec.errors import ArgumentError

NORM_KINDS = ("frobenius", "l1", "linf")


class DenseTensor(object):
    """
    Immutable N-order tensor of 64-bit floats.

    The payload is a read-only Fortran-ordered ndarray; arithmetic is done by
    handing the tensor to numpy (it implements ``__array__``) and wrapping the
    result again.
    """

    __slots__ = ("_data",)

    def __init__(self, data, dims=None):
        array = np.array(data, dtype=np.float64, order="F", copy=True)
        if dims is not None:
            dims = tuple(int(d) for d in dims)
            if array.size != int(np.prod(dims, dtype=np.int64)):
                raise ArgumentError(
                    f"Payload of {array.size} values does not match dims {dims}"
                )
            array = np.reshape(array.ravel(order="F"), dims, order="F")
        if array.ndim < 1:
            raise ArgumentError("A tensor needs at least one mode")
        if any(d < 1 for d in array.shape):
            raise ArgumentError(f"Every dimension must be positive, got {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ArgumentError("Tensor entries must be finite")
        array = np.asfortranarray(array)
        array.flags.writeable = False
        self._data = array

    @classmethod
    def zeros(cls, dims):
        return cls(np.zeros(tuple(dims), order="F"))

    @classmethod
    def from_flat(cls, values, dims):
        """Build a tensor from a first-index-fastest flat payload."""
        return cls(np.asarray(values, dtype=np.float64), dims=dims)

    @property
    def data(self):
        return self._data

    @property
    def dims(self):
        return self._data.shape

    @property
    def order(self):
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    def flat(self):
        """Payload in storage order (first index fastest)."""
        return self._data.ravel(order="F")

    def checksum(self):
        digest = hashlib.sha256()
        digest.update(np.asarray(self.dims, dtype="<u8").tobytes())
        digest.update(self.flat().astype("<f8").tobytes())
        return digest.hexdigest()

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __repr__(self):
        return f"DenseTensor(dims={self.dims})"


def as_array(tensor):
    return np.asarray(tensor, dtype=np.float64)


def check_mode(mode, order):
    if isinstance(mode, bool) or not isinstance(mode, (int, np.integer)):
        raise ArgumentError(f"Mode must be an integer, got {mode!r}")
    if not 0 <= mode < order:
        raise ArgumentError(f"Mode {mode} out of range for an order-{order} tensor")
    return int(mode)


def unfold_array(array, mode):
    """Mode-`mode` unfolding of an ndarray, without validation."""
    return np.reshape(np.moveaxis(array, mode, 0), (array.shape[mode], -1), order="F")


def fold_array(matrix, mode, dims):
    """Inverse of ``unfold_array``, without validation."""
    full_shape = list(dims)
    mode_dim = full_shape.pop(mode)
    full_shape.insert(0, mode_dim)
    return np.moveaxis(np.reshape(matrix, full_shape, order="F"), 0, mode)


def unfold(tensor, mode):
    """
    Mode-`mode` matricization, returning an ``I_mode x prod_{m != mode} I_m``
    float64 array.
    """
    array = as_array(tensor)
    mode = check_mode(mode, array.ndim)
    return np.array(unfold_array(array, mode), copy=True)


def fold(matrix, mode, dims):
    """Refold a mode-`mode` unfolding into a ``DenseTensor`` of shape `dims`."""
    matrix = np.asarray(matrix, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    mode = check_mode(mode, len(dims))
    if matrix.ndim != 2:
        raise ArgumentError(f"Expected a matrix, got {matrix.ndim} dimensions")
    if any(d < 1 for d in dims):
        raise ArgumentError(f"Every dimension must be positive, got {dims}")
    rest = int(np.prod(dims, dtype=np.int64)) // dims[mode]
    if matrix.shape != (dims[mode], rest):
        raise ArgumentError(
            f"Matrix of shape {matrix.shape} cannot fold along mode {mode} "
            f"into {dims}; expected {(dims[mode], rest)}"
        )
    return DenseTensor(fold_array(matrix, mode, dims))


def mode_product_array(array, matrix, mode):
    dims = list(array.shape)
    dims[mode] = matrix.shape[0]
    return fold_array(matrix @ unfold_array(array, mode), mode, dims)


def mode_product(tensor, matrix, mode):
    """
    Mode-`mode` product ``tensor x_mode matrix``: the mode-`mode` fibers are
    multiplied by `matrix`, replacing ``I_mode`` with ``matrix.shape[0]``.
    """
    array = as_array(tensor)
    matrix = np.asarray(matrix, dtype=np.float64)
    mode = check_mode(mode, array.ndim)
    if matrix.ndim != 2 or matrix.shape[1] != array.shape[mode]:
        raise ArgumentError(
            f"Matrix of shape {matrix.shape} does not act on mode {mode} "
            f"of size {array.shape[mode]}"
        )
    return DenseTensor(mode_product_array(array, matrix, mode))


def tensor_norm(tensor, kind="frobenius"):
    values = as_array(tensor).ravel(order="F")
    if kind == "frobenius":
        return float(np.linalg.norm(values))
    if kind == "l1":
        return float(np.sum(np.abs(values)))
    if kind == "linf":
        return float(np.max(np.abs(values))) if values.size else 0.0
    raise ArgumentError(f"Unknown norm {kind!r}, expected one of {NORM_KINDS}")


def inner(left, right):
    left, right = as_array(left), as_array(right)
    if left.shape != right.shape:
        raise ArgumentError(f"Shapes differ: {left.shape} vs {right.shape}")
    return float(np.vdot(left.ravel(order="F"), right.ravel(order="F")))
