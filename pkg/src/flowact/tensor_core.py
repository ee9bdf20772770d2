"""Array helpers, seeded randomness, FTEN serialization and the gradient oracle.

Tensors are plain row-major ``numpy.ndarray`` values. Two numeric profiles
exist: ``float64`` for gradient checks and oracles, ``float32`` for training.
"""

from __future__ import annotations

import hashlib
import io
import struct
from typing import BinaryIO, Callable, Sequence

import numpy as np

F64 = np.float64
F32 = np.float32
PROFILES = {"f64": F64, "f32": F32}

FTEN_MAGIC = b"FTEN"
FTEN_VERSION = 1
_DTYPE_CODES = {np.dtype(F32): 1, np.dtype(F64): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class NumericError(ArithmeticError):
    """Raised when a computation produces non-finite values."""


class FormatError(ValueError):
    """Raised on malformed serialized data."""


def profile_dtype(profile: str) -> np.dtype:
    try:
        return np.dtype(PROFILES[profile])
    except KeyError:
        raise ValueError(f"unknown numeric profile {profile!r}; expected one of {sorted(PROFILES)}") from None


def tensor(data, dtype=F64) -> np.ndarray:
    """Build a C-contiguous tensor of the given dtype."""
    return np.ascontiguousarray(np.asarray(data, dtype=dtype))


def strides_for(shape: Sequence[int]) -> tuple[int, ...]:
    """Row-major element strides for ``shape``."""
    strides = []
    acc = 1
    for dim in reversed(shape):
        strides.append(acc)
        acc *= int(dim)
    return tuple(reversed(strides))


def flat_offset(index: Sequence[int], shape: Sequence[int]) -> int:
    if len(index) != len(shape):
        raise ShapeError(f"index rank {len(index)} does not match shape {tuple(shape)}")
    return sum(int(i) * s for i, s in zip(index, strides_for(shape)))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def concat_axis(tensors: Sequence[np.ndarray], axis: int) -> np.ndarray:
    """Concatenate along ``axis``; all other dimensions must agree."""
    if not tensors:
        raise ShapeError("concat_axis needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref):
            raise ShapeError(f"concat rank mismatch: {ref} vs {t.shape}")
        ax = axis % len(ref)
        if any(d1 != d2 for i, (d1, d2) in enumerate(zip(ref, t.shape)) if i != ax):
            raise ShapeError(f"concat shape mismatch off axis {axis}: {ref} vs {t.shape}")
    return np.concatenate([np.asarray(t) for t in tensors], axis=axis)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, epsilon: float = 1e-5,
                               indices=None) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    ``x`` is perturbed in place and restored after each probe. When
    ``indices`` (flat positions) is given, only those entries are probed and
    the rest of the returned gradient is left at zero.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    grad = np.zeros(x.shape, dtype=F64)
    flat = x.reshape(-1)
    if not np.shares_memory(flat, x):
        raise ValueError("finite_difference_gradient needs a contiguous array")
    gflat = grad.reshape(-1)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = float(f(x))
        flat[i] = orig - epsilon
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value while probing index {i}")
        gflat[i] = (fp - fm) / (2.0 * epsilon)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=F64).ravel()
    n = np.asarray(numeric, dtype=F64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def derive_seed(seed: int, purpose: str) -> int:
    """Derive a 64-bit sub-seed as the first 8 bytes (little-endian) of
    SHA-256 over ``"<seed>:<purpose>"``."""
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class SeededRng:
    """Deterministic generator backed by the Philox-4x64 counter-based
    bit generator, which yields the same stream on every platform."""

    algorithm = "philox4x64-10"

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def child(self, purpose: str) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, purpose))

    def uniform(self, low=0.0, high=1.0, size=None, dtype=F64):
        return self._gen.uniform(low, high, size).astype(dtype, copy=False)

    def normal(self, loc=0.0, scale=1.0, size=None, dtype=F64):
        return self._gen.normal(loc, scale, size).astype(dtype, copy=False)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def raw(self, n: int) -> np.ndarray:
        """``n`` raw 64-bit draws."""
        return self._gen.bit_generator.random_raw(n)


# --- FTEN -------------------------------------------------------------------

def write_ften(fh: BinaryIO, arr: np.ndarray) -> int:
    """Write one FTEN record; returns bytes written."""
    arr = np.asarray(arr)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"FTEN supports float32/float64 only, got {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("rank too large for FTEN")
    header = FTEN_MAGIC + struct.pack("<BBB", FTEN_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes()
    fh.write(header)
    fh.write(payload)
    return len(header) + len(payload)


def read_ften(fh: BinaryIO) -> np.ndarray:
    head = fh.read(7)
    if len(head) < 7 or head[:4] != FTEN_MAGIC:
        raise FormatError("not an FTEN record (bad magic)")
    version, code, rank = struct.unpack("<BBB", head[4:])
    if version != FTEN_VERSION:
        raise FormatError(f"unsupported FTEN version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown FTEN dtype code {code}")
    dims_raw = fh.read(4 * rank)
    if len(dims_raw) != 4 * rank:
        raise FormatError("truncated FTEN dims")
    shape = struct.unpack(f"<{rank}I", dims_raw)
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise FormatError("truncated FTEN payload")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def ften_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_ften(buf, arr)
    return buf.getvalue()


def save_ften(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_ften(fh, arr)


def load_ften(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_ften(fh)
