"""Numeric core: validation helpers, deterministic RNG, small linear algebra,
gradient checking, and the VDT1 tensor file format.

Everything computes in float64.  The only place float32 appears is the VDT1
payload on disk; readers up-convert immediately.
"""

from __future__ import annotations

import os
import struct
import tempfile
import warnings
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import DegenerateInputWarning, DimensionError, NumericError, ParameterError

__all__ = [
    "Rng",
    "as_f64",
    "ensure_vector",
    "ensure_matrix",
    "ensure_finite",
    "matmul",
    "cosine",
    "l2_norm",
    "normalize_rows",
    "grad_check",
    "relative_error",
    "read_vdt1",
    "write_vdt1",
    "atomic_write_bytes",
    "atomic_write_text",
]

# ---------------------------------------------------------------------------
# validation helpers


def as_f64(x, name: str = "array") -> np.ndarray:
    """Convert to a float64 ndarray, rejecting non-numeric input."""
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DimensionError(f"{name}: not convertible to a numeric array: {exc}") from exc
    return arr


def ensure_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    arr = as_f64(x, name)
    if arr.ndim != 1:
        raise DimensionError(f"{name}: expected 1-d array, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name}: expected length {dim}, got {arr.shape[0]}")
    return arr


def ensure_matrix(x, rows: int | None = None, cols: int | None = None, name: str = "matrix") -> np.ndarray:
    arr = as_f64(x, name)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected 2-d array, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise DimensionError(f"{name}: expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionError(f"{name}: expected {cols} columns, got {arr.shape[1]}")
    return arr


def ensure_finite(x: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name}: contains non-finite values")
    return x


# ---------------------------------------------------------------------------
# deterministic RNG

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_SPAWN_SALT = np.uint64(0x5851F42D4C957F2D)
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)
_INV_2_53 = 2.0 ** -53


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 values."""
    z = (z ^ (z >> np.uint64(30))) * _MIX_A
    z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


def _fnv1a64(data: bytes) -> np.uint64:
    # plain-int arithmetic avoids numpy's overflow warning on uint64 multiply
    h = int(_FNV_OFFSET)
    prime = int(_FNV_PRIME)
    for byte in data:
        h = ((h ^ byte) * prime) & 0xFFFFFFFFFFFFFFFF
    return np.uint64(h)


class Rng:
    """Counter-based deterministic generator (SplitMix64 stream).

    Value k of a stream with seed s is mix64(s + (k+1)*gamma), so any draw
    can be reproduced from (seed, counter) alone.  ``spawn`` derives an
    independent child stream from a label without consuming draws.
    """

    def __init__(self, seed: int):
        if not isinstance(seed, (int, np.integer)):
            raise ParameterError(f"seed must be an integer, got {type(seed).__name__}")
        self._seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    @property
    def counter(self) -> int:
        return self._counter

    def _raw(self, n: int) -> np.ndarray:
        ks = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return _mix64(self._seed + ks * _GAMMA)

    def uniform(self, shape: int | tuple[int, ...] = ()) -> np.ndarray | float:
        """Uniforms on the open interval (0, 1)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        vals = ((self._raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53
        return vals.reshape(shape) if shape else float(vals[0])

    def normal(self, shape: int | tuple[int, ...] = ()) -> np.ndarray | float:
        """Standard normals via the inverse normal CDF of open-interval uniforms."""
        u = self.uniform(shape)
        out = ndtri(u)
        return out if isinstance(u, np.ndarray) else float(out)

    def integers(self, low: int, high: int, shape: int | tuple[int, ...] = ()) -> np.ndarray | int:
        """Integers in [low, high).  Modulo reduction; bias is O(range/2^64)."""
        if high <= low:
            raise ParameterError(f"integers: need high > low, got [{low}, {high})")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        span = np.uint64(high - low)
        vals = (self._raw(n) % span).astype(np.int64) + low
        return vals.reshape(shape) if shape else int(vals[0])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of arange(n)."""
        out = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        if replace:
            return self.integers(0, n, (size,))
        if size > n:
            raise ParameterError(f"choice: cannot draw {size} from {n} without replacement")
        return self.permutation(n)[:size]

    def spawn(self, tag: int | str) -> "Rng":
        """Child stream keyed by a label; independent of this stream's counter."""
        if isinstance(tag, str):
            t = _fnv1a64(tag.encode("utf-8"))
        elif isinstance(tag, (int, np.integer)):
            t = np.uint64(int(tag) & 0xFFFFFFFFFFFFFFFF)
        else:
            raise ParameterError(f"spawn tag must be int or str, got {type(tag).__name__}")
        child = _mix64(np.atleast_1d((self._seed ^ _SPAWN_SALT) + _mix64(np.atleast_1d(t))))[0]
        return Rng(int(child))


# ---------------------------------------------------------------------------
# small linear algebra


def matmul(a, b, name: str = "matmul") -> np.ndarray:
    am = ensure_matrix(a, name=f"{name}: left")
    bm = ensure_matrix(b, name=f"{name}: right")
    if am.shape[1] != bm.shape[0]:
        raise DimensionError(
            f"{name}: inner dimensions disagree, {am.shape} vs {bm.shape}"
        )
    return am @ bm


def l2_norm(x) -> float:
    return float(np.linalg.norm(ensure_vector(x)))


def cosine(a, b) -> float:
    """Cosine similarity clamped to [-1, 1]; zero-norm input yields 0.0."""
    av = ensure_vector(a, name="cosine: a")
    bv = ensure_vector(b, dim=av.shape[0], name="cosine: b")
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine of a zero-norm vector, returning 0.0", DegenerateInputWarning)
        return 0.0
    return float(np.clip(float(av @ bv) / (na * nb), -1.0, 1.0))


def normalize_rows(x, name: str = "normalize_rows") -> np.ndarray:
    """Scale each row to unit norm; zero rows pass through with a warning."""
    m = ensure_matrix(x, name=name)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    zero = norms[:, 0] == 0.0
    if np.any(zero):
        warnings.warn(f"{name}: {int(zero.sum())} zero-norm rows left unnormalized", DegenerateInputWarning)
    safe = np.where(norms == 0.0, 1.0, norms)
    return m / safe


# ---------------------------------------------------------------------------
# gradient checking


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic))


def grad_check(
    f: Callable[[np.ndarray], float],
    x,
    grad,
    step: float = 1e-5,
    samples: int | None = None,
    rng: Rng | None = None,
) -> float:
    """Max relative error between ``grad`` and central differences of ``f``.

    Probes every coordinate unless ``samples`` restricts to a random subset.
    """
    x0 = as_f64(x, "grad_check: x").copy()
    g = as_f64(grad, "grad_check: grad")
    if g.shape != x0.shape:
        raise DimensionError(f"grad_check: grad shape {g.shape} != x shape {x0.shape}")
    if step <= 0.0:
        raise ParameterError("grad_check: step must be positive")
    flat_x = x0.ravel()
    flat_g = g.ravel()
    n = flat_x.size
    if samples is not None and samples < n:
        if rng is None:
            raise ParameterError("grad_check: sampling requires an rng")
        idxs: Iterable[int] = (int(i) for i in rng.choice(n, samples))
    else:
        idxs = range(n)
    worst = 0.0
    for i in idxs:
        orig = flat_x[i]
        flat_x[i] = orig + step
        fp = float(f(flat_x.reshape(x0.shape)))
        flat_x[i] = orig - step
        fm = float(f(flat_x.reshape(x0.shape)))
        flat_x[i] = orig
        numeric = (fp - fm) / (2.0 * step)
        worst = max(worst, relative_error(float(flat_g[i]), numeric))
    return worst


# ---------------------------------------------------------------------------
# VDT1 tensor files

_VDT1_MAGIC = b"VDT1"


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a sibling temp file plus rename so partial files never land."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_vdt1(path: str | Path, array) -> None:
    """Serialize a tensor: magic, u32 rank, u32 extents, f32 LE row-major payload."""
    arr = as_f64(array, "write_vdt1")
    ensure_finite(arr, "write_vdt1")
    for extent in arr.shape:
        if extent >= 2**32:
            raise DimensionError(f"write_vdt1: extent {extent} exceeds u32")
    header = _VDT1_MAGIC + struct.pack("<I", arr.ndim)
    if arr.ndim:
        header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_vdt1(path: str | Path) -> np.ndarray:
    """Read a VDT1 tensor, up-converting the payload to float64."""
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != _VDT1_MAGIC:
        raise NumericError(f"{path}: not a VDT1 file")
    (rank,) = struct.unpack_from("<I", data, 4)
    if rank > 32:
        raise NumericError(f"{path}: implausible rank {rank}")
    offset = 8
    if len(data) < offset + 4 * rank:
        raise NumericError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", data, offset) if rank else ()
    offset += 4 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = offset + 4 * count
    if len(data) != expected:
        raise NumericError(f"{path}: payload size {len(data) - offset} != {4 * count}")
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    return flat.astype(np.float64).reshape(shape)
