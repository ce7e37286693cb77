"""Feature fields on a square pixel grid and the operations acting on them.

Pixel ``(row, col)`` has physical coordinates ``x = col - c``, ``y = c - row``
with ``c = (H - 1) / 2``, so positive angles rotate counterclockwise as the
image is displayed.  A rotation by ``pi/2`` is ``np.rot90`` over the last two
axes.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from .groups import GroupElement, Representation, element, permute, rep_matrix, trivial

__all__ = [
    "FeatureField",
    "LiftedStack",
    "Kernel",
    "FormatError",
    "is_exact",
    "rotate_array",
    "rotate_grid",
    "validity_mask",
    "rotate_kernel_operator",
    "rotate_pixel",
    "act",
    "act_array",
    "lift",
    "correlate",
    "correlate_backward",
    "cross_correlate",
    "crop",
    "crop_array",
    "embed",
    "pad",
    "field_to_bytes",
    "field_from_bytes",
    "write_field",
    "read_field",
]


class FormatError(ValueError):
    """Raised when a binary container is malformed."""


@dataclass(frozen=True, eq=False)
class FeatureField:
    data: np.ndarray
    rep: Representation = trivial()

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"field data must be channels x H x W, got shape {self.data.shape}")
        if self.data.shape[0] % self.rep.dim:
            raise ValueError(
                f"{self.data.shape[0]} channels is not a multiple of rep dim {self.rep.dim}"
            )

    @property
    def multiplicity(self) -> int:
        return self.data.shape[0] // self.rep.dim

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "FeatureField":
        return FeatureField(data, self.rep)


@dataclass(frozen=True, eq=False)
class LiftedStack:
    data: np.ndarray  # n x C x H x W, slice i rotated by 2*pi*i/n
    n: int
    source_rep: Representation = trivial()

    def slice(self, i: int) -> FeatureField:
        return FeatureField(self.data[i], self.source_rep)


@dataclass(frozen=True, eq=False)
class Kernel:
    data: np.ndarray  # out x in x r x r

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[2] != self.data.shape[3]:
            raise ValueError(f"kernel must be out x in x r x r, got {self.data.shape}")
        if self.data.shape[2] % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.data.shape[2]}")

    @property
    def r(self) -> int:
        return self.data.shape[2]


# ----------------------------------------------------------------------------
# rotations


def is_exact(g: GroupElement) -> bool:
    """True when ``g`` is a multiple of a quarter turn."""
    return (4 * g.index) % g.n == 0


def _split(g: GroupElement) -> tuple[int, float]:
    """Quarter turns and the residual angle in [0, pi/2)."""
    k = (4 * g.index) // g.n
    return k, 2.0 * math.pi * g.index / g.n - k * math.pi / 2


def _source_coords(h: int, w: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    x, y = cols - cc, cr - rows
    c, s = math.cos(theta), math.sin(theta)
    xs = c * x + s * y
    ys = -s * x + c * y
    return cr - ys, xs + cc


@lru_cache(maxsize=256)
def _bilinear_pull(h: int, w: int, theta: float) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse operator sampling f at rot(-theta) x, plus its validity mask."""
    src_r, src_c = _source_coords(h, w, theta)
    # snap round-off so lattice-aligned samples hit a single pixel
    src_r = np.where(np.abs(src_r - np.round(src_r)) < 1e-9, np.round(src_r), src_r)
    src_c = np.where(np.abs(src_c - np.round(src_c)) < 1e-9, np.round(src_c), src_c)
    r0, c0 = np.floor(src_r), np.floor(src_c)
    fr, fc = src_r - r0, src_c - c0
    out_idx = np.arange(h * w)
    rows, cols, vals = [], [], []
    for dr, dc, wt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr, cc = (r0 + dr).astype(int).ravel(), (c0 + dc).astype(int).ravel()
        wt = wt.ravel()
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w) & (wt != 0)
        rows.append(out_idx[ok])
        cols.append(rr[ok] * w + cc[ok])
        vals.append(wt[ok])
    m = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(h * w, h * w)
    )
    eps = 1e-9
    mask = (src_r >= -eps) & (src_r <= h - 1 + eps) & (src_c >= -eps) & (src_c <= w - 1 + eps)
    return m, mask


def _apply_sparse(m: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    flat = x.reshape(-1, h * w)
    out = (m @ flat.T).T
    return np.asarray(out, dtype=x.dtype).reshape(x.shape)


def rotate_array(x: np.ndarray, g: GroupElement, mode: str = "auto") -> np.ndarray:
    """Rotate the last two (square) axes of ``x`` about the grid center.

    ``mode`` is ``"exact-90"``, ``"bilinear"`` or ``"auto"`` (exact whenever
    possible).  Bilinear rotations decompose into a residual turn below pi/2
    followed by exact quarter turns, so they agree exactly with ``exact-90`` on
    the C_4 subgroup.
    """
    h, w = x.shape[-2:]
    if h != w:
        raise ValueError(f"rotation needs a square grid, got {h}x{w}")
    if mode == "exact-90" and not is_exact(g):
        raise ValueError(f"rotation by 2*pi*{g.index}/{g.n} is not a multiple of pi/2")
    if mode not in ("exact-90", "bilinear", "auto"):
        raise ValueError(f"unknown rotation mode {mode!r}")
    k, resid = _split(g)
    out = x
    if resid != 0.0:
        m, _ = _bilinear_pull(h, w, resid)
        out = _apply_sparse(m, out)
    if k % 4:
        out = np.rot90(out, k, axes=(-2, -1))
    return np.ascontiguousarray(out) if out is not x else x


def rotate_array_adjoint(x: np.ndarray, g: GroupElement) -> np.ndarray:
    """Transpose of :func:`rotate_array` as a linear map."""
    k, resid = _split(g)
    out = x
    if k % 4:
        out = np.rot90(out, -k, axes=(-2, -1))
    if resid != 0.0:
        h = x.shape[-1]
        m, _ = _bilinear_pull(h, h, resid)
        out = _apply_sparse(m.T.tocsr(), np.ascontiguousarray(out))
    return np.ascontiguousarray(out)


def validity_mask(size: int, g: GroupElement) -> np.ndarray:
    """Pixels whose rotated source lies inside the grid (all True for exact turns)."""
    k, resid = _split(g)
    if resid == 0.0:
        return np.ones((size, size), dtype=bool)
    _, mask = _bilinear_pull(size, size, resid)
    return np.rot90(mask, k).copy()


def rotate_grid(field: FeatureField, g: GroupElement, mode: str = "auto", return_mask: bool = False):
    """Pixel-only rotation ``x -> f(rho_1(g)^-1 x)`` of a field."""
    out = field.with_data(rotate_array(field.data, g, mode))
    if return_mask:
        return out, validity_mask(field.data.shape[-1], g)
    return out


@lru_cache(maxsize=256)
def rotate_kernel_operator(r: int, n: int, index: int) -> np.ndarray:
    """Dense (r*r) x (r*r) operator rotating a filter by ``2*pi*index/n``.

    Quarter turns are permutations.  Other angles splat each tap bilinearly to
    its rotated position (the transpose of a bilinear pull by the opposite
    angle), which keeps correlation against smooth fields accurate to second
    order.
    """
    g = element(n, index)
    k, resid = _split(g)
    eye = np.eye(r * r).reshape(r * r, r, r)
    if resid != 0.0:
        m, _ = _bilinear_pull(r, r, -resid)
        eye = _apply_sparse(m.T.tocsr(), eye)
    rot = np.rot90(eye, k, axes=(-2, -1)).reshape(r * r, r * r)
    return np.ascontiguousarray(rot.T)  # row = output tap, column = input tap


def rotate_pixel(uv, g: GroupElement | float, size: int) -> tuple[float, float]:
    """Image of pixel ``(row, col)`` under a rotation about the grid center."""
    theta = g.angle if isinstance(g, GroupElement) else float(g)
    c = (size - 1) / 2.0
    x, y = uv[1] - c, c - uv[0]
    ct, st = math.cos(theta), math.sin(theta)
    xr, yr = ct * x - st * y, st * x + ct * y
    return c - yr, xr + c


# ----------------------------------------------------------------------------
# group action and lifting


def act_array(g: GroupElement, data: np.ndarray, rep: Representation, mode: str = "auto") -> np.ndarray:
    if rep.kind != "trivial" and rep.n != g.n:
        raise ValueError(f"element of C_{g.n} acting on a C_{rep.n} field")
    out = rotate_array(data, g, mode)
    if rep.kind == "standard":
        m = rep_matrix(rep, g)
        blocks = out.reshape((-1, 2) + out.shape[1:])
        return np.einsum("ij,bjhw->bihw", m, blocks).reshape(out.shape)
    return permute(rep, g, out, axis=0)


def act(g: GroupElement, field: FeatureField, mode: str = "auto") -> FeatureField:
    """``[T_g f](x) = rho(g) f(rho_1(g)^-1 x)``."""
    return field.with_data(act_array(g, field.data, field.rep, mode))


def lift(field: FeatureField, n: int, mode: str = "auto") -> LiftedStack:
    """Stack of the ``n`` pixel-rotated copies of ``field``."""
    data = np.stack([rotate_array(field.data, element(n, i), mode) for i in range(n)])
    return LiftedStack(data, n, field.rep)


# ----------------------------------------------------------------------------
# correlation


def correlate(x: np.ndarray, w: np.ndarray, padding: int = 0) -> np.ndarray:
    """``out[o, v] = sum_{c, u} x[c, v + u] w[o, c, u]`` over the zero-padded input."""
    if x.shape[0] != w.shape[1]:
        raise ValueError(f"kernel expects {w.shape[1]} input channels, field has {x.shape[0]}")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    r, s = w.shape[2:]
    if r > x.shape[1] or s > x.shape[2]:
        raise ValueError(f"kernel {r}x{s} larger than padded field {x.shape[1]}x{x.shape[2]}")
    win = sliding_window_view(x, (r, s), axis=(1, 2))  # C x Ho x Wo x r x s
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))


def correlate_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray, padding: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`correlate` with respect to ``x`` and ``w``."""
    r, s = w.shape[2:]
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    win = sliding_window_view(xp, (r, s), axis=(1, 2))
    dw = np.tensordot(dy, win, axes=([1, 2], [1, 2]))
    dyp = np.pad(dy, ((0, 0), (r - 1, r - 1), (s - 1, s - 1)))
    dxp = correlate(dyp, np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)))
    if padding:
        dxp = dxp[:, padding:-padding, padding:-padding]
    return dxp, dw


def cross_correlate(kernel: Kernel | np.ndarray, field: FeatureField, padding: int = 0) -> FeatureField:
    w = kernel.data if isinstance(kernel, Kernel) else np.asarray(kernel)
    return FeatureField(correlate(field.data, w, padding))


# ----------------------------------------------------------------------------
# crop / pad


def crop_array(x: np.ndarray, center, size: int) -> np.ndarray:
    """``size x size`` window of ``x`` centered on pixel ``center``; zero outside."""
    if size % 2 == 0:
        raise ValueError(f"crop size must be odd, got {size}")
    h = size // 2
    r, c = int(center[0]), int(center[1])
    out = np.zeros(x.shape[:-2] + (size, size), dtype=x.dtype)
    r0, r1 = max(r - h, 0), min(r + h + 1, x.shape[-2])
    c0, c1 = max(c - h, 0), min(c + h + 1, x.shape[-1])
    if r0 < r1 and c0 < c1:
        out[..., r0 - (r - h) : r1 - (r - h), c0 - (c - h) : c1 - (c - h)] = x[..., r0:r1, c0:c1]
    return out


def crop(field: FeatureField, center, size: int) -> FeatureField:
    return field.with_data(crop_array(field.data, center, size))


def embed(patch: np.ndarray, center, shape) -> np.ndarray:
    """Adjoint of :func:`crop_array`: place ``patch`` into zeros of ``shape``."""
    size = patch.shape[-1]
    h = size // 2
    big = np.zeros(tuple(shape[:-2]) + (shape[-2] + 2 * h, shape[-1] + 2 * h), dtype=patch.dtype)
    r, c = int(center[0]), int(center[1])
    big[..., r : r + size, c : c + size] += patch
    return big[..., h : h + shape[-2], h : h + shape[-1]]


def pad(field: FeatureField, d: int) -> FeatureField:
    if d == 0:
        return field
    return field.with_data(np.pad(field.data, ((0, 0), (d, d), (d, d))))


# ----------------------------------------------------------------------------
# ETPF container

_FIELD_MAGIC = b"ETPF"


def field_to_bytes(field: FeatureField) -> bytes:
    header = json.dumps(
        {
            "shape": list(field.data.shape),
            "rep_kind": field.rep.kind,
            "n": field.rep.n,
            "k": field.rep.k,
            "multiplicity": field.multiplicity,
        },
        sort_keys=True,
    ).encode()
    body = np.ascontiguousarray(field.data, dtype="<f4").tobytes()
    return _FIELD_MAGIC + struct.pack("<I", len(header)) + header + body


def _read_exact(stream, size: int) -> bytes:
    buf = stream.read(size)
    if len(buf) != size:
        raise FormatError(f"truncated stream: wanted {size} bytes, got {len(buf)}")
    return buf


def read_field_stream(stream) -> FeatureField:
    if _read_exact(stream, 4) != _FIELD_MAGIC:
        raise FormatError("bad field magic")
    (hlen,) = struct.unpack("<I", _read_exact(stream, 4))
    try:
        header = json.loads(_read_exact(stream, hlen))
        shape = tuple(int(s) for s in header["shape"])
        rep = Representation(header["rep_kind"], int(header["n"]), int(header["k"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad field header: {exc}") from exc
    count = int(np.prod(shape))
    data = np.frombuffer(_read_exact(stream, 4 * count), dtype="<f4").reshape(shape)
    return FeatureField(data.astype(np.float32), rep)


def field_from_bytes(buf: bytes) -> FeatureField:
    return read_field_stream(io.BytesIO(buf))


def write_field(field: FeatureField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(field))


def read_field(path) -> FeatureField:
    with open(path, "rb") as fh:
        return read_field_stream(fh)
