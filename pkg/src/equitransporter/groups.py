"""Cyclic rotation groups C_n and their real representations.

Convention used throughout the package: the generator of C_n acts on a
regular-representation vector by moving the last coordinate to the front,

    (x_0, x_1, ..., x_{n-1})  ->  (x_{n-1}, x_0, ..., x_{n-2}),

i.e. ``np.roll(x, 1)``.  Quotient representations use the same direction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GroupElement",
    "Representation",
    "element",
    "identity",
    "compose",
    "inverse",
    "from_angle",
    "trivial",
    "standard",
    "regular",
    "quotient",
    "rep_matrix",
    "permute",
]


@dataclass(frozen=True)
class GroupElement:
    """Rotation by ``2*pi*index/n``."""

    n: int
    index: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"group order must be positive, got {self.n}")
        if not 0 <= self.index < self.n:
            raise ValueError(f"index {self.index} outside [0, {self.n})")

    @property
    def angle(self) -> float:
        return 2.0 * math.pi * self.index / self.n

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        return compose(self, other)


def element(n: int, i: int) -> GroupElement:
    if n < 1:
        raise ValueError(f"group order must be positive, got {n}")
    return GroupElement(n, i % n)


def identity(n: int) -> GroupElement:
    return element(n, 0)


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    if g.n != h.n:
        raise ValueError(f"cannot compose elements of C_{g.n} and C_{h.n}")
    return GroupElement(g.n, (g.index + h.index) % g.n)


def inverse(g: GroupElement) -> GroupElement:
    return GroupElement(g.n, (g.n - g.index) % g.n)


def from_angle(theta: float, n: int) -> GroupElement:
    """Quantize an angle to the nearest element of C_n (half-bin ties toward zero)."""
    x = theta * n / (2.0 * math.pi)
    q = math.copysign(math.ceil(abs(x) - 0.5), x)
    return element(n, int(q))


_KINDS = ("trivial", "standard", "regular", "quotient")


@dataclass(frozen=True)
class Representation:
    kind: str
    n: int
    k: int = 1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown representation kind {self.kind!r}")
        if self.n < 1 or self.k < 1:
            raise ValueError("group order and divisor must be positive")
        if self.kind == "quotient" and self.n % self.k:
            raise ValueError(f"quotient divisor {self.k} does not divide {self.n}")

    @property
    def group_order(self) -> int:
        return self.n

    @property
    def dim(self) -> int:
        return {
            "trivial": 1,
            "standard": 2,
            "regular": self.n,
            "quotient": self.n // self.k,
        }[self.kind]

    @property
    def is_permutation(self) -> bool:
        return self.kind in ("trivial", "regular", "quotient")


def trivial(n: int = 1) -> Representation:
    return Representation("trivial", n)


def standard(n: int) -> Representation:
    return Representation("standard", n)


def regular(n: int) -> Representation:
    return Representation("regular", n)


def quotient(n: int, k: int) -> Representation:
    return Representation("quotient", n, k)


def _shift(rep: Representation, g: GroupElement) -> int:
    return g.index % rep.dim


def rep_matrix(rep: Representation, g: GroupElement) -> np.ndarray:
    """Dense matrix of ``rep`` evaluated at ``g``."""
    if rep.kind != "trivial" and g.n != rep.n:
        raise ValueError(f"element of C_{g.n} used with a C_{rep.n} representation")
    if rep.kind == "trivial":
        return np.ones((1, 1))
    if rep.kind == "standard":
        t = g.angle
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, -s], [s, c]])
    # permutation reps: column j is the image of basis vector e_j
    return np.roll(np.eye(rep.dim), _shift(rep, g), axis=0)


def permute(rep: Representation, g: GroupElement, x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Apply a permutation representation to the blocks of ``x`` along ``axis``.

    ``x.shape[axis]`` may be a multiple of ``rep.dim``; each consecutive block of
    ``rep.dim`` entries is one copy of the representation.
    """
    if not rep.is_permutation:
        raise ValueError(f"{rep.kind} representation is not a permutation")
    if rep.kind == "trivial":
        return x
    if g.n != rep.n:
        raise ValueError(f"element of C_{g.n} used with a C_{rep.n} representation")
    x = np.moveaxis(np.asarray(x), axis, 0)
    c = x.shape[0]
    if c % rep.dim:
        raise ValueError(f"{c} channels is not a multiple of rep dim {rep.dim}")
    blocks = x.reshape((c // rep.dim, rep.dim) + x.shape[1:])
    out = np.roll(blocks, _shift(rep, g), axis=1).reshape(x.shape)
    return np.moveaxis(out, 0, axis)
