"""Geometry of the discrete cylinder (Z/NZ)^d x Z and of the lattice Z^(d+1).

Torus residues are normalised into [0, N) when a point is constructed, so
nothing downstream ever has to worry about aliasing.
"""
from __future__ import annotations

import ast
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class TorusParams:
    N: int
    d: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"torus side N must be an integer >= 2, got {self.N!r}")
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"torus dimension d must be an integer >= 2, got {self.d!r}")

    @property
    def dim(self) -> int:
        """Dimension d + 1 of the ambient lattice."""
        return self.d + 1

    @property
    def level_size(self) -> int:
        return self.N ** self.d


@dataclass(frozen=True)
class LatticePoint:
    coords: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))

    def __add__(self, other: "LatticePoint") -> "LatticePoint":
        if len(other.coords) != len(self.coords):
            raise ValueError("dimension mismatch")
        return LatticePoint(tuple(a + b for a, b in zip(self.coords, other.coords)))

    def __len__(self) -> int:
        return len(self.coords)

    def __iter__(self):
        return iter(self.coords)


@dataclass(frozen=True)
class CylinderPoint:
    y: tuple[int, ...]
    z: int
    N: int

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(int(c) % self.N for c in self.y))
        object.__setattr__(self, "z", int(self.z))

    @classmethod
    def make(cls, y: Sequence[int], z: int, params: TorusParams) -> "CylinderPoint":
        if len(y) != params.d:
            raise ValueError(f"expected {params.d} torus coordinates, got {len(y)}")
        return cls(tuple(y), z, params.N)

    def shifted(self, offset: Sequence[int]) -> "CylinderPoint":
        """Translate by a (d+1)-vector, i.e. ``pi_E(offset) + self``."""
        return CylinderPoint(
            tuple(a + b for a, b in zip(self.y, offset[:-1])), self.z + offset[-1], self.N
        )

    def as_tuple(self) -> tuple[int, ...]:
        return (*self.y, self.z)


def project_to_cylinder(p: LatticePoint | Sequence[int], params: TorusParams) -> CylinderPoint:
    coords = p.coords if isinstance(p, LatticePoint) else tuple(p)
    if len(coords) != params.dim:
        raise ValueError(f"expected {params.dim} coordinates, got {len(coords)}")
    return CylinderPoint(coords[:-1], coords[-1], params.N)


def neighbors(x: CylinderPoint, params: TorusParams) -> list[CylinderPoint]:
    """The 2(d+1) nearest neighbours, coordinate index ascending, minus before plus."""
    out = []
    for i in range(params.dim):
        for s in (-1, 1):
            e = [0] * params.dim
            e[i] = s
            out.append(x.shifted(e))
    return out


def torus_distance(a: int, b: int, N: int) -> int:
    r = (a - b) % N
    return min(r, N - r)


def linf_distance(a: CylinderPoint, b: CylinderPoint, params: TorusParams) -> int:
    terms = [torus_distance(u, v, params.N) for u, v in zip(a.y, b.y)]
    terms.append(abs(a.z - b.z))
    return max(terms)


@dataclass(frozen=True)
class Pattern:
    """A finite set of lattice offsets; duplicates are dropped, order is canonical."""

    offsets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        pts = sorted({tuple(int(c) for c in o) for o in self.offsets})
        dims = {len(o) for o in pts}
        if len(dims) > 1:
            raise ValueError("pattern offsets have mixed dimensions")
        object.__setattr__(self, "offsets", tuple(pts))

    @classmethod
    def of(cls, offsets: Iterable[Sequence[int]]) -> "Pattern":
        return cls(tuple(tuple(o) for o in offsets))

    @classmethod
    def empty(cls) -> "Pattern":
        return cls(())

    @classmethod
    def box(cls, lo: Sequence[int], hi: Sequence[int]) -> "Pattern":
        """All integer points of the closed box [lo, hi]."""
        ranges = [range(a, b + 1) for a, b in zip(lo, hi)]
        return cls(tuple(itertools.product(*ranges)))

    def __len__(self) -> int:
        return len(self.offsets)

    def __iter__(self):
        return iter(self.offsets)

    def __contains__(self, item) -> bool:
        return tuple(item) in set(self.offsets)

    @property
    def dim(self) -> int | None:
        return len(self.offsets[0]) if self.offsets else None

    def diameter(self) -> int:
        """l-infinity diameter (0 for a single point or the empty pattern)."""
        if len(self.offsets) < 2:
            return 0
        cols = list(zip(*self.offsets))
        return max(max(c) - min(c) for c in cols)

    def translate(self, v: Sequence[int]) -> "Pattern":
        return Pattern(tuple(tuple(a + b for a, b in zip(o, v)) for o in self.offsets))

    def union(self, other: "Pattern") -> "Pattern":
        return Pattern(self.offsets + other.offsets)

    def to_literal(self) -> str:
        return "[" + ",".join("(" + ",".join(str(c) for c in o) + ")" for o in self.offsets) + "]"


def parse_pattern(text: str) -> Pattern:
    """Parse a pattern literal such as ``[(0,0,0), (1,0,0)]``.

    Grammar (whitespace-insensitive)::

        pattern := "[" [ tuple ("," tuple)* [","] ] "]"
        tuple   := "(" int ("," int)* [","] ")"

    All tuples must have the same length.
    """
    try:
        value = ast.literal_eval(text.strip())
    except (ValueError, SyntaxError) as exc:
        raise ValueError(f"malformed pattern literal: {text!r}") from exc
    if not isinstance(value, (list, tuple)):
        raise ValueError(f"pattern literal must be a list of tuples: {text!r}")
    if value and isinstance(value[0], int):
        # a single bare tuple, e.g. "(0,0,0)"
        value = [value]
    offsets = []
    for item in value:
        if not isinstance(item, (list, tuple)) or not all(isinstance(c, int) for c in item):
            raise ValueError(f"pattern entries must be integer tuples: {item!r}")
        offsets.append(tuple(item))
    return Pattern.of(offsets)


@dataclass(frozen=True)
class Window:
    """A pattern placed at a base point of the cylinder.

    ``wrapped`` is set when two offsets land on the same cylinder site, which
    happens once the pattern is not injectively embedded in the torus.
    """

    base: CylinderPoint
    pattern: Pattern
    params: TorusParams

    @property
    def sites(self) -> tuple[CylinderPoint, ...]:
        return tuple(self.base.shifted(o) for o in self.pattern)

    @property
    def site_set(self) -> frozenset[CylinderPoint]:
        return frozenset(self.sites)

    @property
    def wrapped(self) -> bool:
        return len(self.site_set) < len(self.pattern)

    def __post_init__(self):
        if self.pattern.dim is not None and self.pattern.dim != self.params.dim:
            raise ValueError(
                f"pattern dimension {self.pattern.dim} does not match d+1={self.params.dim}"
            )
