"""Shapes, sup-radii and quadrature rules.

Supported outer domains are balls and axis-aligned boxes; obstacles are balls
or unions of pairwise disjoint balls.  All shape objects are frozen
dataclasses and can be shared freely.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

Array = NDArray[np.float64]


class GeometryError(ValueError):
    """Invalid shape parameters or an unsupported shape combination."""


def _vec3(x: ArrayLike) -> tuple[float, float, float]:
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise GeometryError(f"expected a 3-vector, got shape {np.shape(x)}")
    return (float(a[0]), float(a[1]), float(a[2]))


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[Array, Array]:
    """Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_legendre_interval(n: int, a: float, b: float) -> tuple[Array, Array]:
    x, w = gauss_legendre(n)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def composite_gauss_legendre(breaks: ArrayLike, n: int) -> tuple[Array, Array]:
    """n-point Gauss-Legendre on each consecutive pair of ``breaks``."""
    b = np.asarray(breaks, dtype=float)
    x, w = gauss_legendre(n)
    lo, hi = b[:-1, None], b[1:, None]
    half = 0.5 * (hi - lo)
    nodes = 0.5 * (lo + hi) + half * x
    weights = half * w
    return nodes.ravel(), weights.ravel()


@dataclass(frozen=True)
class BallSpec:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vec3(self.center))
        if not self.radius > 0:
            raise GeometryError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))

    shape = "ball"

    def contains(self, x: ArrayLike) -> NDArray[np.bool_]:
        d = np.asarray(x, dtype=float) - np.asarray(self.center)
        return np.einsum("...i,...i->...", d, d) < self.radius**2

    def bounds(self) -> tuple[Array, Array]:
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def sup_radius(self, p: ArrayLike) -> float:
        return float(np.linalg.norm(np.asarray(self.center) - np.asarray(p, dtype=float)) + self.radius)

    def area(self) -> float:
        return 4.0 * np.pi * self.radius**2

    def volume(self) -> float:
        return 4.0 / 3.0 * np.pi * self.radius**3

    def translated(self, shift: ArrayLike) -> BallSpec:
        return BallSpec(np.asarray(self.center) + np.asarray(shift, dtype=float), self.radius)

    def scaled(self, factor: float) -> BallSpec:
        return BallSpec(np.asarray(self.center) * factor, self.radius * factor)


@dataclass(frozen=True)
class BoxSpec:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self) -> None:
        lo, hi = _vec3(self.lo), _vec3(self.hi)
        if not all(a < b for a, b in zip(lo, hi)):
            raise GeometryError(f"box corners must be strictly ordered per axis: {lo} vs {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    shape = "box"

    def contains(self, x: ArrayLike) -> NDArray[np.bool_]:
        x = np.asarray(x, dtype=float)
        return np.all((x > np.asarray(self.lo)) & (x < np.asarray(self.hi)), axis=-1)

    def bounds(self) -> tuple[Array, Array]:
        return np.asarray(self.lo), np.asarray(self.hi)

    def corners(self) -> Array:
        lo, hi = self.bounds()
        idx = np.array(np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij")).reshape(3, -1).T
        return np.where(idx == 0, lo, hi)

    def sup_radius(self, p: ArrayLike) -> float:
        return float(np.max(np.linalg.norm(self.corners() - np.asarray(p, dtype=float), axis=1)))

    def area(self) -> float:
        a, b, c = np.asarray(self.hi) - np.asarray(self.lo)
        return float(2.0 * (a * b + b * c + c * a))

    def volume(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))

    def translated(self, shift: ArrayLike) -> BoxSpec:
        s = np.asarray(shift, dtype=float)
        return BoxSpec(np.asarray(self.lo) + s, np.asarray(self.hi) + s)

    def scaled(self, factor: float) -> BoxSpec:
        return BoxSpec(np.asarray(self.lo) * factor, np.asarray(self.hi) * factor)


@dataclass(frozen=True)
class UnionSpec:
    balls: tuple[BallSpec, ...]

    MAX_MEMBERS = 8

    def __post_init__(self) -> None:
        balls = tuple(self.balls)
        if not balls:
            raise GeometryError("union of balls must be non-empty")
        if len(balls) > self.MAX_MEMBERS:
            raise GeometryError(f"at most {self.MAX_MEMBERS} balls are supported, got {len(balls)}")
        for i, a in enumerate(balls):
            for b in balls[i + 1:]:
                gap = np.linalg.norm(np.subtract(a.center, b.center)) - a.radius - b.radius
                if gap <= 0:
                    raise GeometryError("union members must be pairwise disjoint")
        object.__setattr__(self, "balls", balls)

    shape = "union"

    def contains(self, x: ArrayLike) -> NDArray[np.bool_]:
        out = self.balls[0].contains(x)
        for b in self.balls[1:]:
            out = out | b.contains(x)
        return out

    def bounds(self) -> tuple[Array, Array]:
        los, his = zip(*(b.bounds() for b in self.balls))
        return np.min(los, axis=0), np.max(his, axis=0)

    def sup_radius(self, p: ArrayLike) -> float:
        return max(b.sup_radius(p) for b in self.balls)

    def volume(self) -> float:
        return sum(b.volume() for b in self.balls)

    def translated(self, shift: ArrayLike) -> UnionSpec:
        return UnionSpec(tuple(b.translated(shift) for b in self.balls))

    def scaled(self, factor: float) -> UnionSpec:
        return UnionSpec(tuple(b.scaled(factor) for b in self.balls))


DomainSpec = Union[BallSpec, BoxSpec, UnionSpec]


def sup_radius(domain: DomainSpec, p: ArrayLike) -> float:
    """Supremum of |x - p| over the closure of ``domain``."""
    return domain.sup_radius(p)


def obstacle_balls(d: DomainSpec) -> tuple[BallSpec, ...]:
    if isinstance(d, BallSpec):
        return (d,)
    if isinstance(d, UnionSpec):
        return d.balls
    raise GeometryError(f"obstacles must be a ball or a union of balls, got {type(d).__name__}")


def containment_margin(omega: DomainSpec, d: DomainSpec) -> float:
    """Smallest distance from the obstacle's closure to the outer boundary.

    Negative when some obstacle ball pokes through the boundary of ``omega``.
    """
    margins = []
    for b in obstacle_balls(d):
        c = np.asarray(b.center)
        if isinstance(omega, BallSpec):
            margins.append(omega.radius - np.linalg.norm(c - np.asarray(omega.center)) - b.radius)
        elif isinstance(omega, BoxSpec):
            lo, hi = omega.bounds()
            margins.append(float(np.min(np.concatenate([c - lo, hi - c]))) - b.radius)
        else:
            raise GeometryError("outer domain must be a ball or a box")
    return float(min(margins))


def check_containment(omega: DomainSpec, d: DomainSpec, margin: float = 0.0) -> None:
    got = containment_margin(omega, d)
    if not got > margin:
        raise GeometryError(
            f"obstacle closure must lie inside the domain with margin > {margin:.6g}; got {got:.6g}"
        )


# --------------------------------------------------------------------------
# Quadrature
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceQuadrature:
    nodes: Array
    normals: Array
    weights: Array

    def __post_init__(self) -> None:
        n = len(self.weights)
        if self.nodes.shape != (n, 3) or self.normals.shape != (n, 3):
            raise GeometryError("nodes/normals/weights size mismatch")
        for a in (self.nodes, self.normals, self.weights):
            a.flags.writeable = False

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: ArrayLike) -> Array:
        """Sum over the node axis (the last axis of ``values``)."""
        return np.asarray(values) @ self.weights

    def same_as(self, other: SurfaceQuadrature) -> bool:
        return (
            len(self) == len(other)
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.weights, other.weights)
        )


def _sphere_rule(order: int) -> tuple[Array, Array]:
    """Unit-sphere directions and weights: GL in cos(theta) x uniform azimuth.

    Exact for spherical polynomials of degree <= 2*order - 1.
    """
    mu, wmu = gauss_legendre(order)
    n_az = 2 * order
    phi = (np.arange(n_az) + 0.5) * (2.0 * np.pi / n_az)
    s = np.sqrt(1.0 - mu**2)
    dirs = np.stack(
        [
            np.outer(s, np.cos(phi)).ravel(),
            np.outer(s, np.sin(phi)).ravel(),
            np.repeat(mu, n_az),
        ],
        axis=1,
    )
    weights = np.repeat(wmu, n_az) * (2.0 * np.pi / n_az)
    return dirs, weights


def surface_quadrature(domain: DomainSpec, order: int) -> SurfaceQuadrature:
    if order < 2:
        raise GeometryError("surface quadrature order must be >= 2")
    if isinstance(domain, BallSpec):
        dirs, w = _sphere_rule(order)
        nodes = np.asarray(domain.center) + domain.radius * dirs
        return SurfaceQuadrature(nodes, dirs.copy(), w * domain.radius**2)
    if isinstance(domain, BoxSpec):
        lo, hi = domain.bounds()
        nodes, normals, weights = [], [], []
        for axis in range(3):
            a, b = [k for k in range(3) if k != axis]
            ua, wa = gauss_legendre_interval(order, lo[a], hi[a])
            ub, wb = gauss_legendre_interval(order, lo[b], hi[b])
            ga, gb = np.meshgrid(ua, ub, indexing="ij")
            ww = np.outer(wa, wb).ravel()
            for side, value in ((-1.0, lo[axis]), (1.0, hi[axis])):
                pts = np.empty((ga.size, 3))
                pts[:, a] = ga.ravel()
                pts[:, b] = gb.ravel()
                pts[:, axis] = value
                nrm = np.zeros_like(pts)
                nrm[:, axis] = side
                nodes.append(pts)
                normals.append(nrm)
                weights.append(ww)
        return SurfaceQuadrature(np.concatenate(nodes), np.concatenate(normals), np.concatenate(weights))
    raise GeometryError(f"surface quadrature is not supported for {type(domain).__name__}")


@dataclass(frozen=True)
class VolumeQuadrature:
    nodes: Array
    weights: Array

    def integrate(self, values: ArrayLike) -> Array:
        return np.asarray(values) @ self.weights


def ball_volume_quadrature(ball: BallSpec, order: int, radial_breaks: ArrayLike = ()) -> VolumeQuadrature:
    """Radial Gauss-Legendre times the spherical product rule.

    ``radial_breaks`` (radii strictly inside the ball) split the radial
    integral so that integrands with kinks on concentric spheres keep full
    accuracy.
    """
    breaks = np.unique(np.concatenate([[0.0], np.asarray(radial_breaks, dtype=float), [ball.radius]]))
    breaks = breaks[(breaks >= 0) & (breaks <= ball.radius)]
    r, wr = composite_gauss_legendre(breaks, order)
    dirs, wd = _sphere_rule(order)
    nodes = np.asarray(ball.center) + (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    weights = (wr * r**2)[:, None] * wd[None, :]
    return VolumeQuadrature(nodes, weights.ravel())


def box_volume_quadrature(box: BoxSpec, order: int, pieces: int = 1) -> VolumeQuadrature:
    lo, hi = box.bounds()
    axes = [composite_gauss_legendre(np.linspace(lo[k], hi[k], pieces + 1), order) for k in range(3)]
    gx, gy, gz = np.meshgrid(*(a[0] for a in axes), indexing="ij")
    w = np.einsum("i,j,k->ijk", *(a[1] for a in axes))
    return VolumeQuadrature(np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1), w.ravel())


def ball_quadrature_about(ball: BallSpec, x: ArrayLike, order: int, radial_breaks: ArrayLike = ()) -> VolumeQuadrature:
    """Volume rule for ``ball`` in polar coordinates centred at an interior point x.

    The rho^2 Jacobian is folded into the weights, so integrands with a
    1/|y - x| singularity become bounded.  ``radial_breaks`` are distances
    from x at which the radial integral is split (where they fall inside the
    ray's extent).
    """
    xc = np.asarray(x, dtype=float) - np.asarray(ball.center)
    xi = float(np.linalg.norm(xc))
    if xi >= ball.radius:
        raise GeometryError("expansion point must lie inside the ball")
    axis = xc / xi if xi > 0 else np.array([0.0, 0.0, 1.0])
    # orthonormal frame with axis as third vector
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)

    dirs, wd = _sphere_rule(order)
    mu = dirs[:, 2]
    # distance along each ray to the sphere |x + rho*omega| = R
    rho_max = -xi * mu + np.sqrt(ball.radius**2 - xi**2 * (1.0 - mu**2))
    g, wg = gauss_legendre(order)
    extra = np.asarray(radial_breaks, dtype=float)
    nodes, weights = [], []
    world = dirs[:, 0:1] * e1 + dirs[:, 1:2] * e2 + dirs[:, 2:3] * axis
    for k in range(len(mu)):
        cuts = extra[(extra > 0) & (extra < rho_max[k])]
        br = np.concatenate([[0.0], np.sort(cuts), [rho_max[k]]])
        lo, hi = br[:-1, None], br[1:, None]
        rho = (0.5 * (lo + hi) + 0.5 * (hi - lo) * g).ravel()
        wr = (0.5 * (hi - lo) * wg).ravel()
        nodes.append(np.asarray(x, dtype=float) + rho[:, None] * world[k])
        weights.append(wr * rho**2 * wd[k])
    return VolumeQuadrature(np.concatenate(nodes), np.concatenate(weights))
