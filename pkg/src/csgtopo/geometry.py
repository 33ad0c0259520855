"""Convex-polygon primitives and their projection onto grid density fields.

A primitive is the intersection of S >= 3 half-spaces arranged around a
reference point.  Mapping a primitive to a density field runs the smooth
chain

    half-space signed distances -> LogSumExp max -> sigmoid -> threshold

so the resulting field is differentiable in every polygon parameter.
Signed distances are negative inside a shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import expit

__all__ = [
    "PolygonParams",
    "ProjectionConfig",
    "SampleGrid",
    "DensityField",
    "ProjectionTape",
    "base_angles",
    "halfspace_sdf",
    "halfspace_sdfs",
    "polygon_sdf",
    "project_density",
    "threshold",
    "threshold_derivative",
    "rasterize_primitive",
    "rasterize_with_tape",
    "projection_param_grad",
]

_RANGE_TOL = 1e-9


def base_angles(sides: int) -> np.ndarray:
    """Half-space normal directions before rotation: 2*pi*j/S for j = 0..S-1."""
    if sides < 3:
        raise ValueError(f"a polygon needs at least 3 half-spaces, got {sides}")
    return (2.0 * math.pi / sides) * np.arange(sides, dtype=float)


@dataclass(frozen=True, eq=False)
class PolygonParams:
    """One polygon: reference point (cx, cy), rotation theta, offsets d.

    The polygon is the set where all S half-space signed distances are
    negative; offset d[j] is the distance from the reference point to
    half-space j along its (rotated) normal.
    """

    cx: float
    cy: float
    theta: float
    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float).ravel()
        if d.size < 3:
            raise ValueError(f"a polygon needs at least 3 offsets, got {d.size}")
        object.__setattr__(self, "d", d)

    @property
    def sides(self) -> int:
        return self.d.size

    @property
    def angles(self) -> np.ndarray:
        """Final half-space normal angles theta + 2*pi*j/S."""
        return self.theta + base_angles(self.sides)


@dataclass(frozen=True)
class ProjectionConfig:
    """Shared projection constants.

    l0 is the diagonal length of the domain bounding box; gamma and t are
    expressed per unit of l0 so the projection is scale free.  beta is the
    threshold-filter sharpness.
    """

    l0: float
    gamma: float = 100.0
    beta: float = 8.0
    t: float = 100.0

    def __post_init__(self):
        for name in ("l0", "gamma", "beta", "t"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @classmethod
    def for_domain(cls, lx: float, ly: float, *, gamma: float = 100.0,
                   beta: float = 8.0, t: float = 100.0) -> "ProjectionConfig":
        return cls(l0=math.hypot(lx, ly), gamma=gamma, beta=beta, t=t)


@dataclass(eq=False)
class SampleGrid:
    """Element-center sample points of an nx-by-ny structured grid.

    Point e = j*nx + i sits at ((i+0.5)*lx/nx, (j+0.5)*ly/ny); x varies
    fastest (row-major with one row per j).
    """

    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell per direction")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("grid lengths must be positive")

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @cached_property
    def points(self) -> np.ndarray:
        xs = (np.arange(self.nx) + 0.5) * self.dx
        ys = (np.arange(self.ny) + 0.5) * self.dy
        xx, yy = np.meshgrid(xs, ys)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def matches(self, other: "SampleGrid") -> bool:
        return (self.nx, self.ny, self.lx, self.ly) == (other.nx, other.ny, other.lx, other.ly)


@dataclass(eq=False)
class DensityField:
    """Per-cell densities in [0, 1] sampled on a grid."""

    values: np.ndarray
    grid: SampleGrid

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size != self.grid.n_cells:
            raise ValueError(
                f"field has {values.size} values for a grid of {self.grid.n_cells} cells")
        if (values < -_RANGE_TOL).any() or (values > 1.0 + _RANGE_TOL).any():
            raise ValueError("density values must lie in [0, 1]")
        self.values = np.clip(values, 0.0, 1.0)


def halfspace_sdf(p: PolygonParams, j: int, x, y):
    """Signed distance to half-space j (0-based) of polygon p; negative inside."""
    a = p.theta + 2.0 * math.pi * j / p.sides
    return (np.asarray(x, float) - p.cx) * math.cos(a) \
        + (np.asarray(y, float) - p.cy) * math.sin(a) - p.d[j]


def halfspace_sdfs(p: PolygonParams, x, y) -> np.ndarray:
    """All S half-space signed distances, stacked on a trailing axis."""
    ang = p.angles
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return ((x - p.cx)[..., None] * np.cos(ang)
            + (y - p.cy)[..., None] * np.sin(ang) - p.d)


def polygon_sdf(p: PolygonParams, x, y, cfg: ProjectionConfig):
    """Smooth polygon signed distance: (l0/t)-scaled LogSumExp of the half-spaces.

    The max is subtracted before exponentiation so the exponents never
    overflow; the result always dominates the exact maximum.
    """
    phi = halfspace_sdfs(p, x, y)
    s = cfg.t / cfg.l0
    m = phi.max(axis=-1)
    return m + np.log(np.exp(s * (phi - m[..., None])).sum(axis=-1)) / s


def project_density(phi, cfg: ProjectionConfig):
    """Sigmoid projection of a signed distance: interior (phi < 0) maps near 1."""
    return expit(-(cfg.gamma / cfg.l0) * np.asarray(phi, float))


def threshold(rho_tilde, cfg: ProjectionConfig):
    """Threshold filter pushing intermediate densities toward 0/1.

    Preserves the endpoints and the midpoint exactly; input must lie in [0, 1].
    """
    r = np.asarray(rho_tilde, dtype=float)
    if (r < -_RANGE_TOL).any() or (r > 1.0 + _RANGE_TOL).any():
        raise ValueError("threshold input must lie in [0, 1]")
    r = np.clip(r, 0.0, 1.0)
    th = math.tanh(0.5 * cfg.beta)
    return (th + np.tanh(cfg.beta * (r - 0.5))) / (2.0 * th)


def threshold_derivative(rho_tilde, cfg: ProjectionConfig):
    r = np.asarray(rho_tilde, dtype=float)
    th = math.tanh(0.5 * cfg.beta)
    u = np.tanh(cfg.beta * (r - 0.5))
    return cfg.beta * (1.0 - u * u) / (2.0 * th)


@dataclass(eq=False)
class ProjectionTape:
    """Intermediates of one primitive's projection, kept for the pullback.

    lse_weights holds the per-cell softmax weights of the half-spaces;
    d_sigmoid and d_threshold are the local derivatives of the last two
    stages of the chain.
    """

    cos_a: np.ndarray      # (S,)
    sin_a: np.ndarray      # (S,)
    rel_x: np.ndarray      # (n_cells,) x - cx
    rel_y: np.ndarray      # (n_cells,)
    lse_weights: np.ndarray  # (n_cells, S)
    d_sigmoid: np.ndarray    # (n_cells,) d rho_tilde / d phi
    d_threshold: np.ndarray  # (n_cells,) d rho / d rho_tilde


def rasterize_with_tape(p: PolygonParams, grid: SampleGrid,
                        cfg: ProjectionConfig) -> tuple[DensityField, ProjectionTape]:
    """Project one polygon onto the grid and keep the chain intermediates."""
    pts = grid.points
    ang = p.angles
    cos_a = np.cos(ang)
    sin_a = np.sin(ang)
    rel_x = pts[:, 0] - p.cx
    rel_y = pts[:, 1] - p.cy
    phi_hat = rel_x[:, None] * cos_a + rel_y[:, None] * sin_a - p.d

    s = cfg.t / cfg.l0
    m = phi_hat.max(axis=1)
    e = np.exp(s * (phi_hat - m[:, None]))
    z = e.sum(axis=1)
    phi = m + np.log(z) / s
    weights = e / z[:, None]

    rho_tilde = expit(-(cfg.gamma / cfg.l0) * phi)
    d_sigmoid = -(cfg.gamma / cfg.l0) * rho_tilde * (1.0 - rho_tilde)

    th = math.tanh(0.5 * cfg.beta)
    u = np.tanh(cfg.beta * (rho_tilde - 0.5))
    rho = (th + u) / (2.0 * th)
    d_threshold = cfg.beta * (1.0 - u * u) / (2.0 * th)

    field = DensityField(rho, grid)
    tape = ProjectionTape(cos_a, sin_a, rel_x, rel_y, weights, d_sigmoid, d_threshold)
    return field, tape


def rasterize_primitive(p: PolygonParams, grid: SampleGrid,
                        cfg: ProjectionConfig) -> DensityField:
    """Project one polygon onto the grid: threshold(sigmoid(polygon_sdf))."""
    return rasterize_with_tape(p, grid, cfg)[0]


def projection_param_grad(tape: ProjectionTape, seed: np.ndarray):
    """Pull a per-cell sensitivity back to (cx, cy, theta, d).

    seed[e] is d(objective)/d(rho[e]) for this primitive's field; returns
    (d_cx, d_cy, d_theta, d_d) with d_d of length S.
    """
    chain = seed * tape.d_threshold * tape.d_sigmoid
    a = tape.lse_weights.T @ chain
    d_cx = -float(tape.cos_a @ a)
    d_cy = -float(tape.sin_a @ a)
    sx = tape.lse_weights.T @ (chain * tape.rel_x)
    sy = tape.lse_weights.T @ (chain * tape.rel_y)
    d_theta = float(tape.cos_a @ sy - tape.sin_a @ sx)
    return d_cx, d_cy, d_theta, -a
