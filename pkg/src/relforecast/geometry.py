"""Poses, rigid SE(2) transforms and pair-wise relative geometry.

The relative geometry of an ordered pair ``src -> dst`` depends only on the
two poses relative to each other, so it is unchanged by any rigid motion of
the whole scene. All array functions are vectorised over leading axes.

2D cross product convention: ``a x b = a.x * b.y - a.y * b.x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm

DEFAULT_N_FREQ = 16
DEGENERATE_DIST = 1e-9


def cross2(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def dot2(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]


def heading_vector(yaw):
    yaw = np.asarray(yaw, dtype=float)
    return np.stack([np.cos(yaw), np.sin(yaw)], axis=-1)


def rot2(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    centroid: np.ndarray
    heading: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centroid, dtype=float).reshape(2)
        h = np.asarray(self.heading, dtype=float).reshape(2)
        if abs(np.hypot(*h) - 1.0) > 1e-9:
            raise ValueError(f"heading must be a unit vector, got norm {np.hypot(*h)}")
        object.__setattr__(self, "centroid", c)
        object.__setattr__(self, "heading", h)

    @classmethod
    def from_yaw(cls, x: float, y: float, yaw: float) -> "Pose2":
        return cls(np.array([x, y]), heading_vector(yaw))

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self.heading[1], self.heading[0]))

    def to_local(self, points) -> np.ndarray:
        """World points expressed in this pose's frame (x along heading)."""
        return world_to_local(self.centroid, self.heading, points)

    def to_world(self, points) -> np.ndarray:
        return local_to_world(self.centroid, self.heading, points)


def world_to_local(centroid, heading, points) -> np.ndarray:
    """Rotate ``points - centroid`` into the frame whose x-axis is ``heading``.

    ``centroid``/``heading`` may carry leading axes that broadcast with points.
    """
    d = np.asarray(points, dtype=float) - np.asarray(centroid)
    h = np.asarray(heading)
    return np.stack([dot2(d, h), cross2(h, d)], axis=-1)


def local_to_world(centroid, heading, points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    h = np.asarray(heading)
    x = p[..., 0] * h[..., 0] - p[..., 1] * h[..., 1]
    y = p[..., 0] * h[..., 1] + p[..., 1] * h[..., 0]
    return np.stack([x, y], axis=-1) + np.asarray(centroid)


@dataclass(frozen=True)
class SE2:
    """Rigid transform ``p -> R(angle) p + translation``."""

    angle: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)

    @property
    def rotation(self) -> np.ndarray:
        return rot2(self.angle)

    @classmethod
    def random(cls, rng: np.random.Generator, max_translation: float = 1000.0) -> "SE2":
        return cls(float(rng.uniform(-np.pi, np.pi)),
                   tuple(rng.uniform(-max_translation, max_translation, size=2)))

    def apply_points(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + np.asarray(self.translation)

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def apply(self, pose: Pose2) -> Pose2:
        h = self.apply_vectors(pose.heading)
        return Pose2(self.apply_points(pose.centroid), h / np.hypot(*h))

    def compose(self, other: "SE2") -> "SE2":
        """``self`` after ``other``."""
        t = self.apply_points(np.asarray(other.translation))
        return SE2(self.angle + other.angle, (float(t[0]), float(t[1])))

    def inverse(self) -> "SE2":
        t = -(self.rotation.T @ np.asarray(self.translation))
        return SE2(-self.angle, (float(t[0]), float(t[1])))


def se2_apply(transform: SE2, pose: Pose2) -> Pose2:
    return transform.apply(pose)


def sinusoid_bank(d, n_freq: int = DEFAULT_N_FREQ, sign: float = -1.0) -> np.ndarray:
    """``[sin(d w_0..w_{N-1}), cos(d w_0..w_{N-1})]`` with ``w_n = exp(sign 4n/N)``.

    ``sign=-1`` spreads wavelengths from 2*pi m up to a few hundred metres;
    ``sign=+1`` gives the growing-frequency variant.
    """
    if n_freq < 1:
        raise ValueError("n_freq must be >= 1")
    if sign not in (1, -1, 1.0, -1.0):
        raise ValueError("sign must be +1 or -1")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    freqs = np.exp(sign * 4.0 * np.arange(n_freq) / n_freq)
    phase = d[..., None] * freqs
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def rel_geom_arrays(src_c, src_h, dst_c, dst_h, n_freq: int = DEFAULT_N_FREQ,
                    sign: float = -1.0) -> np.ndarray:
    """Raw relative geometry ``[sin a, cos a, sin b, cos b, p_1..p_N, r_1..r_N]``.

    a is the heading difference, b the angle between ``c_src - c_dst`` and the
    destination heading. Coincident centroids give ``(sin b, cos b) = (0, 1)``.
    """
    src_c, src_h = np.asarray(src_c, dtype=float), np.asarray(src_h, dtype=float)
    dst_c, dst_h = np.asarray(dst_c, dtype=float), np.asarray(dst_h, dtype=float)
    sin_a = cross2(src_h, dst_h)
    cos_a = dot2(src_h, dst_h)
    v = src_c - dst_c
    d = np.hypot(v[..., 0], v[..., 1])
    ok = d >= DEGENERATE_DIST
    safe = np.where(ok, d, 1.0)
    sin_b = np.where(ok, cross2(v, dst_h) / safe, 0.0)
    cos_b = np.where(ok, dot2(v, dst_h) / safe, 1.0)
    d = np.where(ok, d, 0.0)
    angles = np.stack(np.broadcast_arrays(sin_a, cos_a, sin_b, cos_b), axis=-1)
    return np.concatenate([angles, sinusoid_bank(d, n_freq, sign)], axis=-1)


def goal_geom_arrays(goal, pose_c, pose_h, n_freq: int = DEFAULT_N_FREQ, sign: float = -1.0,
                     coord_scale: float = 10.0) -> np.ndarray:
    """Relative geometry of a heading-less goal point w.r.t. an agent pose.

    Heading-difference slots are zero; the trailing pair is the goal in the
    agent frame, ``d * (cos b, sin b) / coord_scale``.
    """
    goal = np.asarray(goal, dtype=float)
    pose_c = np.broadcast_to(np.asarray(pose_c, dtype=float), goal.shape)
    pose_h = np.broadcast_to(np.asarray(pose_h, dtype=float), goal.shape)
    g = rel_geom_arrays(goal, pose_h, pose_c, pose_h, n_freq, sign)
    g[..., 0:2] = 0.0
    local = world_to_local(pose_c, pose_h, goal) / coord_scale
    return np.concatenate([g, local], axis=-1)


def rel_geom_width(n_freq: int) -> int:
    return 4 + 2 * n_freq


@dataclass(frozen=True)
class RelGeom:
    sin_alpha: float
    cos_alpha: float
    sin_beta: float
    cos_beta: float
    dist_encoding: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.sin_alpha, self.cos_alpha, self.sin_beta, self.cos_beta],
                               self.dist_encoding])


def rel_geom(src: Pose2, dst: Pose2, n_freq: int = DEFAULT_N_FREQ, sign: float = -1.0) -> RelGeom:
    g = rel_geom_arrays(src.centroid, src.heading, dst.centroid, dst.heading, n_freq, sign)
    return RelGeom(float(g[0]), float(g[1]), float(g[2]), float(g[3]), g[4:])


def pairpose_encode(src: Pose2, dst: Pose2, encoder: dm.MLP, n_freq: int = DEFAULT_N_FREQ,
                    sign: float = -1.0) -> dm.Tensor:
    """Learned edge attribute: the MLP applied to the raw relative geometry."""
    g = rel_geom(src, dst, n_freq, sign).as_array()
    first = encoder.layers[0][0]
    if first.shape[0] != g.size:
        raise ValueError(f"encoder expects width {first.shape[0]}, geometry has {g.size}")
    return encoder(dm.Tensor(g[None, :], dtype=first.dtype)).reshape(-1)
