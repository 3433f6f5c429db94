"""Trajectory containers, flattening, and dataset-level normalization."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .liegeom import local_to_poses, poses_to_local


@dataclass(frozen=True)
class Space:
    """Configuration space: ``euclidean`` of dimension ``dim`` or ``se3``."""

    kind: str
    dim: int = 0

    def __post_init__(self):
        if self.kind == "se3":
            object.__setattr__(self, "dim", 6)
        elif self.kind != "euclidean" or self.dim < 1:
            raise ValueError(f"invalid space {self.kind!r} (dim={self.dim})")

    @classmethod
    def euclidean(cls, n):
        return cls("euclidean", int(n))

    @classmethod
    def se3(cls):
        return cls("se3", 6)

    @property
    def local_dim(self):
        """Per-timestep width of the flattened representation."""
        return self.dim

    def to_json(self):
        return "se3" if self.kind == "se3" else f"euclidean:{self.dim}"

    @classmethod
    def from_json(cls, s):
        if s == "se3":
            return cls.se3()
        kind, _, n = s.partition(":")
        if kind != "euclidean" or not n.isdigit():
            raise ValueError(f"unrecognized space {s!r}")
        return cls.euclidean(int(n))


@dataclass
class Trajectory:
    """``points`` is ``(T, n)`` for Euclidean spaces and ``(T, 4, 4)`` poses for SE(3)."""

    space: Space
    points: np.ndarray
    _source: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        want = (4, 4) if self.space.kind == "se3" else (self.space.dim,)
        if self.points.ndim != 1 + len(want) or self.points.shape[1:] != want:
            raise ShapeError(f"{self.space.to_json()} trajectory needs (T, {want}), got {self.points.shape}")
        if self.points.shape[0] < 1:
            raise ShapeError("trajectory must have at least one timestep")
        if not np.all(np.isfinite(self.points)):
            raise ShapeError("trajectory has non-finite entries")

    @property
    def T(self):
        return self.points.shape[0]

    def local(self):
        """``(T, local_dim)`` coordinates (translation + exp coords for SE(3))."""
        if self.space.kind == "se3":
            # poses built from local coordinates report those coordinates back unchanged, so
            # serialization round trips are bit-exact; any edit to the poses invalidates this
            if self._source is not None and np.array_equal(self._source[0], self.points):
                return self._source[1].copy()
            return poses_to_local(self.points)
        return self.points

    @classmethod
    def from_local(cls, space, local):
        local = np.asarray(local, dtype=np.float64)
        if space.kind == "se3":
            poses = local_to_poses(local)
            return cls(space, poses, (poses.copy(), local.copy()))
        return cls(space, local)


def flatten(x):
    return x.local().reshape(-1).copy()


def unflatten(v, space, T):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (T * space.local_dim,):
        raise ShapeError(f"expected flat length {T * space.local_dim}, got shape {v.shape}")
    return Trajectory.from_local(space, v.reshape(T, space.local_dim))


@dataclass(frozen=True)
class Normalization:
    """Affine map ``(q - offset) / scale`` on the Euclidean part of each configuration.

    For SE(3) only the translation is affected; exponential coordinates of
    the rotation are already O(1) in radians.
    """

    offset: tuple
    scale: float = 1.0

    @classmethod
    def identity(cls, space):
        return cls(tuple([0.0] * _affine_dim(space)), 1.0)

    @classmethod
    def fit(cls, space, trajectories):
        locs = np.concatenate([x.local()[:, : _affine_dim(space)] for x in trajectories])
        lo, hi = locs.min(axis=0), locs.max(axis=0)
        offset = 0.5 * (lo + hi)
        scale = float(0.5 * np.max(hi - lo))
        return cls(tuple(float(o) for o in offset), scale if scale > 0 else 1.0)

    def apply(self, local):
        """Normalize ``(..., T, d)`` local coordinates."""
        out = np.array(local, dtype=np.float64)
        k = len(self.offset)
        out[..., :k] = (out[..., :k] - np.asarray(self.offset)) / self.scale
        return out

    def invert(self, local):
        out = np.array(local, dtype=np.float64)
        k = len(self.offset)
        out[..., :k] = out[..., :k] * self.scale + np.asarray(self.offset)
        return out

    def apply_traj(self, x):
        if x.space.kind == "se3":
            P = x.points.copy()
            P[:, :3, 3] = (P[:, :3, 3] - np.asarray(self.offset)) / self.scale
            return Trajectory(x.space, P)
        return Trajectory(x.space, self.apply(x.points))

    def to_dict(self):
        return {"offset": list(self.offset), "scale": self.scale}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["offset"]), float(d["scale"]))


def _affine_dim(space):
    return 3 if space.kind == "se3" else space.dim
