"""Closed race tracks built from straight and constant-curvature segments.

A track is an ordered list of segments plus a constant width.  Curvature
lookups go through a precomputed table with linear interpolation so that
kappa(sigma) is continuous; piecewise-constant evaluation would put jumps
inside the solver's linearization and stall its convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

DEFAULT_TABLE_SPACING = 0.01  # m
DEFAULT_SMOOTHING = 0.08  # m; triangular-kernel radius applied to the table


class TrackError(ValueError):
    """Malformed track definition (geometry, closure, or file syntax)."""


class OutOfTrackError(ValueError):
    """Lateral offset outside the drivable band."""


@dataclass(frozen=True)
class TrackSegment:
    kind: str  # "straight" | "arc"
    length: float  # m, > 0
    curvature: float  # 1/m, 0 for straights, signed for arcs (positive = left)

    def __post_init__(self):
        if self.kind not in ("straight", "arc"):
            raise TrackError(f"unknown segment kind {self.kind!r}")
        if not self.length > 0:
            raise TrackError("segment length must be positive")
        if self.kind == "straight" and self.curvature != 0.0:
            raise TrackError("straight segment must have zero curvature")
        if self.kind == "arc" and self.curvature == 0.0:
            raise TrackError("arc segment must have nonzero curvature")


@dataclass(frozen=True)
class ContextWindow:
    """Curvature samples covering the arc length ahead of a query point."""

    values: np.ndarray  # (n_z,)
    spacing: float  # m
    origin: float  # sigma of the first sample, m

    def __len__(self):
        return len(self.values)


def context_length(n_steps: int, dt: float, v_max: float, spacing: float) -> int:
    """Number of samples covering the reachable arc length n_steps*dt*v_max.

    The small backoff before ceil absorbs float noise in the product so an
    exact multiple of the spacing does not gain a spurious extra sample.
    """
    arc = n_steps * dt * v_max
    return int(math.ceil(arc / spacing - 1e-9)) + 1


class TrackModel:
    """Immutable closed circuit; all methods are pure and reentrant."""

    def __init__(self, segments, half_width, table_spacing=DEFAULT_TABLE_SPACING,
                 smoothing=DEFAULT_SMOOTHING):
        segments = tuple(segments)
        if not segments:
            raise TrackError("track needs at least one segment")
        if not half_width > 0:
            raise TrackError("track width must be positive")
        self.segments = segments
        self.half_width = float(half_width)
        self.table_spacing = float(table_spacing)
        self.smoothing = float(smoothing)
        lengths = np.array([s.length for s in segments])
        self.cum_lengths = np.concatenate([[0.0], np.cumsum(lengths)])
        self.total_length = float(self.cum_lengths[-1])

        total_turn = sum(s.curvature * s.length for s in segments)
        residual = abs(total_turn - 2.0 * math.pi * round(total_turn / (2.0 * math.pi)))
        if residual > 1e-6:
            raise TrackError(f"heading does not close: residual {residual:.2e} rad")
        max_kappa = max(abs(s.curvature) for s in segments)
        if max_kappa * self.half_width >= 1.0:
            raise TrackError(
                "max|kappa| * half_width >= 1: Frenet transform singular on the track"
            )
        self.max_curvature = max_kappa

        # curvature table: nodes every table_spacing plus a wrap seam of the
        # leftover length, linear in between.  The node values are the exact
        # segment profile convolved with a triangular kernel of radius
        # `smoothing`, so the dynamics' sigma-derivative stays bounded and
        # continuous; the solver's local models break down on the raw
        # centimeter-wide curvature ramps.  Constant-curvature regions more
        # than `smoothing` from a segment boundary keep their exact value.
        n_nodes = int(math.floor(self.total_length / self.table_spacing))
        node_s = np.arange(n_nodes + 1) * self.table_spacing
        radius = int(round(self.smoothing / self.table_spacing))
        if radius >= 1:
            offsets = np.arange(-radius, radius + 1)
            kernel = 1.0 - np.abs(offsets) / (radius + 1.0)
            kernel /= kernel.sum()
            shifted = node_s[:, None] + offsets[None, :] * self.table_spacing
            self.table = self._segment_curvature(shifted) @ kernel
        else:
            self.table = self._segment_curvature(node_s)
        self._n_full = n_nodes  # intervals of exact table_spacing width
        self._seam = self.total_length - n_nodes * self.table_spacing

        # start pose of every segment, accumulated analytically (exact per
        # segment, so closure errors are pure geometry, not integration)
        poses = [(0.0, 0.0, 0.0)]
        for seg in segments:
            poses.append(_advance(poses[-1], seg, seg.length))
        self._seg_poses = poses

    # -- curvature -----------------------------------------------------

    def _segment_curvature(self, sigma):
        """Exact piecewise-constant curvature at wrapped arc length(s)."""
        s = np.mod(np.asarray(sigma, dtype=float), self.total_length)
        idx = np.clip(
            np.searchsorted(self.cum_lengths, s, side="right") - 1,
            0,
            len(self.segments) - 1,
        )
        kappas = np.array([seg.curvature for seg in self.segments])
        return kappas[idx]

    def wrap(self, sigma):
        return np.mod(sigma, self.total_length)

    def curvature(self, sigma):
        """Interpolated kappa at arc length sigma (any real, wraps mod L)."""
        s = self.wrap(np.asarray(sigma, dtype=float))
        j = np.minimum(np.floor(s / self.table_spacing).astype(int), self._n_full)
        in_seam = j >= self._n_full
        left = self.table[j]
        right = np.where(in_seam, self.table[0], self.table[np.minimum(j + 1, self._n_full)])
        width = np.where(in_seam, max(self._seam, 1e-300), self.table_spacing)
        frac = (s - j * self.table_spacing) / width
        out = left + frac * (right - left)
        return float(out) if np.isscalar(sigma) else out

    def curvature_slope(self, sigma):
        """d kappa / d sigma of the interpolated table (piecewise constant)."""
        s = self.wrap(np.asarray(sigma, dtype=float))
        j = np.minimum(np.floor(s / self.table_spacing).astype(int), self._n_full)
        in_seam = j >= self._n_full
        left = self.table[j]
        right = np.where(in_seam, self.table[0], self.table[np.minimum(j + 1, self._n_full)])
        width = np.where(in_seam, max(self._seam, 1e-300), self.table_spacing)
        out = (right - left) / width
        return float(out) if np.isscalar(sigma) else out

    # -- context -------------------------------------------------------

    def extract_context(self, sigma, n_long, dt, v_max, spacing=None):
        """Curvature series spanning n_long*dt*v_max meters ahead of sigma."""
        if n_long < 1 or dt <= 0 or v_max <= 0:
            raise ValueError("need n_long >= 1, dt > 0, v_max > 0")
        spacing = self.table_spacing if spacing is None else float(spacing)
        n_z = context_length(n_long, dt, v_max, spacing)
        offsets = sigma + spacing * np.arange(n_z)
        return ContextWindow(values=self.curvature(offsets), spacing=spacing, origin=float(sigma))

    # -- cartesian export ----------------------------------------------

    def centerline_pose(self, sigma):
        """(x, y, tangent heading) of the centerline at sigma."""
        s = float(self.wrap(sigma))
        i = min(
            int(np.searchsorted(self.cum_lengths, s, side="right") - 1),
            len(self.segments) - 1,
        )
        return _advance(self._seg_poses[i], self.segments[i], s - self.cum_lengths[i])

    def frenet_to_cartesian(self, sigma, d, phi, strict=True):
        """Map a Frenet pose to (x, y, heading). d > 0 is left of centerline."""
        if strict and abs(d) > self.half_width:
            raise OutOfTrackError(f"|d|={abs(d):.4f} exceeds half width {self.half_width}")
        cx, cy, theta = self.centerline_pose(sigma)
        return (cx - d * math.sin(theta), cy + d * math.cos(theta), theta + phi)

    def closure_residuals(self):
        """(heading residual rad, endpoint distance m) of the segment loop."""
        x, y, theta = self._seg_poses[-1]
        ang = abs(theta - 2.0 * math.pi * round(theta / (2.0 * math.pi)))
        return ang, math.hypot(x, y)


def _advance(pose, seg, s):
    """Pose after s meters along seg, starting from pose (exact formulas)."""
    x, y, theta = pose
    if seg.kind == "straight":
        return (x + s * math.cos(theta), y + s * math.sin(theta), theta)
    k = seg.curvature
    theta2 = theta + k * s
    return (
        x + (math.sin(theta2) - math.sin(theta)) / k,
        y - (math.cos(theta2) - math.cos(theta)) / k,
        theta2,
    )


# -- track file format -------------------------------------------------
#
#   width <2*half_width>
#   straight <length>
#   arc <curvature> <length>
#
# one directive per line, '#' starts a comment.


def parse_track(text, table_spacing=DEFAULT_TABLE_SPACING, smoothing=DEFAULT_SMOOTHING):
    width = None
    segments = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "width" and len(parts) == 2:
                width = float(parts[1])
            elif parts[0] == "straight" and len(parts) == 2:
                segments.append(TrackSegment("straight", float(parts[1]), 0.0))
            elif parts[0] == "arc" and len(parts) == 3:
                segments.append(TrackSegment("arc", float(parts[2]), float(parts[1])))
            else:
                raise TrackError(f"line {lineno}: unrecognized directive {line!r}")
        except ValueError as exc:
            raise TrackError(f"line {lineno}: {exc}") from exc
    if width is None:
        raise TrackError("track file missing 'width' directive")
    return TrackModel(segments, half_width=width / 2.0, table_spacing=table_spacing,
                      smoothing=smoothing)


def load_track(path, table_spacing=DEFAULT_TABLE_SPACING, smoothing=DEFAULT_SMOOTHING):
    with open(path, encoding="utf-8") as fh:
        return parse_track(fh.read(), table_spacing=table_spacing, smoothing=smoothing)


BUNDLED_TRACKS = ("train", "test1", "test2")


def bundled_track(name, table_spacing=DEFAULT_TABLE_SPACING, smoothing=DEFAULT_SMOOTHING):
    """Load one of the tracks shipped with the package."""
    if name not in BUNDLED_TRACKS:
        raise TrackError(f"no bundled track {name!r}; choose from {BUNDLED_TRACKS}")
    text = resources.files("zipmpc.tracks").joinpath(f"{name}.track").read_text()
    return parse_track(text, table_spacing=table_spacing, smoothing=smoothing)
