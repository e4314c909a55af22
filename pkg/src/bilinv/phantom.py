"""Desk-scale synthetic phantom: layered grid, operator ensembles, patterns, data.

Coordinates are in mm with the exterior surface on top (largest ``z``) and
the anterior direction along ``+y``.  Voxels are flattened in C order over
``(i, j, k)`` indices along ``(x, y, z)``.
"""

import csv
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _accel
from .covariance import (
    NoiseSpec,
    difference_noise_std,
    noise_std_log_amplitude,
    noise_std_phase,
)
from .errors import DimensionError
from .pca import OperatorEnsemble, RowGroup

__all__ = [
    "TISSUES",
    "PhantomGrid",
    "layered_grid",
    "Optode",
    "Channel",
    "default_channels",
    "PhotonRecord",
    "FdObservables",
    "fd_observables",
    "read_photon_csv",
    "EnsembleSpec",
    "banana_sensitivity",
    "synthesize_ensemble",
    "PatternGeometry",
    "Region",
    "PerturbationPattern",
    "make_pattern",
    "row_noise_sds",
    "generate_difference_data",
    "write_voxel_map",
    "read_voxel_map",
]

log = logging.getLogger(__name__)

TISSUES = ("scalp_skull", "csf", "brain")
SCALP, CSF, BRAIN = range(3)


# -- grid ----------------------------------------------------------------------

@dataclass(frozen=True)
class PhantomGrid:
    dims: tuple
    voxel_mm: float
    labels: np.ndarray
    anterior_axis: str = "+y"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"grid dims must be three positive ints, got {self.dims}")
        if not self.voxel_mm > 0:
            raise ValueError("voxel side length must be positive")
        labels = np.asarray(self.labels, dtype=np.int8).reshape(dims)
        if labels.min() < 0 or labels.max() >= len(TISSUES):
            raise ValueError("tissue labels must index TISSUES")
        labels.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return int(np.prod(self.dims))

    @property
    def top_mm(self):
        return self.dims[2] * self.voxel_mm

    @property
    def centers(self):
        ii = [(np.arange(d) + 0.5) * self.voxel_mm for d in self.dims]
        g = np.meshgrid(*ii, indexing="ij")
        return np.stack([a.ravel() for a in g], axis=1)

    @property
    def flat_labels(self):
        return self.labels.ravel()

    @property
    def surface(self):
        """Exterior-surface flag: the top voxel of every column."""
        s = np.zeros(self.dims, dtype=bool)
        s[:, :, -1] = True
        return s.ravel()

    def brain_top_mm(self, i, j):
        """Height of the upper brain boundary in column ``(i, j)``; ``None`` if no brain."""
        ks = np.flatnonzero(self.labels[i, j] == BRAIN)
        return None if ks.size == 0 else (ks.max() + 1) * self.voxel_mm

    def column_of(self, point):
        ij = np.floor(np.asarray(point[:2]) / self.voxel_mm).astype(int)
        if np.any(ij < 0) or ij[0] >= self.dims[0] or ij[1] >= self.dims[1]:
            raise ValueError(f"point {tuple(point)} lies outside the grid footprint")
        return int(ij[0]), int(ij[1])

    def depth(self, centers=None):
        c = self.centers if centers is None else centers
        return self.top_mm - c[:, 2]


def layered_grid(dims=(24, 24, 12), voxel_mm=2.0, scalp_voxels=2, csf_voxels=1):
    """Three-layer head slab.  Thicknesses may be scalars or ``(nx, ny)`` maps."""
    nx, ny, nz = dims
    ts = np.broadcast_to(np.asarray(scalp_voxels, dtype=int), (nx, ny))
    tc = np.broadcast_to(np.asarray(csf_voxels, dtype=int), (nx, ny))
    if np.any(ts < 1):
        raise ValueError("every column needs at least one scalp_skull voxel")
    if np.any(tc < 0):
        raise ValueError("csf thickness must be nonnegative")
    depth_idx = (nz - 1 - np.arange(nz))[None, None, :]
    labels = np.full(dims, BRAIN, dtype=np.int8)
    labels[depth_idx < (ts + tc)[..., None]] = CSF
    labels[depth_idx < ts[..., None]] = SCALP
    return PhantomGrid(dims, voxel_mm, labels)


# -- optodes and channels --------------------------------------------------------

class Optode(NamedTuple):
    kind: str
    position: np.ndarray


@dataclass(frozen=True)
class Channel:
    source: int
    detector: int
    sds_mm: float


def default_channels(grid, spacing_mm=12.0, sds_range=(10.0, 36.0)):
    """Interleaved source/detector lattice on the top surface and its channels."""
    top = grid.top_mm
    ext = np.array(grid.dims[:2]) * grid.voxel_mm
    xs = np.arange(spacing_mm / 2, ext[0], spacing_mm)
    ys = np.arange(spacing_mm / 2, ext[1], spacing_mm)
    sources, detectors = [], []
    for a, x in enumerate(xs):
        for b, y in enumerate(ys):
            pos = np.array([x, y, top])
            (sources if (a + b) % 2 == 0 else detectors).append(pos)
    sources, detectors = np.array(sources), np.array(detectors)
    chans = []
    for si, s in enumerate(sources):
        for di, d in enumerate(detectors):
            dist = float(np.linalg.norm(s - d))
            if sds_range[0] <= dist < sds_range[1]:
                chans.append(Channel(si, di, dist))
    return sources, detectors, chans


# -- frequency-domain observables ------------------------------------------------------

class PhotonRecord(NamedTuple):
    detector_id: int
    weight: float
    time_s: float


class FdObservables(NamedTuple):
    intensity: float
    amplitude: float
    phase: float
    phase_defined: bool


def _check_records(weights, times):
    if np.any(~(weights > 0)) or np.any(weights > 1):
        raise ValueError("photon weights must lie in (0, 1]")
    if np.any(~(times >= 0)):
        raise ValueError("photon times of flight must be nonnegative")


def fd_observables(records, n_input, freq):
    """Total weight, modulation amplitude and phase of detected packets.

    ``records`` is a sequence of :class:`PhotonRecord` or an ``(k, 2)``
    array of ``(weight, time_s)``.  With no records the phase is NaN and
    flagged undefined.
    """
    if n_input < 1:
        raise ValueError("n_input must be >= 1")
    if len(records) and isinstance(records[0], PhotonRecord):
        arr = np.array([(r.weight, r.time_s) for r in records], dtype=np.float64)
    else:
        arr = np.asarray(records, dtype=np.float64).reshape(-1, 2)
    if arr.shape[0] == 0:
        return FdObservables(0.0, 0.0, float("nan"), False)
    w, t = arr[:, 0], arr[:, 1]
    _check_records(w, t)
    sw, sx, sy = _accel.phasor_sums(w, t, freq)
    X, Y = sx / n_input, sy / n_input
    amp = float(np.hypot(X, Y))
    return FdObservables(sw / n_input, amp, float(np.arctan2(Y, X)), amp > 0)


def read_photon_csv(path):
    """Group a ``detector_id,weight,time_s`` file into per-detector arrays."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["detector_id"]), []).append(
                (float(row["weight"]), float(row["time_s"]))
            )
    result = {}
    for det, rows in out.items():
        arr = np.array(rows)
        _check_records(arr[:, 0], arr[:, 1])
        result[det] = arr
    return result


# -- synthetic operator ensembles --------------------------------------------------------

@dataclass(frozen=True)
class EnsembleSpec:
    """Shape of the synthetic sensitivity kernels.

    ``k_*`` are effective attenuation coefficients (1/mm) of the two data
    types; the smaller phase value gives phase rows a slower depth falloff.
    """

    k_log_amplitude: float = 0.22
    k_phase: float = 0.15
    scale_log_amplitude: float = 1.0
    scale_phase: float = 0.5
    lateral_mm: float = 4.0
    modes: int = 3


def _green(r, k, r_min):
    r = np.maximum(r, r_min)
    return np.exp(-k * r) / r


def banana_sensitivity(points, source, detector, k, r_min):
    """Normalised product of point-source kernels from source and detector."""
    rs = np.linalg.norm(points - source, axis=1)
    rd = np.linalg.norm(points - detector, axis=1)
    norm = _green(np.linalg.norm(source - detector), k, r_min)
    return _green(rs, k, r_min) * _green(rd, k, r_min) / norm


def _smooth_field(rng, xy, extent, modes):
    """Random smooth 2-D field with unit RMS coefficient scale."""
    u = xy / extent
    f = np.zeros(len(xy))
    for a in range(modes):
        for b in range(modes):
            c = rng.standard_normal(2) / (1.0 + a + b)
            phase = 2 * np.pi * (a * u[:, 0] + b * u[:, 1])
            f += c[0] * np.cos(phase) + c[1] * np.sin(phase)
    return f / modes


def _sample_operator(grid, centers, sources, detectors, channels, spec, rng, variation):
    extent = np.array(grid.dims[:2]) * grid.voxel_mm
    xy = centers[:, :2]
    depth = grid.top_mm - centers[:, 2]
    if variation > 0:
        stretch = np.exp(variation * _smooth_field(rng, xy, extent, spec.modes))
        shift = variation * spec.lateral_mm * np.stack(
            [_smooth_field(rng, xy, extent, spec.modes) for _ in range(2)], axis=1
        )
        katt = np.exp(0.3 * variation * rng.standard_normal(2))
    else:
        stretch, shift, katt = np.ones(len(xy)), np.zeros((len(xy), 2)), np.ones(2)
    warped = np.column_stack([xy + shift, grid.top_mm - depth * stretch])
    r_min = 0.5 * grid.voxel_mm
    l = 2 * len(channels)
    out = np.empty((l, grid.n))
    for c, ch in enumerate(channels):
        s, d = sources[ch.source], detectors[ch.detector]
        out[c] = spec.scale_log_amplitude * banana_sensitivity(
            warped, s, d, spec.k_log_amplitude * katt[0], r_min)
        out[len(channels) + c] = spec.scale_phase * banana_sensitivity(
            warped, s, d, spec.k_phase * katt[1], r_min)
    return out * grid.voxel_mm**3


def synthesize_ensemble(grid, m, variation, seed=0, spec=EnsembleSpec(), channels=None):
    """``m`` smooth nonnegative sensitivity operators with random anatomical warps.

    Each sample draws smooth fields that stretch the depth axis and shift
    voxels laterally (scaled by ``variation``), plus a global change of the
    attenuation.  Rows ``0..c-1`` are log-amplitude channels and rows
    ``c..2c-1`` the matching phase channels.
    """
    if m < 2:
        raise ValueError("an ensemble needs m >= 2 samples")
    if variation < 0:
        raise ValueError("variation must be nonnegative")
    sources, detectors, chans = default_channels(grid) if channels is None else channels
    if not chans:
        raise ValueError("no source-detector channel falls inside the SDS range")
    centers = grid.centers
    rngs = [np.random.default_rng([seed, i]) for i in range(m)]
    samples = np.stack([
        _sample_operator(grid, centers, sources, detectors, chans, spec, rngs[i], variation)
        for i in range(m)
    ])
    groups = [RowGroup("log_amplitude", ch.sds_mm, c) for c, ch in enumerate(chans)]
    groups += [RowGroup("phase", ch.sds_mm, c) for c, ch in enumerate(chans)]
    return OperatorEnsemble(samples, groups)


# -- perturbation patterns -----------------------------------------------------------------

@dataclass(frozen=True)
class PatternGeometry:
    superficial_radius: float = 5.0
    brain_radius: float = 6.0
    anterior_radius: float = 5.0
    brain_depth_offset: float = 2.5
    anterior_shift: float = 10.0
    brain_contrast: float = 0.008
    superficial_contrast: float = 0.006
    cortical_contrast: float = 0.006


@dataclass(frozen=True)
class Region:
    voxels: np.ndarray
    contrast: float
    depth_class: str
    site: int = -1

    def __post_init__(self):
        if self.depth_class not in ("superficial", "cortical", "deep"):
            raise ValueError(f"unknown depth class {self.depth_class!r}")
        if not self.contrast > 0:
            raise ValueError("region contrast must be positive")
        object.__setattr__(self, "voxels", np.unique(np.asarray(self.voxels, dtype=np.int64)))

    @property
    def empty(self):
        return self.voxels.size == 0


@dataclass
class PerturbationPattern:
    regions: list
    n: int
    flags: list = field(default_factory=list)

    def __post_init__(self):
        seen = np.zeros(self.n, dtype=bool)
        for r in self.regions:
            if r.voxels.size and (r.voxels.min() < 0 or r.voxels.max() >= self.n):
                raise ValueError("region voxel index out of range")
            if np.any(seen[r.voxels]):
                raise ValueError("perturbation regions overlap")
            seen[r.voxels] = True

    def to_vector(self):
        x = np.zeros(self.n)
        for r in self.regions:
            x[r.voxels] = r.contrast
        return x

    @property
    def support(self):
        return np.flatnonzero(self.to_vector())

    @property
    def nonempty_regions(self):
        return [r for r in self.regions if not r.empty]


def _half_ball(centers, center, radius, below=True):
    d = np.linalg.norm(centers - center, axis=1)
    side = centers[:, 2] <= center[2] if below else centers[:, 2] >= center[2]
    return (d <= radius) & side


def make_pattern(grid, sites, geometry=PatternGeometry()):
    """Three regions per surface anchor: superficial, deep brain, anterior cortical.

    Voxels claimed by an earlier region are removed from later ones, so
    regions stay disjoint.  Empty regions are kept and listed in ``flags``.
    """
    centers = grid.centers
    labels = grid.flat_labels
    surface = grid.surface
    g = geometry
    claimed = np.zeros(grid.n, dtype=bool)
    regions, flags = [], []

    def add(mask, contrast, cls, s):
        mask = mask & ~claimed
        claimed[mask] = True
        reg = Region(np.flatnonzero(mask), contrast, cls, s)
        if reg.empty:
            flags.append(f"site {s}: {cls} region is empty")
        regions.append(reg)

    def brain_center(point):
        i, j = grid.column_of(point)
        top = grid.brain_top_mm(i, j)
        if top is None:
            return None
        return np.array([point[0], point[1], top - g.brain_depth_offset])

    for s, anchor in enumerate(np.asarray(sites, dtype=np.float64).reshape(-1, 3)):
        i, j = grid.column_of(anchor)
        top_voxel = np.ravel_multi_index((i, j, grid.dims[2] - 1), grid.dims)
        if not surface[top_voxel] or abs(anchor[2] - grid.top_mm) > 0.5 * grid.voxel_mm:
            raise ValueError(f"site {s} at {tuple(anchor)} is not on the exterior surface")
        add(_half_ball(centers, anchor, g.superficial_radius) & (labels == SCALP),
            g.superficial_contrast, "superficial", s)
        deep = brain_center(anchor)
        mask = np.zeros(grid.n, dtype=bool) if deep is None else \
            _half_ball(centers, deep, g.brain_radius) & (labels == BRAIN)
        add(mask, g.brain_contrast, "deep", s)
        shifted = anchor + np.array([0.0, g.anterior_shift, 0.0])
        try:
            front = brain_center(shifted)
        except ValueError:
            front = None
        mask = np.zeros(grid.n, dtype=bool) if front is None else \
            _half_ball(centers, front, g.anterior_radius) & (labels == BRAIN)
        add(mask, g.cortical_contrast, "cortical", s)
    for f in flags:
        log.warning("pattern: %s", f)
    return PerturbationPattern(regions, grid.n, flags)


# -- difference data ----------------------------------------------------------------------

def row_noise_sds(row_groups, intensity, amplitude, spec=NoiseSpec()):
    """Per-row SDs of difference data from per-channel ``(I, A)``.

    Log-amplitude rows use ``sigma_A / A``; phase rows use the phase SD in
    degrees.  Both are scaled by the difference factor.
    """
    intensity = np.asarray(intensity, dtype=np.float64)
    amplitude = np.asarray(amplitude, dtype=np.float64)
    sds = np.empty(len(row_groups))
    for r, g in enumerate(row_groups):
        c = g.channel
        if g.data_type == "log_amplitude":
            single = noise_std_log_amplitude(intensity[c], amplitude[c], spec)
        else:
            single = noise_std_phase(intensity[c], spec)
        sds[r] = difference_noise_std(single, spec)
    return sds


def generate_difference_data(true_operator, pattern, sds, seed=0):
    """``b = A_true x* + e`` with independent ``e_r ~ N(0, sds_r^2)``.

    ``pattern`` may be a :class:`PerturbationPattern` or the vector ``x*``.
    ``sds=None`` (or all zeros) gives noiseless data.
    """
    A = np.asarray(true_operator, dtype=np.float64)
    x = pattern.to_vector() if isinstance(pattern, PerturbationPattern) else \
        np.asarray(pattern, dtype=np.float64)
    if A.ndim != 2 or x.shape != (A.shape[1],):
        raise DimensionError("pattern vector", (A.shape[1],), x.shape)
    b = A @ x
    if sds is None:
        return b
    sds = np.asarray(sds, dtype=np.float64)
    if sds.shape != (A.shape[0],):
        raise DimensionError("noise SDs", (A.shape[0],), sds.shape)
    if np.any(sds < 0):
        raise ValueError("noise SDs must be nonnegative")
    return b + sds * np.random.default_rng(seed).standard_normal(A.shape[0])


# -- voxel-map files ---------------------------------------------------------------------

def write_voxel_map(path, values, dims, voxel_mm, anterior_axis="+y"):
    """Run-length encoded voxel values with a plain-text header."""
    v = np.asarray(values).ravel()
    if v.size != int(np.prod(dims)):
        raise DimensionError("voxel map", int(np.prod(dims)), v.size)
    is_int = np.issubdtype(v.dtype, np.integer) or v.dtype == bool
    with open(path, "w") as fh:
        fh.write("bilinv-voxel-map 1\n")
        fh.write("dims {} {} {}\n".format(*dims))
        fh.write(f"voxel_mm {voxel_mm!r}\n")
        fh.write(f"anterior {anterior_axis}\n")
        fh.write(f"dtype {'int' if is_int else 'float'}\n")
        fh.write("runs\n")
        if v.size == 0:
            return
        breaks = np.flatnonzero(v[1:] != v[:-1]) + 1
        starts = np.concatenate([[0], breaks])
        counts = np.diff(np.concatenate([starts, [v.size]]))
        for s, c in zip(starts, counts):
            val = int(v[s]) if is_int else repr(float(v[s]))
            fh.write(f"{val} {c}\n")


def read_voxel_map(path):
    """Returns ``(values, dims, voxel_mm, anterior_axis)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("bilinv-voxel-map"):
        raise ValueError(f"{path} is not a voxel map")
    head = {}
    i = 1
    while lines[i] != "runs":
        key, _, rest = lines[i].partition(" ")
        head[key] = rest
        i += 1
    dims = tuple(int(t) for t in head["dims"].split())
    conv = int if head.get("dtype") == "int" else float
    vals, counts = [], []
    for line in lines[i + 1:]:
        if line.strip():
            a, c = line.split()
            vals.append(conv(a))
            counts.append(int(c))
    out = np.repeat(np.array(vals, dtype=np.int64 if conv is int else np.float64), counts)
    if out.size != int(np.prod(dims)):
        raise ValueError("run lengths do not cover the grid")
    return out, dims, float(head["voxel_mm"]), head.get("anterior", "+y")
