"""Image-method room impulse responses and static/moving scene rendering.

Shoebox rooms with uniform wall absorption derived from the target RT60.
Image taps are placed with an 81-tap windowed-sinc fractional-delay kernel;
nearest-sample rounding would break mirror-symmetric mic geometries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, fftconvolve, lfilter

from . import ConfigError

SOUND_SPEED = 343.0
SINC_HALF = 40  # 81-tap fractional-delay kernel
_CHUNK = 120_000


@dataclass(frozen=True)
class Room:
    """Shoebox enclosure with uniform wall absorption."""

    dimensions: tuple[float, float, float] = (6.0, 5.5, 4.5)
    rt60: float = 0.6
    sample_rate: int = 16000
    sound_speed: float = SOUND_SPEED

    def __post_init__(self):
        if any(d <= 0 for d in self.dimensions):
            raise ConfigError("room dimensions must be positive")
        if self.rt60 <= 0:
            raise ConfigError("rt60 must be positive")

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dimensions
        return lx * ly * lz

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dimensions
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    def absorption(self) -> float:
        """Uniform wall absorption hitting the target RT60.

        Eyring's inversion 1 - exp(-0.161 V / (S T)) rather than plain
        Sabine: the mirror-image decay follows the Eyring law, so this
        keeps the Schroeder-measured RT60 within ~10% of the target where
        the Sabine inverse undershoots by up to ~20% at high absorption.
        """
        x = 0.161 * self.volume / (self.surface * self.rt60)
        return float(1.0 - np.exp(-x))

    def contains(self, p: np.ndarray) -> bool:
        return bool(np.all(p > 0) and np.all(p < np.asarray(self.dimensions)))


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions in meters, one row per mic."""

    positions: np.ndarray

    @property
    def mics(self) -> int:
        return self.positions.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.positions.mean(axis=0)


def uca(
    mics: int = 4,
    radius: float = 0.1,
    center: tuple[float, float, float] = (2.3, 2.45, 1.1),
) -> ArrayGeometry:
    """Uniform circular array in the horizontal plane; mic 1 sits at 0 deg
    (+x from the center), subsequent mics counterclockwise."""
    angles = 2.0 * np.pi * np.arange(mics) / mics
    pos = np.stack(
        [
            center[0] + radius * np.cos(angles),
            center[1] + radius * np.sin(angles),
            np.full(mics, center[2]),
        ],
        axis=1,
    )
    return ArrayGeometry(positions=pos)


@dataclass
class Trajectory:
    """Piecewise-linear source path: list of (time_s, position) waypoints."""

    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("trajectory times must be strictly increasing")
        if len(self.times) != len(self.points):
            raise ConfigError("waypoint times/positions length mismatch")

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def at(self, t: float) -> np.ndarray:
        t = min(max(t, self.times[0]), self.times[-1])
        out = np.empty(3)
        for d in range(3):
            out[d] = np.interp(t, self.times, self.points[:, d])
        return out


def _axis_images(src: float, length: float, mic: float, reach: float):
    """Per-axis image coordinates and reflection exponents within reach of
    the mic coordinate."""
    nmax = int(np.ceil((reach + length) / (2.0 * length))) + 1
    n = np.arange(-nmax, nmax + 1)
    coords = []
    expo = []
    for q in (0, 1):
        c = (1 - 2 * q) * src + 2.0 * n * length
        e = np.abs(n - q) + np.abs(n)
        keep = np.abs(c - mic) <= reach
        coords.append(c[keep])
        expo.append(e[keep])
    return np.concatenate(coords), np.concatenate(expo)


_KERN_J = np.arange(-SINC_HALF, SINC_HALF + 1)
_KERN_SIGN = np.where(_KERN_J % 2 == 0, 1.0, -1.0)
_KERN_COS = np.cos(np.pi * _KERN_J / (SINC_HALF + 1))
_KERN_SIN = np.sin(np.pi * _KERN_J / (SINC_HALF + 1))


def _place_taps(h_padded, delays, amps, fs):
    """Scatter-add windowed-sinc taps into a buffer padded by SINC_HALF on
    both sides; delays in seconds, all within the padded range by the
    caller's reach bound.

    sinc(j - f) folds to sin(pi f) * (-1)^j / (pi (j - f)), and the Hann
    factor splits by the angle-addition rule, so only one sin/cos pair is
    evaluated per tap instead of one per kernel sample.
    """
    ds = delays * fs
    n0 = np.floor(ds).astype(np.int64)
    frac = ds - n0
    u = _KERN_J[None, :] - frac[:, None]
    scale = amps * np.sin(np.pi * frac) / np.pi
    with np.errstate(divide="ignore", invalid="ignore"):
        kern = (scale[:, None] * _KERN_SIGN[None, :]) / u
    on_grid = np.abs(u) < 1e-12
    if np.any(on_grid):
        kern[on_grid] = np.broadcast_to(amps[:, None], u.shape)[on_grid]
    ang = np.pi * frac / (SINC_HALF + 1)
    kern *= 0.5 + 0.5 * (
        np.cos(ang)[:, None] * _KERN_COS[None, :]
        + np.sin(ang)[:, None] * _KERN_SIN[None, :]
    )
    idx = n0[:, None] + (_KERN_J + SINC_HALF)[None, :]
    h_padded += np.bincount(
        idx.ravel(), weights=kern.ravel(), minlength=len(h_padded)
    )[: len(h_padded)]


def image_rir(
    room: Room,
    source,
    mic,
    max_length: int | None = None,
    absorption_override: float | None = None,
) -> np.ndarray:
    """Time-domain RIR between a source and one mic (or a stack of mics).

    ``mic`` may be (3,) or (M, 3); the result is (max_length,) or
    (M, max_length). Direct-path taps follow 1/(4 pi d) spreading;
    ``absorption_override=1.0`` yields the anechoic (direct path only)
    response.

    Reverberant responses are high-passed at 100 Hz: same-sign image taps
    pile up coherently below ~100 Hz and would otherwise dominate the late
    energy, inflating the measured decay time far past the target.
    """
    src = np.asarray(source, dtype=float)
    mics = np.atleast_2d(np.asarray(mic, dtype=float))
    if not room.contains(src) or not all(room.contains(m) for m in mics):
        raise ConfigError("geometry violation: positions must lie inside the room")
    if any(np.linalg.norm(src - m) == 0 for m in mics):
        raise ConfigError("geometry violation: source coincides with a mic")

    fs = room.sample_rate
    c = room.sound_speed
    if max_length is None:
        max_length = int(round(room.rt60 * fs))
    alpha = room.absorption() if absorption_override is None else absorption_override
    beta = float(np.sqrt(max(0.0, 1.0 - alpha)))
    reach = c * (max_length + SINC_HALF) / fs

    # buffers padded by the kernel support; trimmed before returning
    pad = np.zeros((mics.shape[0], max_length + 4 * SINC_HALF + 1))
    if beta == 0.0:
        for im, m in enumerate(mics):
            d = float(np.linalg.norm(src - m))
            _place_taps(pad[im], np.array([d / c]), np.array([1.0 / (4.0 * np.pi * d)]), fs)
        h = pad[:, SINC_HALF : SINC_HALF + max_length]
        return h[0] if np.asarray(mic).ndim == 1 else h

    center = mics.mean(axis=0)
    margin = float(np.max(np.linalg.norm(mics - center, axis=1)))
    cx, ex = _axis_images(src[0], room.dimensions[0], center[0], reach + margin)
    cy, ey = _axis_images(src[1], room.dimensions[1], center[1], reach + margin)
    cz, ez = _axis_images(src[2], room.dimensions[2], center[2], reach + margin)

    nyz = len(cy) * len(cz)
    gy = np.repeat(cy, len(cz))
    gz = np.tile(cz, len(cy))
    gey = np.repeat(ey, len(cz))
    gez = np.tile(ez, len(cy))
    log_beta = np.log(beta)

    step = max(1, _CHUNK // nyz)
    for start in range(0, len(cx), step):
        xs = cx[start : start + step]
        exs = ex[start : start + step]
        coords = np.empty((len(xs) * nyz, 3))
        coords[:, 0] = np.repeat(xs, nyz)
        coords[:, 1] = np.tile(gy, len(xs))
        coords[:, 2] = np.tile(gz, len(xs))
        expo = np.repeat(exs, nyz) + np.tile(gey + gez, len(xs))
        gains = np.exp(expo * log_beta)
        for im, m in enumerate(mics):
            d = np.linalg.norm(coords - m[None, :], axis=1)
            keep = d <= reach
            if not np.any(keep):
                continue
            dk = d[keep]
            _place_taps(pad[im], dk / c, gains[keep] / (4.0 * np.pi * dk), fs)
    h = pad[:, SINC_HALF : SINC_HALF + max_length]
    b, a = butter(2, 100.0 / (fs / 2.0), "highpass")
    h = lfilter(b, a, h, axis=1)
    return h[0] if np.asarray(mic).ndim == 1 else h


def render_static(
    room: Room,
    array: ArrayGeometry,
    positions,
    signals,
    max_length: int | None = None,
    absorption_override: float | None = None,
    rirs=None,
) -> np.ndarray:
    """Mix of sources convolved with their RIRs, truncated to the longest
    source signal: x_m = sum_s h_{m,s} * s_s. Precomputed ``rirs`` (list of
    (M, L) arrays per source) skip the image computation."""
    positions = [np.asarray(p, dtype=float) for p in positions]
    signals = [np.asarray(s, dtype=float) for s in signals]
    if len(positions) != len(signals):
        raise ConfigError("one signal per source required")
    nsamp = max(len(s) for s in signals)
    out = np.zeros((nsamp, array.mics))
    for si, (pos, sig) in enumerate(zip(positions, signals)):
        h = (
            rirs[si]
            if rirs is not None
            else image_rir(room, pos, array.positions, max_length, absorption_override)
        )
        y = fftconvolve(h, sig[None, :], axes=1)[:, :nsamp]
        out[: y.shape[1]] += y.T
    return out


def render_moving(
    room: Room,
    array: ArrayGeometry,
    trajectory: Trajectory,
    source_signal,
    rir_hop: float = 0.005,
    max_length: int | None = None,
    absorption_override: float | None = None,
) -> np.ndarray:
    """Moving-source render: the RIR is recomputed every ``rir_hop`` seconds
    at the interpolated position and consecutive segment outputs are
    linearly cross-faded over one hop (triangular input gates that sum to
    one, so a constant trajectory reproduces render_static exactly)."""
    sig = np.asarray(source_signal, dtype=float)
    fs = room.sample_rate
    duration = len(sig) / fs
    if trajectory.end_time < duration - 0.5 * rir_hop:
        raise ConfigError("trajectory underrun: path shorter than the signal")

    hop = max(1, int(round(rir_hop * fs)))
    nseg = int(np.ceil(len(sig) / hop))
    out = np.zeros((len(sig), array.mics))
    ramp_up = np.arange(1, hop + 1) / hop
    prev_pos = None
    rirs = None
    for i in range(nseg):
        pos = trajectory.at(i * hop / fs)
        if prev_pos is None or not np.array_equal(pos, prev_pos):
            rirs = image_rir(room, pos, array.positions, max_length, absorption_override)
            prev_pos = pos
        start = max(0, (i - 1) * hop)
        stop = min(len(sig), (i + 1) * hop)
        gate = np.zeros(stop - start)
        down_at = 0
        if i > 0:
            up = min(hop, len(gate))
            gate[:up] = ramp_up[:up]
            down_at = hop
        if i == nseg - 1:
            gate[down_at:] = 1.0  # hold the last position
        elif len(gate) > down_at:
            gate[down_at:] = (1.0 - ramp_up)[: len(gate) - down_at]
        seg = sig[start:stop] * gate
        y = fftconvolve(rirs, seg[None, :], axes=1)
        stop_out = min(len(sig), start + y.shape[1])
        out[start:stop_out] += y[:, : stop_out - start].T
    return out
