"""Batch dereverberation of static sources.

Joint estimation alternates four coordinate-descent updates per iteration:
multichannel prediction filters from weighted normal equations, a relative
transfer function from the residual covariance, a distortionless spatial
filter against the predicted-reverberation covariance, and a per-frame AR
power spectrum of the spatial output. Comparison systems: plain
multichannel linear prediction, the cascade of prediction followed by one
spatial-filtering pass, and a superdirective beamformer.

Bins are independent work units within one iteration; iterations are a
sequential barrier because the per-frame AR step couples all bins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ConfigError
from .numerics import ar_psd_from_autocorr, ar_psd_frame, hermitian_solve, relative_ridge
from .rir import ArrayGeometry
from .stft import StftConfig, StftTensor, synthesize

logger = logging.getLogger(__name__)


@dataclass
class BatchConfig:
    """Parameters of the batch estimators.

    ``taps``/``delay`` are per-mic prediction order L and frame delay D;
    prediction uses frames n-D-1 .. n-D-L, strictly older than n-D.
    ``known_rtf`` (bins, M) freezes the steering vector, for selecting a
    desired source among several.
    """

    taps: int = 12
    delay: int = 2
    iterations: int = 5
    ar_order: int = 21
    reference_mic: int = 0
    known_rtf: np.ndarray | None = None
    ridge: float | None = None

    def __post_init__(self):
        if self.taps < 1:
            raise ConfigError("taps must be >= 1")
        if self.delay < 0:
            raise ConfigError("delay must be >= 0")
        if self.delay == 0:
            logger.warning("delay=0 fits short-term speech correlation and degrades output")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")


@dataclass
class BatchResult:
    """Outputs of a batch run; ``g``/``a``/``w`` are the logged filters."""

    d1: np.ndarray
    waveform: np.ndarray
    g: np.ndarray
    a: np.ndarray
    w: np.ndarray
    gamma: np.ndarray
    d_hat: np.ndarray
    r_hat: np.ndarray
    config: BatchConfig
    stft_config: StftConfig
    iterates: list[np.ndarray] = field(default_factory=list)


def build_predictor(tensor: StftTensor, n: int, k: int, taps: int, delay: int) -> np.ndarray:
    """Stacked predictor vector for one frame and bin: mic-major blocks of
    x_m[n-D-1] .. x_m[n-D-L]; out-of-range history reads as zero."""
    m = tensor.mics
    phi = np.zeros(m * taps, dtype=complex)
    for mi in range(m):
        for li in range(taps):
            src = n - delay - 1 - li
            if src >= 0:
                phi[mi * taps + li] = tensor.data[src, k, mi]
    return phi


def delayed_stack(data: np.ndarray, taps: int, delay: int) -> np.ndarray:
    """Predictor vectors for all frames and bins at once.

    data is (frames, bins, mics); returns (bins, frames, mics*taps) in the
    same mic-major tap order as build_predictor.
    """
    nfr, nbin, m = data.shape
    phi = np.zeros((nbin, nfr, m * taps), dtype=complex)
    for li in range(taps):
        shift = delay + 1 + li
        if shift >= nfr:
            break
        # frame n reads frame n-shift
        phi[:, shift:, li::taps] = data[: nfr - shift].transpose(1, 0, 2)
    return phi


def estimate_mclp_filters(
    phi: np.ndarray,
    x: np.ndarray,
    gamma: np.ndarray,
    ridge: float | None = None,
) -> np.ndarray:
    """Prediction matrices G (bins, ML, M) from the gamma-weighted normal
    equations R_pp G = R_px, solved per bin with a ridged Hermitian solve.

    ``phi`` is (bins, frames, ML) from delayed_stack, ``x`` is
    (bins, frames, M) and ``gamma`` is (frames, bins), strictly positive.
    """
    nbin, nfr, ml = phi.shape
    if nfr < ml:
        logger.warning("fewer frames (%d) than predictor dimension (%d); "
                       "relying on ridge regularization", nfr, ml)
    weights = (1.0 / gamma.T)[:, :, None]  # (bins, frames, 1)
    wphi = phi * weights
    r_pp = wphi.transpose(0, 2, 1) @ phi.conj()
    r_px = wphi.transpose(0, 2, 1) @ x.conj()
    g = np.empty_like(r_px)
    for k in range(nbin):
        g[k] = hermitian_solve(r_pp[k], r_px[k], ridge)
    return g


def prediction_residual(
    tensor: StftTensor, g: np.ndarray, taps: int, delay: int
) -> tuple[StftTensor, StftTensor]:
    """Early/late split d_hat = x - G^H phi, r_hat = G^H phi; the two parts
    sum back to the input exactly."""
    phi = delayed_stack(tensor.data, taps, delay)
    r = phi @ g.conj()  # (bins, frames, M)
    r_data = r.transpose(1, 0, 2)
    d_data = tensor.data - r_data
    return (
        StftTensor(data=d_data, config=tensor.config),
        StftTensor(data=r_data, config=tensor.config),
    )


def estimate_rtf(
    d_frames: np.ndarray,
    reference_mic: int = 0,
    previous: np.ndarray | None = None,
) -> tuple[np.ndarray, bool]:
    """RTF for one bin from residual frames (frames, M): first column of
    the unweighted sample covariance, normalized to 1 at the reference mic.

    A silent reference channel returns the previous (or identity) RTF with
    ok=False.
    """
    d = np.asarray(d_frames)
    r_dd = d.T @ d.conj()
    return _rtf_from_cov_single(r_dd, reference_mic, previous)


def _rtf_from_cov_single(r_dd, reference_mic, previous):
    m = r_dd.shape[0]
    ref_power = float(r_dd[reference_mic, reference_mic].real)
    floor = 1e-12 * float(np.trace(r_dd).real) / m
    if ref_power <= floor or ref_power <= 0.0:
        fallback = previous if previous is not None else _identity_rtf(m, reference_mic)
        return fallback, False
    a = r_dd[:, reference_mic] / ref_power
    a[reference_mic] = 1.0
    return a, True


def _identity_rtf(m: int, reference_mic: int) -> np.ndarray:
    a = np.zeros(m, dtype=complex)
    a[reference_mic] = 1.0
    return a


def rtf_from_cov(
    r_dd: np.ndarray, reference_mic: int = 0, previous: np.ndarray | None = None
) -> np.ndarray:
    """Batched estimate_rtf over stacked covariances (bins, M, M)."""
    nbin = r_dd.shape[0]
    a = np.empty((nbin, r_dd.shape[1]), dtype=complex)
    for k in range(nbin):
        prev = previous[k] if previous is not None else None
        a[k], _ = _rtf_from_cov_single(r_dd[k], reference_mic, prev)
    return a


def mvdr_weights(r_noise: np.ndarray, a: np.ndarray, ridge: float | None = None) -> np.ndarray:
    """Distortionless minimum-variance weights w = R^-1 a / (a^H R^-1 a);
    w^H a = 1 holds to machine precision."""
    a = np.asarray(a, dtype=complex)
    if not np.any(a):
        raise ConfigError("steering vector must be nonzero")
    u = hermitian_solve(np.asarray(r_noise), a, ridge)
    return u / np.vdot(a, u)


def mvdr_weights_batch(r_noise: np.ndarray, a: np.ndarray, ridge=None) -> np.ndarray:
    """mvdr_weights over stacked bins: r_noise (bins, M, M), a (bins, M)."""
    nbin, m, _ = r_noise.shape
    if ridge is None:
        ridge = 1e-6 * np.einsum("kmm->k", r_noise).real / m
    else:
        ridge = np.full(nbin, float(ridge))
    ridged = r_noise + ridge[:, None, None] * np.eye(m)
    u = np.linalg.solve(ridged, a[:, :, None])[:, :, 0]
    denom = np.einsum("km,km->k", a.conj(), u)
    return u / denom[:, None]


def estimate_gamma(d1: np.ndarray, order: int = 21) -> np.ndarray:
    """Per-frame AR power spectrum of the spatial-filter output;
    d1 is (frames, bins), the result has the same shape and is strictly
    positive."""
    nfr, nbin = d1.shape
    gamma = np.empty((nfr, nbin))
    for n in range(nfr):
        gamma[n] = ar_psd_frame(d1[n], order)
    return gamma


def _gamma_multichannel(d: np.ndarray, order: int) -> np.ndarray:
    """AR power spectrum from the mic-averaged autocorrelation of the
    multichannel residual (the plain-MCLP weighting rule); d is
    (bins, frames, M), result (frames, bins)."""
    nbin, nfr, nmic = d.shape
    nfft = 2 * (nbin - 1)
    gamma = np.empty((nfr, nbin))
    power = np.abs(d) ** 2  # (bins, frames, M)
    for n in range(nfr):
        r = np.fft.irfft(power[:, n, :], n=nfft, axis=0).mean(axis=1)
        floor = 1e-10 * (float(np.mean(power[:, n, :])) + 1e-20)
        gamma[n] = ar_psd_from_autocorr(r, nfft, order, floor)
    return gamma


def _bins_view(tensor: StftTensor) -> np.ndarray:
    return tensor.data.transpose(1, 0, 2)  # (bins, frames, M)


def _unweighted_cov(d: np.ndarray) -> np.ndarray:
    return np.einsum("knm,knl->kml", d, d.conj())


def _weighted_cov(d: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    return np.einsum("kn,knm,knl->kml", 1.0 / gamma.T, d, d.conj())


def _spatial_output(w: np.ndarray, d: np.ndarray) -> np.ndarray:
    # w (bins, M), d (bins, frames, M) -> (frames, bins)
    return np.einsum("km,knm->nk", w.conj(), d)


def run_rtf_mclp(
    tensor: StftTensor,
    config: BatchConfig | None = None,
    num_samples: int | None = None,
    keep_iterates: bool = False,
) -> BatchResult:
    """Joint prediction + spatial filtering loop for a static source.

    Initialization treats the mic signals themselves as the residual: RTF
    and spatial filter come from their covariance, and the first AR power
    spectra from that state. Each iteration then chains prediction
    filters, residual, RTF (unless known a priori), spatial filter from
    the predicted-reverberation covariance, and the AR updates.

    Two AR weightings coexist, each matched to the residual its sum
    models: the prediction normal equations (full-rank solve over all
    mics) are weighted by the average-residual spectrum, while the
    reverberation covariance behind the spatial filter is weighted by the
    desired-signal spectrum taken from the spatial output. Sharing the
    desired-signal weights with the prediction stage consistently inverts
    the joint-vs-cascade ordering on synthetic material.
    """
    config = config or BatchConfig()
    if tensor.mics < 2:
        raise ConfigError("spatial filtering requires at least 2 mics")
    x = _bins_view(tensor)
    ref = config.reference_mic
    phi = delayed_stack(tensor.data, config.taps, config.delay)

    d_hat = x
    r_dd = _unweighted_cov(d_hat)
    a = config.known_rtf if config.known_rtf is not None else rtf_from_cov(r_dd, ref)
    w = mvdr_weights_batch(r_dd, a, config.ridge)
    gamma = estimate_gamma(_spatial_output(w, d_hat), config.ar_order)
    gamma_pred = _gamma_multichannel(d_hat, config.ar_order)

    iterates: list[np.ndarray] = []
    g = np.zeros((tensor.bins, tensor.mics * config.taps, tensor.mics), dtype=complex)
    r_hat = np.zeros_like(x)
    for _ in range(config.iterations):
        g = estimate_mclp_filters(phi, x, gamma_pred, config.ridge)
        r_hat = phi @ g.conj()
        d_hat = x - r_hat
        if config.known_rtf is None:
            a = rtf_from_cov(_unweighted_cov(d_hat), ref, previous=a)
        w = mvdr_weights_batch(_weighted_cov(r_hat, gamma), a, config.ridge)
        d1 = _spatial_output(w, d_hat)
        gamma = estimate_gamma(d1, config.ar_order)
        gamma_pred = _gamma_multichannel(d_hat, config.ar_order)
        if keep_iterates:
            iterates.append(_to_waveform(d1, tensor.config, num_samples))

    d1 = _spatial_output(w, d_hat)
    return BatchResult(
        d1=d1,
        waveform=_to_waveform(d1, tensor.config, num_samples),
        g=g,
        a=a,
        w=w,
        gamma=gamma,
        d_hat=d_hat,
        r_hat=r_hat,
        config=config,
        stft_config=tensor.config,
        iterates=iterates,
    )


def run_wpe(
    tensor: StftTensor,
    config: BatchConfig | None = None,
    num_samples: int | None = None,
    keep_iterates: bool = False,
) -> BatchResult:
    """Plain multichannel linear prediction with the AR source model; no
    RTF or spatial steps. The AR weights come from the mic-averaged
    autocorrelation of the multichannel residual."""
    config = config or BatchConfig()
    x = _bins_view(tensor)
    ref = config.reference_mic
    phi = delayed_stack(tensor.data, config.taps, config.delay)

    d_hat = x
    gamma = _gamma_multichannel(d_hat, config.ar_order)
    iterates: list[np.ndarray] = []
    g = np.zeros((tensor.bins, tensor.mics * config.taps, tensor.mics), dtype=complex)
    r_hat = np.zeros_like(x)
    for _ in range(config.iterations):
        g = estimate_mclp_filters(phi, x, gamma, config.ridge)
        r_hat = phi @ g.conj()
        d_hat = x - r_hat
        gamma = _gamma_multichannel(d_hat, config.ar_order)
        if keep_iterates:
            iterates.append(_to_waveform(d_hat[:, :, ref].T, tensor.config, num_samples))

    d1 = d_hat[:, :, ref].T  # (frames, bins)
    w = np.zeros((tensor.bins, tensor.mics), dtype=complex)
    w[:, ref] = 1.0
    return BatchResult(
        d1=d1,
        waveform=_to_waveform(d1, tensor.config, num_samples),
        g=g,
        a=w.copy(),
        w=w,
        gamma=gamma,
        d_hat=d_hat,
        r_hat=r_hat,
        config=config,
        stft_config=tensor.config,
        iterates=iterates,
    )


def run_cascade(
    tensor: StftTensor,
    config: BatchConfig | None = None,
    num_samples: int | None = None,
) -> BatchResult:
    """Cascade baseline: run the prediction stage to convergence, then one
    RTF estimate and one spatial-filter pass on its output."""
    config = config or BatchConfig()
    if tensor.mics < 2:
        raise ConfigError("spatial filtering requires at least 2 mics")
    wpe = run_wpe(tensor, config, num_samples=num_samples)
    ref = config.reference_mic
    if config.known_rtf is not None:
        a = config.known_rtf
    else:
        a = rtf_from_cov(_unweighted_cov(wpe.d_hat), ref)
    w = mvdr_weights_batch(_weighted_cov(wpe.r_hat, wpe.gamma), a, config.ridge)
    d1 = _spatial_output(w, wpe.d_hat)
    return BatchResult(
        d1=d1,
        waveform=_to_waveform(d1, tensor.config, num_samples),
        g=wpe.g,
        a=a,
        w=w,
        gamma=wpe.gamma,
        d_hat=wpe.d_hat,
        r_hat=wpe.r_hat,
        config=config,
        stft_config=tensor.config,
    )


def free_field_rtf(
    array: ArrayGeometry, source_position, stft_config: StftConfig, sound_speed: float = 343.0
) -> np.ndarray:
    """Unit-magnitude free-field steering vectors (bins, M): plane phase
    delays of the source relative to the array center."""
    src = np.asarray(source_position, dtype=float)
    dists = np.linalg.norm(array.positions - src[None, :], axis=1)
    tau = (dists - np.linalg.norm(array.center - src)) / sound_speed
    freqs = np.fft.rfftfreq(stft_config.fft_size, 1.0 / stft_config.sample_rate)
    return np.exp(-2j * np.pi * freqs[:, None] * tau[None, :])


def diffuse_coherence(
    array: ArrayGeometry, stft_config: StftConfig, sound_speed: float = 343.0
) -> np.ndarray:
    """Spherically diffuse noise coherence sinc(2 pi f d / c) per mic pair,
    (bins, M, M); rank-deficient at f -> 0, which the solver ridge absorbs."""
    freqs = np.fft.rfftfreq(stft_config.fft_size, 1.0 / stft_config.sample_rate)
    pos = array.positions
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    return np.sinc(2.0 * freqs[:, None, None] * dist[None, :, :] / sound_speed)


def run_sdb(
    tensor: StftTensor,
    array: ArrayGeometry,
    source_position,
    ridge: float | None = None,
    num_samples: int | None = None,
) -> BatchResult:
    """Superdirective beamformer: free-field steering toward the source and
    a diffuse-noise coherence matrix, no dereverberation."""
    a = free_field_rtf(array, source_position, tensor.config)
    gam = diffuse_coherence(array, tensor.config)
    w = mvdr_weights_batch(gam, a, ridge)
    x = _bins_view(tensor)
    d1 = _spatial_output(w, x)
    cfg = BatchConfig(iterations=1)
    return BatchResult(
        d1=d1,
        waveform=_to_waveform(d1, tensor.config, num_samples),
        g=np.zeros((tensor.bins, tensor.mics * cfg.taps, tensor.mics), dtype=complex),
        a=a,
        w=w,
        gamma=np.ones((tensor.num_frames, tensor.bins)),
        d_hat=x,
        r_hat=np.zeros_like(x),
        config=cfg,
        stft_config=tensor.config,
    )


def rtf_from_rir(
    rirs: np.ndarray,
    stft_config: StftConfig,
    early_duration: float = 0.008,
    reference_mic: int = 0,
) -> np.ndarray:
    """A-priori RTF from the true RIRs: DFT of the first 8 ms after the
    direct component, normalized to the reference mic."""
    h = np.atleast_2d(np.asarray(rirs, dtype=float))
    fs = stft_config.sample_rate
    onset = max(0, int(min(np.argmax(np.abs(h), axis=1))) - 2)
    span = int(round(early_duration * fs)) + 2
    seg = h[:, onset : onset + span]
    spec = np.fft.rfft(seg, n=stft_config.fft_size, axis=1)  # (M, bins)
    a = (spec / spec[reference_mic : reference_mic + 1, :]).T
    mag = np.abs(a)
    np.divide(a * 1e3, mag, out=a, where=mag > 1e3)  # clip runaway nulls
    return a


def apply_logged_filters(
    tensor: StftTensor, g: np.ndarray, w: np.ndarray, taps: int, delay: int
) -> np.ndarray:
    """Re-run logged batch filters on another signal (e.g. the known
    interferer): returns w^H (x - G^H phi) per frame and bin."""
    d_hat, _ = prediction_residual(tensor, g, taps, delay)
    return np.einsum("km,nkm->nk", w.conj(), d_hat.data)


def _to_waveform(d1: np.ndarray, config: StftConfig, num_samples: int | None) -> np.ndarray:
    out = synthesize(StftTensor(data=d1[:, :, None], config=config), num_samples)
    return out[:, 0]
