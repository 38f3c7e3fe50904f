"""Online dereverberation for dynamic sources.

Per-bin Kalman recursions track time-varying prediction coefficients under
a random-walk innovation model; the spatial filter is refreshed every frame
from recursively averaged covariances, and the relative transfer function
is updated only when the residual-to-reverberation energy ratio clears a
gate. Frames are strictly sequential; within a frame all bins are
independent once the frame-global AR power spectrum is computed, so the
state arrays carry the bin axis in front and every update broadcasts
over it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ConfigError
from .batch import mvdr_weights_batch
from .numerics import ar_psd_frame, ar_psd_from_autocorr
from .stft import StftConfig, StftTensor, synthesize


@dataclass
class OnlineConfig:
    """Online algorithm parameters.

    ``alpha_noise``/``alpha_rtf`` are the recursive-averaging constants for
    the reverberation covariance and the RTF covariance (0.1 for static
    sources, 0.01 for moving ones). ``innovation_floor`` is the additive
    epsilon on the innovation variances, ``init_cov_scale`` the eta scaling
    of the initial state covariance. ``fixed_innovation`` freezes the
    innovation covariance at a constant (0 gives recursive least squares,
    for oracle comparisons) instead of adapting it.
    """

    taps: int = 12
    delay: int = 2
    ar_order: int = 21
    alpha_noise: float = 0.1
    alpha_rtf: float = 0.1
    innovation_floor: float = 1e-6
    init_cov_scale: float = 1e-3
    rtf_gate: float = 0.1
    reference_mic: int = 0
    known_rtf: np.ndarray | None = None
    ridge: float | None = None
    fixed_innovation: float | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha_noise <= 1.0 and 0.0 < self.alpha_rtf <= 1.0):
            raise ConfigError("smoothing constants must lie in (0, 1]")
        if self.innovation_floor <= 0.0 and self.fixed_innovation is None:
            raise ConfigError("innovation floor must be positive")
        if self.init_cov_scale <= 0.0:
            raise ConfigError("initial covariance scale must be positive")


@dataclass
class KalmanBinState:
    """Recursion state for one bin, or a stack of bins along a leading
    axis (all fields share it).

    mu is (..., M, ML): posterior mean per mic. sigma (..., ML, ML) is the
    posterior covariance shared by all mics; lam (..., ML) the diagonal
    innovation covariance; r_rr / r_dd the recursive reverberation and
    residual covariances; a and w the current RTF and spatial filter.
    """

    mu: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    r_rr: np.ndarray
    r_dd: np.ndarray
    a: np.ndarray
    w: np.ndarray
    prev_mu: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.prev_mu is None:
            self.prev_mu = self.mu.copy()


def init_state(mics: int, taps: int, config: OnlineConfig, bins: int | None = None) -> KalmanBinState:
    """Algorithm starting point: w = 1/sqrt(M), mu = 0, Sigma = eta*I."""
    ml = mics * taps
    lead = () if bins is None else (bins,)
    eye = np.broadcast_to(np.eye(ml, dtype=complex), lead + (ml, ml)).copy()
    lam0 = config.innovation_floor if config.fixed_innovation is None else config.fixed_innovation
    return KalmanBinState(
        mu=np.zeros(lead + (mics, ml), dtype=complex),
        sigma=config.init_cov_scale * eye,
        lam=np.full(lead + (ml,), lam0),
        r_rr=np.zeros(lead + (mics, mics), dtype=complex),
        r_dd=np.zeros(lead + (mics, mics), dtype=complex),
        a=np.ones(lead + (mics,), dtype=complex),
        w=np.full(lead + (mics,), 1.0 / np.sqrt(mics), dtype=complex),
    )


def kalman_predict(state: KalmanBinState) -> KalmanBinState:
    """Random-walk time update: mean unchanged, Sigma += Lambda."""
    ml = state.sigma.shape[-1]
    idx = np.arange(ml)
    state.sigma[..., idx, idx] += state.lam
    return state


def kalman_update(
    state: KalmanBinState, x: np.ndarray, phi: np.ndarray, gamma
) -> tuple[KalmanBinState, np.ndarray]:
    """Measurement update with observation noise gamma; the gain is
    computed once per bin and applied to every mic's mean."""
    e = x - np.einsum("...mi,...i->...m", state.mu.conj(), phi)
    t = np.einsum("...ij,...j->...i", state.sigma, phi)
    denom = gamma + np.einsum("...i,...i->...", phi.conj(), t).real
    k = t / denom[..., None]
    sigma = state.sigma - k[..., :, None] * t.conj()[..., None, :]
    state.sigma = 0.5 * (sigma + sigma.conj().swapaxes(-1, -2))
    state.mu += e.conj()[..., :, None] * k[..., None, :]
    return state, e


def update_innovation_cov(state: KalmanBinState, floor: float) -> KalmanBinState:
    """Innovation variances from the change of the posterior means between
    consecutive frames, averaged over mics, plus the epsilon floor."""
    delta = state.mu - state.prev_mu
    state.lam = np.mean(np.abs(delta) ** 2, axis=-2) + floor
    return state


def a_priori_desired(state: KalmanBinState, x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Spatially filtered residual using strictly previous-frame filters."""
    r = np.einsum("...mi,...i->...m", state.mu.conj(), phi)
    return np.einsum("...m,...m->...", state.w.conj(), x - r)


def update_rtf_gated(
    state: KalmanBinState,
    d: np.ndarray,
    r: np.ndarray,
    alpha_rtf: float,
    gate: float,
    reference_mic: int = 0,
) -> np.ndarray:
    """Recursive RTF update, accepted only where the residual-to-
    reverberation energy ratio (per bin, averaged over mics) exceeds the
    gate. Returns the boolean acceptance mask."""
    e_d = np.mean(np.abs(d) ** 2, axis=-1)
    e_r = np.mean(np.abs(r) ** 2, axis=-1)
    accept = e_d / (e_r + 1e-30) > gate
    if not np.any(accept):
        return accept
    outer = d[..., :, None] * d.conj()[..., None, :]
    upd = (1.0 - alpha_rtf) * state.r_dd + alpha_rtf * outer
    mask = accept[..., None, None]
    state.r_dd = np.where(mask, upd, state.r_dd)
    ref_power = state.r_dd[..., reference_mic, reference_mic].real
    safe = ref_power > 1e-30
    new_a = np.where(
        (accept & safe)[..., None],
        state.r_dd[..., :, reference_mic] / np.where(safe, ref_power, 1.0)[..., None],
        state.a,
    )
    new_a[..., reference_mic] = 1.0
    state.a = new_a
    return accept


def update_reverb_cov(state: KalmanBinState, r: np.ndarray, gamma, alpha_noise: float) -> KalmanBinState:
    """Exponentially averaged, gamma-normalized reverberation covariance."""
    outer = r[..., :, None] * r.conj()[..., None, :]
    state.r_rr = (1.0 - alpha_noise) * state.r_rr + alpha_noise * outer / np.asarray(gamma)[..., None, None]
    return state


def online_mvdr(state: KalmanBinState, ridge: float | None = None) -> KalmanBinState:
    """Refresh w from the current reverberation covariance and RTF; same
    contract as the batch spatial filter."""
    r = state.r_rr
    single = r.ndim == 2
    if single:
        state.w = mvdr_weights_batch(r[None], state.a[None], ridge)[0]
    else:
        state.w = mvdr_weights_batch(r, state.a, ridge)
    return state


@dataclass
class OnlineResult:
    d1: np.ndarray
    waveform: np.ndarray
    frame_seconds: np.ndarray
    rtf_updates: int
    config: OnlineConfig
    stft_config: StftConfig
    shadow_d1: np.ndarray | None = None
    shadow_waveform: np.ndarray | None = None


class OnlineProcessor:
    """Streaming front end: feed one multichannel STFT frame at a time,
    get one enhanced frame back (causal, latency = one analysis window)."""

    def __init__(self, mics: int, stft_config: StftConfig | None = None,
                 config: OnlineConfig | None = None):
        self.config = config or OnlineConfig()
        self.stft_config = stft_config or StftConfig()
        self.mics = mics
        self.bins = self.stft_config.bins
        self.state = init_state(mics, self.config.taps, self.config, bins=self.bins)
        if self.config.known_rtf is not None:
            rtf = np.asarray(self.config.known_rtf, dtype=complex)
            if rtf.shape != (self.bins, mics):
                raise ConfigError("known_rtf must be (bins, mics)")
            self.state.a = rtf.copy()
        self.history = np.zeros(
            (self.config.delay + self.config.taps, self.bins, mics), dtype=complex
        )
        self.frame_index = 0
        self.rtf_updates = 0

    def _phi(self, history: np.ndarray) -> np.ndarray:
        """Predictor stack (bins, ML) from the history ring; history[-1] is
        frame n-1, so tap l reads history[-(delay+l)]."""
        taps, delay = self.config.taps, self.config.delay
        parts = [history[-(delay + 1 + li)] for li in range(taps)]
        stacked = np.stack(parts, axis=2)  # (bins, M, taps)
        return stacked.reshape(self.bins, self.mics * taps)

    def process_frame(self, x: np.ndarray) -> np.ndarray:
        """One pass of the per-frame recursion over all bins; x is
        (bins, mics), the return value (bins,).

        Two a-priori AR spectra are computed per frame, each matched to the
        residual it weights: the per-mic prediction residual's average
        spectrum serves as the Kalman observation noise, and the spatially
        filtered residual's spectrum normalizes the reverberation
        covariance update (the desired-signal variance).
        """
        cfg = self.config
        st = self.state
        phi = self._phi(self.history)

        e_prior = x - np.einsum("kmi,ki->km", st.mu.conj(), phi)
        d_tilde = np.einsum("km,km->k", st.w.conj(), e_prior)
        gamma_des = ar_psd_frame(d_tilde, cfg.ar_order)
        gamma_obs = self._residual_psd(e_prior, cfg.ar_order)

        if self.frame_index == 0:
            power = np.mean(np.abs(x) ** 2, axis=1) + 1e-30
            eye = np.eye(self.mics)
            st.r_dd = power[:, None, None] * eye[None]
            st.r_rr = 1e-6 * power[:, None, None] * eye[None]

        kalman_predict(st)
        st.prev_mu = st.mu.copy()
        kalman_update(st, x, phi, gamma_obs)
        if cfg.fixed_innovation is None:
            update_innovation_cov(st, cfg.innovation_floor)
        r = np.einsum("kmi,ki->km", st.mu.conj(), phi)
        d = x - r
        if cfg.known_rtf is None:
            accepted = update_rtf_gated(st, d, r, cfg.alpha_rtf, cfg.rtf_gate,
                                        cfg.reference_mic)
            self.rtf_updates += int(np.count_nonzero(accepted))
        update_reverb_cov(st, r, gamma_des, cfg.alpha_noise)
        online_mvdr(st, cfg.ridge)

        self.history = np.roll(self.history, -1, axis=0)
        self.history[-1] = x
        self.frame_index += 1
        return np.einsum("km,km->k", st.w.conj(), d)

    @staticmethod
    def _residual_psd(e_prior: np.ndarray, order: int) -> np.ndarray:
        """AR power spectrum of the mic-averaged a-priori residual."""
        nbin = e_prior.shape[0]
        nfft = 2 * (nbin - 1)
        power = np.abs(e_prior) ** 2
        r = np.fft.irfft(power, n=nfft, axis=0).mean(axis=1)
        floor = 1e-10 * (float(np.mean(power)) + 1e-20)
        return ar_psd_from_autocorr(r, nfft, order, floor)

    def filter_shadow(self, x: np.ndarray, history: np.ndarray) -> np.ndarray:
        """Apply the current frame's filters to another signal's frame
        (known-interferer bookkeeping)."""
        phi = self._phi(history)
        r = np.einsum("kmi,ki->km", self.state.mu.conj(), phi)
        return np.einsum("km,km->k", self.state.w.conj(), x - r)


def run_online(
    tensor: StftTensor,
    config: OnlineConfig | None = None,
    num_samples: int | None = None,
    shadow: StftTensor | None = None,
) -> OnlineResult:
    """Sequential frame loop over the whole tensor, with per-frame wall
    times. ``shadow`` runs a second signal through the filters estimated on
    the main one, frame for frame."""
    config = config or OnlineConfig()
    proc = OnlineProcessor(tensor.mics, tensor.config, config)
    nfr = tensor.num_frames
    d1 = np.empty((nfr, tensor.bins), dtype=complex)
    times = np.empty(nfr)
    sh_out = None
    sh_hist = None
    if shadow is not None:
        if shadow.data.shape != tensor.data.shape:
            raise ConfigError("shadow tensor shape mismatch")
        sh_out = np.empty_like(d1)
        sh_hist = np.zeros_like(proc.history)
    for n in range(nfr):
        t0 = time.perf_counter()
        d1[n] = proc.process_frame(tensor.data[n])
        times[n] = time.perf_counter() - t0
        if shadow is not None:
            sh_out[n] = proc.filter_shadow(shadow.data[n], sh_hist)
            sh_hist = np.roll(sh_hist, -1, axis=0)
            sh_hist[-1] = shadow.data[n]

    cfg_stft = tensor.config
    wav = synthesize(StftTensor(data=d1[:, :, None], config=cfg_stft), num_samples)[:, 0]
    sh_wav = None
    if shadow is not None:
        sh_wav = synthesize(StftTensor(data=sh_out[:, :, None], config=cfg_stft),
                            num_samples)[:, 0]
    return OnlineResult(
        d1=d1,
        waveform=wav,
        frame_seconds=times,
        rtf_updates=proc.rtf_updates,
        config=config,
        stft_config=cfg_stft,
        shadow_d1=sh_out,
        shadow_waveform=sh_wav,
    )
