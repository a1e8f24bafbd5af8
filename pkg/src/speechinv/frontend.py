"""Acoustic frontend: 2 s segmentation, Hamming framing, MFCCs, z-normalization.

All functions are pure and deterministic; identical inputs give bit-identical
outputs. Frames sit on a fixed 100 frames/second grid so a 2 s segment always
yields exactly 200 frames regardless of sample rate.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyAudio, NumericalError, TooShort

SEGMENT_SECONDS = 2.0
WIN_SECONDS = 0.020
HOP_SECONDS = 0.010
FRAMES_PER_SECOND = 100
N_MEL_FILTERS = 40
N_CEPS = 13
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioSegment:
    """A fixed-length chunk of mono audio, amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular mel filters evaluated on rfft bin frequencies."""

    n_filters: int
    weights: np.ndarray  # (n_filters, n_fft // 2 + 1)
    f_low: float
    f_high: float
    center_freqs: np.ndarray


def segment_audio(samples, sample_rate: int) -> list[AudioSegment]:
    """Cut a waveform into 2 s segments, zero-padding the last one."""
    if sample_rate <= 0:
        raise ValueError(f"sample_rate must be positive, got {sample_rate}")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected mono 1-d audio, got shape {x.shape}")
    if x.size == 0:
        raise EmptyAudio("cannot segment empty audio")
    if not np.all(np.isfinite(x)):
        raise ValueError("audio contains non-finite samples")
    seg_len = int(round(SEGMENT_SECONDS * sample_rate))
    n_seg = -(-x.size // seg_len)
    padded = np.zeros(n_seg * seg_len, dtype=np.float64)
    padded[: x.size] = x
    return [
        AudioSegment(padded[i * seg_len : (i + 1) * seg_len], sample_rate)
        for i in range(n_seg)
    ]


def hamming_window(length: int) -> np.ndarray:
    """0.54 - 0.46 cos(2 pi n / (N - 1))."""
    if length == 1:
        return np.ones(1)
    n = np.arange(length)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))


def frame_signal(segment: AudioSegment, win_ms: float = 20.0, hop_ms: float = 10.0):
    """Slice a segment into Hamming-windowed frames on the 100 Hz grid.

    Frame t covers samples [round(t*hop*fs), round(t*hop*fs) + win_len);
    samples past the end of the segment read as zero.
    """
    fs = segment.sample_rate
    x = np.asarray(segment.samples, dtype=np.float64)
    win_len = int(np.floor(win_ms / 1000.0 * fs + 0.5))
    hop = hop_ms / 1000.0 * fs
    n_frames = int(np.floor(x.size / hop + 0.5))
    starts = np.floor(np.arange(n_frames) * hop + 0.5).astype(np.int64)
    padded = np.concatenate([x, np.zeros(win_len, dtype=np.float64)])
    idx = starts[:, None] + np.arange(win_len)[None, :]
    return padded[idx] * hamming_window(win_len)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    sample_rate: int,
    n_fft: int,
    n_filters: int = N_MEL_FILTERS,
    f_low: float = 0.0,
    f_high: float | None = None,
) -> MelFilterbank:
    """Build triangular filters with mel-spaced edges over [f_low, f_high]."""
    if f_high is None:
        f_high = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), n_filters + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    left = edges[:-2, None]
    center = edges[1:-1, None]
    right = edges[2:, None]
    rising = (bin_freqs[None, :] - left) / (center - left)
    falling = (right - bin_freqs[None, :]) / (right - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(
        n_filters=n_filters,
        weights=weights,
        f_low=float(f_low),
        f_high=float(f_high),
        center_freqs=edges[1:-1].copy(),
    )


def next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II basis, rows are coefficients 0..n_out-1."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    d = np.sqrt(2.0 / n_in) * np.cos(np.pi * k * (2 * n + 1) / (2.0 * n_in))
    d[0] *= np.sqrt(0.5)
    return d


def mfcc(
    frames: np.ndarray,
    filterbank: MelFilterbank,
    n_ceps: int = N_CEPS,
    n_fft: int | None = None,
) -> np.ndarray:
    """Un-normalized MFCCs, one row of n_ceps coefficients per frame.

    Per frame: zero-padded real FFT, power spectrum, mel filter energies,
    log with an additive floor, orthonormal DCT-II keeping the first
    n_ceps coefficients (c0 included). Finite for any input, silence too.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if n_fft is None:
        n_fft = next_pow2(frames.shape[1])
    n_bins = n_fft // 2 + 1
    if filterbank.weights.shape[1] != n_bins:
        raise DimensionMismatch(
            f"filterbank has {filterbank.weights.shape[1]} bins, FFT size {n_fft} "
            f"needs {n_bins}"
        )
    spectrum = np.fft.rfft(frames, n=n_fft, axis=1)
    power = np.abs(spectrum) ** 2
    mel_energy = power @ filterbank.weights.T
    log_energy = np.log(mel_energy + LOG_FLOOR)
    return log_energy @ dct_matrix(n_ceps, filterbank.n_filters).T


def znorm_utterance(features: np.ndarray) -> np.ndarray:
    """Z-normalize each column (population std); constant columns map to zero."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] < 2:
        raise TooShort(f"need at least 2 frames to normalize, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite values in features before normalization")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    centered = x - mean
    safe = np.where(std > 0.0, std, 1.0)
    return np.where(std > 0.0, centered / safe, 0.0)


def pre_emphasize(samples: np.ndarray, coeff: float) -> np.ndarray:
    """First-order pre-emphasis y[n] = x[n] - coeff * x[n-1]; identity at 0."""
    x = np.asarray(samples, dtype=np.float64)
    if coeff == 0.0:
        return x
    return np.concatenate([x[:1], x[1:] - coeff * x[:-1]])


_fb_cache: dict[tuple, MelFilterbank] = {}


def _cached_filterbank(sample_rate: int, n_fft: int) -> MelFilterbank:
    key = (sample_rate, n_fft)
    if key not in _fb_cache:
        _fb_cache[key] = mel_filterbank(sample_rate, n_fft)
    return _fb_cache[key]


def featurize_segment(segment: AudioSegment, pre_emphasis: float = 0.0) -> np.ndarray:
    """Full frontend for one segment: frames -> MFCC -> per-utterance z-norm."""
    if pre_emphasis:
        segment = AudioSegment(
            pre_emphasize(segment.samples, pre_emphasis), segment.sample_rate
        )
    frames = frame_signal(segment)
    n_fft = next_pow2(frames.shape[1])
    coeffs = mfcc(frames, _cached_filterbank(segment.sample_rate, n_fft), n_fft=n_fft)
    return znorm_utterance(coeffs)
