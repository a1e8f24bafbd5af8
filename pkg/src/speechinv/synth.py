"""Synthetic articulatory corpus generator.

Each utterance is a Markov phone chain with random durations. Phones map to
per-speaker articulatory target vectors; the 9 tract-variable trajectories are
the piecewise targets low-pass smoothed on the 100 Hz frame grid. Audio is a
sum of sinusoids whose instantaneous frequencies and amplitudes are a fixed
smooth function of the current TV vector, plus white noise, so the acoustics
determine the articulation well enough for inversion to be learnable.

Like real articulometry, the stored trajectories are a sensor reading, not
the truth: the audio is synthesized from the true articulation, then the
saved TV targets get band-limited measurement noise (sensor_noise). The
phone labels stay exact. Models with spare capacity can chase the noise;
supervision that cannot be satisfied by doing so (the labels) is the only
thing in the corpus that distinguishes the true signal from the reading.
"""

from dataclasses import dataclass, field

import numpy as np

from .corpus import (
    DEFAULT_INVENTORY,
    N_FRAMES,
    N_PHONES,
    N_TVS,
    Utterance,
    align_to_frames,
)
from .errors import BadSpec
from .frontend import FRAMES_PER_SECOND, AudioSegment

SAMPLE_RATE = 22050
N_PARTIALS = 12
_MIX_SEED = 761842350  # fixed so the TV-to-acoustics map is corpus-independent


@dataclass(frozen=True)
class MixParams:
    """Parameters of the smooth TV-to-sinusoid mapping."""

    base_freqs: np.ndarray  # (K,) carrier frequencies in Hz
    base_amps: np.ndarray  # (K,) carrier amplitudes
    freq_mix: np.ndarray  # (K, 9) TV weights driving frequency modulation
    amp_mix: np.ndarray  # (K, 9) TV weights driving amplitude modulation
    mod_gain: float = 0.5  # scales TV projections before the tanh squash

    def validate(self, sample_rate: int):
        k = self.base_freqs.shape[0]
        if self.base_amps.shape != (k,):
            raise BadSpec("base_amps length must match base_freqs")
        if self.freq_mix.shape != (k, N_TVS) or self.amp_mix.shape != (k, N_TVS):
            raise BadSpec(f"mixing matrices must be ({k}, {N_TVS})")
        if np.linalg.matrix_rank(self.freq_mix) < N_TVS:
            raise BadSpec("freq_mix must have full column rank so TVs are recoverable")
        if np.any(self.base_freqs <= 0):
            raise BadSpec("carrier frequencies must be positive")
        # one octave of upward modulation must stay below Nyquist
        if np.max(self.base_freqs) * 2.0 >= sample_rate / 2.0:
            raise BadSpec("carrier frequencies too close to Nyquist")


def default_mix() -> MixParams:
    rng = np.random.default_rng(_MIX_SEED)
    raw = 1.0 / np.sqrt(np.arange(N_PARTIALS) + 1.0)
    # The last three TV channels barely register in the audio, the way
    # near-silent articulators do in real speech: their values can only be
    # recovered by recognizing which phone is being produced, not by reading
    # them off the spectrum directly.
    visibility = np.ones(N_TVS)
    visibility[6:] = 0.05
    return MixParams(
        base_freqs=np.geomspace(160.0, 3600.0, N_PARTIALS),
        base_amps=0.7 * raw / raw.sum(),
        freq_mix=rng.uniform(-1.0, 1.0, (N_PARTIALS, N_TVS)) * visibility,
        amp_mix=rng.uniform(-1.0, 1.0, (N_PARTIALS, N_TVS)) * visibility,
    )


def default_transition() -> np.ndarray:
    """Uniform over the other 39 phones; durations are sampled separately."""
    t = np.full((N_PHONES, N_PHONES), 1.0 / (N_PHONES - 1))
    np.fill_diagonal(t, 0.0)
    return t


@dataclass
class SynthSpec:
    """Everything that determines a generated corpus; seed makes it bit-reproducible."""

    n_speakers: int = 3
    utterances_per_speaker: int = 50
    seed: int = 0
    cutoff_hz: float = 16.0  # TV trajectories carry no energy above this
    transition: np.ndarray = field(default_factory=default_transition)
    targets: np.ndarray | None = None  # (n_speakers, 40, 9); default drawn from seed
    mix: MixParams = field(default_factory=default_mix)
    noise_level: float = 0.003
    speaker_spread: float = 0.08  # per-speaker jitter around shared phone targets
    map_spread: float = 0.0  # per-speaker warp of the TV-to-acoustics mixing weights
    sensor_noise: float = 0.35  # measurement noise std on stored TV trajectories
    min_active_frames: int = 140
    sample_rate: int = SAMPLE_RATE

    def validate(self):
        if self.n_speakers < 1 or self.utterances_per_speaker < 1:
            raise BadSpec("need at least one speaker and one utterance per speaker")
        if self.transition.shape != (N_PHONES, N_PHONES):
            raise BadSpec(f"transition matrix must be {N_PHONES}x{N_PHONES}")
        if np.any(self.transition < 0):
            raise BadSpec("transition probabilities must be non-negative")
        row_sums = self.transition.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-9):
            bad = int(np.argmax(np.abs(row_sums - 1.0)))
            raise BadSpec(f"transition row {bad} sums to {row_sums[bad]!r}, not 1")
        if self.targets is not None and self.targets.shape != (self.n_speakers, N_PHONES, N_TVS):
            raise BadSpec(
                f"targets must be ({self.n_speakers}, {N_PHONES}, {N_TVS}), "
                f"got {self.targets.shape}"
            )
        if not 5.0 <= self.cutoff_hz < 45.0:
            raise BadSpec("cutoff_hz must lie in [5, 45)")
        if self.noise_level < 0:
            raise BadSpec("noise_level must be non-negative")
        if self.map_spread < 0:
            raise BadSpec("map_spread must be non-negative")
        if self.sensor_noise < 0:
            raise BadSpec("sensor_noise must be non-negative")
        if not 81 <= self.min_active_frames <= N_FRAMES:
            raise BadSpec(f"min_active_frames must lie in [81, {N_FRAMES}]")
        self.mix.validate(self.sample_rate)


def lowpass_kernel(cutoff_hz: float, sample_rate: float, numtaps: int = 121) -> np.ndarray:
    """Hamming windowed-sinc low-pass FIR, unit DC gain."""
    if numtaps % 2 == 0 or numtaps < 3:
        raise ValueError("numtaps must be odd and >= 3")
    fc = cutoff_hz / sample_rate
    n = np.arange(numtaps) - (numtaps - 1) / 2.0
    h = 2.0 * fc * np.sinc(2.0 * fc * n) * np.hamming(numtaps)
    return h / h.sum()


def smooth_trajectory(traj: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Low-pass each column with edge-value padding (constant in, constant out)."""
    half = kernel.shape[0] // 2
    padded = np.pad(traj, ((half, half), (0, 0)), mode="edge")
    out = np.empty_like(traj, dtype=np.float64)
    for j in range(traj.shape[1]):
        out[:, j] = np.convolve(padded[:, j], kernel, mode="valid")
    return out


def _speaker_mix(rng, mix: MixParams, spread: float) -> MixParams:
    """Per-speaker warp of the TV-to-acoustics map (vocal-tract idiosyncrasy).

    Each mixing column is perturbed in proportion to its own RMS, so
    articulators that barely couple into the audio stay barely coupled for
    every speaker. Direct spectral regression learned on one speaker is then
    systematically wrong for another, while the phone-to-articulation route
    stays stable.
    """
    if spread == 0.0:
        return mix
    f_rms = np.sqrt(np.mean(mix.freq_mix**2, axis=0))
    a_rms = np.sqrt(np.mean(mix.amp_mix**2, axis=0))
    return MixParams(
        base_freqs=mix.base_freqs,
        base_amps=mix.base_amps,
        freq_mix=mix.freq_mix
        + spread * f_rms * rng.uniform(-1.0, 1.0, mix.freq_mix.shape),
        amp_mix=mix.amp_mix
        + spread * a_rms * rng.uniform(-1.0, 1.0, mix.amp_mix.shape),
        mod_gain=mix.mod_gain,
    )


def _sample_chain(rng, transition, n_active_frames, inventory):
    """Phone intervals (symbol, start_s, end_s) covering n_active_frames."""
    sil = inventory.index("SIL")
    intervals = []
    frame = 0
    state = sil
    while frame < n_active_frames:
        duration = int(rng.integers(6, 19))
        end = min(frame + duration, n_active_frames)
        intervals.append((inventory.symbols[state], frame * 0.01, end * 0.01))
        frame = end
        state = int(rng.choice(N_PHONES, p=transition[state]))
    return intervals


def _synthesize_audio(tv, n_active_frames, mix, timbre, noise, sample_rate):
    """Sum-of-sinusoids audio for the active frames; float64, unnormalized."""
    active_samples = n_active_frames * sample_rate // FRAMES_PER_SECOND
    frame_of = (np.arange(active_samples) * FRAMES_PER_SECOND) // sample_rate
    u = np.tanh(mix.mod_gain * tv[:n_active_frames] @ mix.freq_mix.T)  # (n_act, K)
    v = np.tanh(mix.mod_gain * tv[:n_active_frames] @ mix.amp_mix.T)
    freqs = mix.base_freqs * np.exp2(u)[frame_of]  # (n_samples, K)
    amps = (mix.base_amps * timbre) * np.exp2(v)[frame_of]
    phases = 2.0 * np.pi * np.cumsum(freqs, axis=0) / sample_rate
    audio = np.sum(amps * np.sin(phases), axis=1)
    audio += noise[:active_samples]
    return audio


def generate_synthetic(spec: SynthSpec, inventory=DEFAULT_INVENTORY) -> list[Utterance]:
    """Deterministic corpus of n_speakers x utterances_per_speaker utterances."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0x5EED])
    # design edge sits below the advertised cutoff so the transition band has
    # fully decayed by cutoff_hz (stopband at least 40 dB down from passband)
    kernel = lowpass_kernel(0.7 * spec.cutoff_hz, FRAMES_PER_SECOND)
    kernel_rms = float(np.sqrt(np.sum(kernel**2)))  # std of smoothed unit noise
    shared_targets = rng.uniform(-1.0, 1.0, (N_PHONES, N_TVS))
    utterances = []
    for s in range(spec.n_speakers):
        speaker = f"spk{s:02d}"
        if spec.targets is not None:
            targets = spec.targets[s]
        else:
            targets = shared_targets + spec.speaker_spread * rng.uniform(
                -1.0, 1.0, (N_PHONES, N_TVS)
            )
        timbre = np.exp2(rng.uniform(-0.5, 0.5, N_PARTIALS))
        mix = _speaker_mix(rng, spec.mix, spec.map_spread)
        for u in range(spec.utterances_per_speaker):
            n_active = int(rng.integers(spec.min_active_frames, N_FRAMES + 1))
            intervals = _sample_chain(rng, spec.transition, n_active, inventory)
            noise = rng.normal(0.0, spec.noise_level, 2 * spec.sample_rate)
            labels = align_to_frames(intervals, N_FRAMES, inventory)
            tv = np.zeros((N_FRAMES, N_TVS))
            tv[:n_active] = targets[labels[:n_active]]
            tv[:n_active] = smooth_trajectory(tv[:n_active], kernel)
            audio = np.zeros(2 * spec.sample_rate)
            active = _synthesize_audio(
                tv, n_active, mix, timbre, noise, spec.sample_rate
            )
            audio[: active.shape[0]] = active
            peak = np.max(np.abs(audio))
            if peak > 0.99:
                audio *= 0.99 / peak
            if spec.sensor_noise > 0.0:
                # the audio reflects the true articulation; the stored
                # trajectories are a sensor reading with band-limited
                # measurement noise (same passband as the trajectories)
                wiggle = smooth_trajectory(
                    rng.normal(0.0, 1.0, (n_active, N_TVS)), kernel
                )
                tv[:n_active] += (spec.sensor_noise / kernel_rms) * wiggle
            tv[n_active:] = 0.0
            utterances.append(
                Utterance(
                    id=f"s{s:02d}u{u:03d}",
                    speaker=speaker,
                    rate_tag="fast" if u % 2 else "normal",
                    audio=AudioSegment(audio.astype(np.float32), spec.sample_rate),
                    tv_targets=tv.astype(np.float32),
                    phoneme_labels=labels,
                )
            )
    return utterances
