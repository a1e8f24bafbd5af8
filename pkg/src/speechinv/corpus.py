"""Utterance data model, frame alignment, speaker splits, and corpus persistence.

A corpus on disk is a directory with a ``corpus.json`` manifest plus one audio
file, one TV tensor, and one label tensor per utterance. Audio is stored as
raw little-endian float32 by default (lossless round trip) or PCM16 WAV.
"""

import json
import os
import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadAlignment,
    BadLabel,
    DimensionMismatch,
    InsufficientSpeakers,
    ManifestError,
    MissingTensor,
)
from .frontend import AudioSegment, FRAMES_PER_SECOND, HOP_SECONDS
from .tensorio import read_tensor, write_tensor

MANIFEST_VERSION = 1
MANIFEST_NAME = "corpus.json"

N_FRAMES = 200
N_TVS = 9
N_PHONES = 40
PAD_INDEX = 40
PAD_SYMBOL = "<pad>"

TV_NAMES = ("LA", "LP", "JA", "TTCL", "TTCD", "TMCL", "TMCD", "TBCL", "TBCD")

# 39 ARPAbet monophones plus an explicit silence phone; the padding symbol is
# a separate 41st entry reserved for zero-padded frames.
DEFAULT_PHONES = (
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH",
    "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH", "K",
    "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH",
    "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH", "SIL",
)


@dataclass(frozen=True)
class PhonemeInventory:
    """40 monophone symbols plus the padding symbol at index 40."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(self.symbols) != N_PHONES + 1:
            raise BadLabel(f"inventory needs {N_PHONES + 1} symbols, got {len(self.symbols)}")
        if len(set(self.symbols)) != len(self.symbols):
            raise BadLabel("inventory symbols must be unique")

    @property
    def pad_symbol(self) -> str:
        return self.symbols[PAD_INDEX]

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise BadLabel(f"unknown phone symbol {symbol!r}") from None


DEFAULT_INVENTORY = PhonemeInventory(DEFAULT_PHONES + (PAD_SYMBOL,))


@dataclass
class Utterance:
    """One 2 s segment with frame-wise TV targets and phoneme labels."""

    id: str
    speaker: str
    rate_tag: str  # "normal" or "fast"
    audio: AudioSegment
    tv_targets: np.ndarray  # (200, 9) float32
    phoneme_labels: np.ndarray  # (200,) int32, values in [0, 40]

    def pad_mask(self) -> np.ndarray:
        """True on padded frames."""
        return self.phoneme_labels == PAD_INDEX


@dataclass
class CorpusSplit:
    train: list[str]
    dev: list[str]
    test: list[str]
    speaker_assignment: dict[str, str]  # speaker -> train|dev|test


def align_to_frames(phone_intervals, n_frames: int, inventory: PhonemeInventory = DEFAULT_INVENTORY):
    """Frame-wise labels: each frame takes the interval containing its center.

    Intervals are (symbol, start_s, end_s), sorted and non-overlapping; frames
    whose center falls in no interval get the padding label.
    """
    prev_end = -np.inf
    spans = []
    for symbol, start, end in phone_intervals:
        if start < prev_end:
            raise BadAlignment(
                f"interval {symbol!r} starts at {start} before previous end {prev_end}"
            )
        if end <= start:
            raise BadAlignment(f"interval {symbol!r} has non-positive length")
        spans.append((inventory.index(symbol), float(start), float(end)))
        prev_end = end
    labels = np.full(n_frames, PAD_INDEX, dtype=np.int32)
    centers = np.arange(n_frames) * HOP_SECONDS + HOP_SECONDS / 2.0
    for idx, start, end in spans:
        labels[(centers >= start) & (centers < end)] = idx
    return labels


def one_hot(labels, n_classes: int = N_PHONES + 1) -> np.ndarray:
    """Binary (L, V) matrix with a single 1 per row."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise BadLabel(f"label {bad} outside [0, {n_classes})")
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def split_speakers(utterances, n_train_speakers: int = 6, seed: int = 0) -> CorpusSplit:
    """Speaker-disjoint train/dev/test split, deterministic under seed.

    Held-out speakers are divided whole between dev and test, balancing
    utterance counts greedily. With fewer speakers than the requested train
    count, the train set shrinks so dev and test keep one speaker each.
    """
    speakers = sorted({u.speaker for u in utterances})
    if len(speakers) < 3:
        raise InsufficientSpeakers(
            f"need at least 3 distinct speakers, got {len(speakers)}"
        )
    n_train = min(n_train_speakers, len(speakers) - 2)
    rng = np.random.default_rng(seed)
    order = [speakers[i] for i in rng.permutation(len(speakers))]
    train_spk = set(order[:n_train])
    held_out = order[n_train:]
    counts = {s: 0 for s in speakers}
    for u in utterances:
        counts[u.speaker] += 1
    dev_spk, test_spk = set(), set()
    dev_n = test_n = 0
    for s in sorted(held_out, key=lambda s: -counts[s]):
        if dev_n <= test_n:
            dev_spk.add(s)
            dev_n += counts[s]
        else:
            test_spk.add(s)
            test_n += counts[s]
    assignment = {}
    for s in speakers:
        assignment[s] = "train" if s in train_spk else ("dev" if s in dev_spk else "test")
    split = CorpusSplit(train=[], dev=[], test=[], speaker_assignment=assignment)
    for u in utterances:
        getattr(split, assignment[u.speaker]).append(u.id)
    return split


def _write_wav16(path, samples, sample_rate):
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(path, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def _read_wav16(path):
    with wave.open(path, "rb") as fh:
        if fh.getnchannels() != 1:
            raise ManifestError(f"{path}: expected mono WAV, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise ManifestError(f"{path}: expected 16-bit PCM WAV")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return (pcm / 32768.0).astype(np.float32), rate


def _write_f32(path, samples):
    np.ascontiguousarray(samples, dtype="<f4").tofile(path)


def _read_f32(path):
    return np.fromfile(path, dtype="<f4").astype(np.float32)


def save_corpus(utterances, out_dir, inventory: PhonemeInventory = DEFAULT_INVENTORY,
                audio_format: str = "f32"):
    """Write manifest plus per-utterance audio/TV/label files under out_dir."""
    if audio_format not in ("f32", "wav16"):
        raise ManifestError(f"unknown audio format {audio_format!r}")
    if not utterances:
        raise ManifestError("refusing to save an empty corpus")
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("audio", "tv", "labels"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    sample_rate = utterances[0].audio.sample_rate
    entries = []
    for u in utterances:
        ext = "f32" if audio_format == "f32" else "wav"
        audio_file = f"audio/{u.id}.{ext}"
        tv_file = f"tv/{u.id}.atv"
        label_file = f"labels/{u.id}.atv"
        if audio_format == "f32":
            _write_f32(os.path.join(out_dir, audio_file), u.audio.samples)
        else:
            _write_wav16(os.path.join(out_dir, audio_file), u.audio.samples, sample_rate)
        write_tensor(os.path.join(out_dir, tv_file), u.tv_targets)
        write_tensor(os.path.join(out_dir, label_file), u.phoneme_labels)
        entries.append(
            {
                "id": u.id,
                "speaker": u.speaker,
                "rate_tag": u.rate_tag,
                "audio_file": audio_file,
                "tv_file": tv_file,
                "label_file": label_file,
            }
        )
    manifest = {
        "version": MANIFEST_VERSION,
        "sample_rate": sample_rate,
        "audio_format": audio_format,
        "phoneme_inventory": list(inventory.symbols),
        "utterances": entries,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(corpus_dir):
    """Load a corpus directory; returns (utterances, inventory, sample_rate)."""
    manifest_path = os.path.join(corpus_dir, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise ManifestError(f"no {MANIFEST_NAME} in {corpus_dir}")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as e:
            raise ManifestError(f"unparseable manifest {manifest_path}: {e}") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise ManifestError(
            f"unsupported manifest version {manifest.get('version')!r} "
            f"(this toolkit reads version {MANIFEST_VERSION})"
        )
    inventory = PhonemeInventory(tuple(manifest["phoneme_inventory"]))
    sample_rate = int(manifest["sample_rate"])
    audio_format = manifest.get("audio_format", "f32")
    seg_len = 2 * sample_rate
    utterances = []
    for entry in manifest["utterances"]:
        uid = entry["id"]
        audio_path = os.path.join(corpus_dir, entry["audio_file"])
        if not os.path.exists(audio_path):
            raise MissingTensor(f"utterance {uid}: missing audio file {entry['audio_file']}")
        if audio_format == "wav16":
            samples, rate = _read_wav16(audio_path)
            if rate != sample_rate:
                raise ManifestError(
                    f"utterance {uid}: WAV rate {rate} != manifest rate {sample_rate}"
                )
        else:
            samples = _read_f32(audio_path)
        if samples.shape[0] != seg_len:
            raise DimensionMismatch(
                f"utterance {uid}: audio has {samples.shape[0]} samples, expected {seg_len}"
            )
        tv = read_tensor(os.path.join(corpus_dir, entry["tv_file"]), np.float32)
        if tv.shape != (N_FRAMES, N_TVS):
            raise DimensionMismatch(
                f"utterance {uid}: TV tensor shape {tv.shape}, expected {(N_FRAMES, N_TVS)}"
            )
        labels = read_tensor(os.path.join(corpus_dir, entry["label_file"]), np.int32)
        if labels.shape != (N_FRAMES,):
            raise DimensionMismatch(
                f"utterance {uid}: label tensor shape {labels.shape}, expected {(N_FRAMES,)}"
            )
        if labels.min() < 0 or labels.max() > PAD_INDEX:
            raise BadLabel(f"utterance {uid}: labels outside [0, {PAD_INDEX}]")
        utterances.append(
            Utterance(
                id=uid,
                speaker=entry["speaker"],
                rate_tag=entry["rate_tag"],
                audio=AudioSegment(samples, sample_rate),
                tv_targets=tv,
                phoneme_labels=labels,
            )
        )
    return utterances, inventory, sample_rate
