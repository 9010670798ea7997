"""Feature-level clip synthesis and the binary clip file format."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..annotations import VideoRecord

CLIP_MAGIC = b"GLCH"
CLIP_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class ClipFormatError(ValueError):
    pass


@dataclass
class FeatureClip:
    visual: np.ndarray  # (C_v, T)
    audio: np.ndarray  # (tau_a * F_m, T); row s * F_m + f holds mel bin f at sub-step s
    record: VideoRecord | None = None
    n_mels: int = 16
    audio_steps: int = 4

    def __post_init__(self):
        if self.visual.ndim != 2 or self.audio.ndim != 2:
            raise ClipFormatError("visual and audio must be 2-D arrays")
        if self.visual.shape[1] != self.audio.shape[1]:
            raise ClipFormatError(f"visual T={self.visual.shape[1]} != audio T={self.audio.shape[1]}")
        if self.audio.shape[0] != self.n_mels * self.audio_steps:
            raise ClipFormatError("audio rows must equal n_mels * audio_steps")
        if self.record is not None and self.record.n_frames > self.T:
            raise ClipFormatError(f"clip {self.record.id!r} is longer than T={self.T}")

    @property
    def T(self) -> int:
        return self.visual.shape[1]


def write_clip(path: str | Path, clip: FeatureClip):
    header = _HEADER.pack(
        CLIP_MAGIC, CLIP_VERSION, clip.visual.shape[0], clip.n_mels, clip.audio_steps, clip.T
    )
    body = np.ascontiguousarray(clip.visual, dtype="<f8").tobytes() + np.ascontiguousarray(
        clip.audio, dtype="<f8"
    ).tobytes()
    Path(path).write_bytes(header + body)


def read_clip(path: str | Path, record: VideoRecord | None = None) -> FeatureClip:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ClipFormatError(f"{path}: truncated header")
    magic, version, c_v, n_mels, steps, T = _HEADER.unpack_from(raw)
    if magic != CLIP_MAGIC:
        raise ClipFormatError(f"{path}: bad magic {magic!r}")
    if version != CLIP_VERSION:
        raise ClipFormatError(f"{path}: unsupported clip version {version}")
    n_vis, n_aud = c_v * T, steps * n_mels * T
    expected = _HEADER.size + 8 * (n_vis + n_aud)
    if len(raw) != expected:
        raise ClipFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return FeatureClip(
        visual=data[:n_vis].reshape(c_v, T),
        audio=data[n_vis:].reshape(steps * n_mels, T),
        record=record,
        n_mels=n_mels,
        audio_steps=steps,
    )


# ---------------------------------------------------------------------------
# synthesis


def stable_seed(*parts) -> np.random.SeedSequence:
    """SeedSequence from ints and strings (strings hashed with crc32)."""
    entropy = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return np.random.SeedSequence(entropy)


def _ar1(rng: np.random.Generator, rows: int, steps: int, rho: float) -> np.ndarray:
    noise = rng.standard_normal((rows, steps))
    out = np.empty_like(noise)
    out[:, 0] = noise[:, 0]
    scale = np.sqrt(1.0 - rho * rho)
    for t in range(1, steps):
        out[:, t] = rho * out[:, t - 1] + scale * noise[:, t]
    return out


def _identity_profile(identity: str, seed: int, rows: int, tag: str):
    rng = np.random.default_rng(stable_seed(seed, "identity", identity, tag))
    return rng.normal(0.0, 0.5, size=(rows, 1)), rng.uniform(0.7, 1.3, size=(rows, 1))


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def _neighbor_frames(first: int, stop: int, n: int, fake: np.ndarray, width: int) -> np.ndarray:
    idx = list(range(max(0, first - width), first)) + list(range(stop, min(n, stop + width)))
    return np.array([i for i in idx if not fake[i]], dtype=int)


def _perturb(
    signal: np.ndarray,
    spans: list[tuple[int, int]],
    n_steps: int,
    steps_per_frame: int,
    amplitude: float,
    rng: np.random.Generator,
    neighbor_width: int,
):
    """Add an alternating-sign signature inside each span and match neighbor RMS in place.

    ``signal`` is (rows, n_steps) in native time steps; spans are in frames.
    """
    fake = np.zeros(n_steps // steps_per_frame, dtype=bool)
    for first, stop in spans:
        fake[first:stop] = True
    for first, stop in spans:
        lo, hi = first * steps_per_frame, stop * steps_per_frame
        frames = _neighbor_frames(first, stop, len(fake), fake, neighbor_width)
        if frames.size:
            cols = (frames[:, None] * steps_per_frame + np.arange(steps_per_frame)[None, :]).ravel()
            ref = _rms(signal[:, cols])
        else:
            ref = _rms(signal[:, lo:hi])
        direction = rng.standard_normal((signal.shape[0], 1))
        direction /= np.linalg.norm(direction) / np.sqrt(signal.shape[0])
        length = hi - lo
        phase = rng.uniform(0, 2 * np.pi)
        # Nyquist-rate carrier under a slowly varying envelope
        carrier = np.cos(np.pi * np.arange(length)) * (1.0 + 0.3 * np.sin(phase + 0.5 * np.arange(length)))
        pattern = direction * carrier[None, :]
        segment = signal[:, lo:hi] + amplitude * ref * pattern / max(_rms(pattern), 1e-12)
        # loudness normalization against the real neighborhood
        seg_rms = _rms(segment)
        if seg_rms > 0 and ref > 0:
            segment *= ref / seg_rms
        signal[:, lo:hi] = segment


def render_clip(
    record: VideoRecord,
    identity: str,
    *,
    seed: int,
    T: int,
    visual_channels: int = 8,
    n_mels: int = 16,
    audio_steps: int = 4,
    amplitude: float = 0.8,
    neighbor_width: int = 4,
    rng: np.random.Generator | None = None,
) -> FeatureClip:
    """Smooth per-identity base signals, perturbed inside the record's fake segments.

    Base signals depend only on (seed, record id, identity), so the visual
    track of an audio-only fake equals the real rendering of the same record.
    """
    n = record.n_frames
    if n > T:
        raise ValueError(f"record {record.id!r} has {n} frames > T={T}")
    spans = record.segment_frames()
    for first, stop in spans:
        if first < 0 or stop > n:
            raise ValueError(f"record {record.id!r}: segment frames [{first}, {stop}) outside clip")

    base_rng = np.random.default_rng(stable_seed(seed, "base", record.id))
    v_mean, v_scale = _identity_profile(identity, seed, visual_channels, "visual")
    a_mean, a_scale = _identity_profile(identity, seed, n_mels, "audio")
    visual = v_mean + v_scale * _ar1(base_rng, visual_channels, n, rho=0.9)
    audio = a_mean + a_scale * _ar1(base_rng, n_mels, n * audio_steps, rho=0.97)

    pert_rng = rng if rng is not None else np.random.default_rng(stable_seed(seed, "perturb", record.id))
    if record.modify_visual:
        _perturb(visual, spans, n, 1, amplitude, pert_rng, neighbor_width)
    if record.modify_audio:
        _perturb(audio, spans, n * audio_steps, audio_steps, amplitude, pert_rng, neighbor_width)

    # (F_m, n * tau) -> (tau * F_m, n): column t stacks the tau sub-steps of frame t
    audio_frames = audio.reshape(n_mels, n, audio_steps).transpose(2, 0, 1).reshape(audio_steps * n_mels, n)
    vis = np.zeros((visual_channels, T))
    aud = np.zeros((audio_steps * n_mels, T))
    vis[:, :n] = visual
    aud[:, :n] = audio_frames
    return FeatureClip(vis, aud, record, n_mels=n_mels, audio_steps=audio_steps)


def frame_rms(signal: np.ndarray, first: int, stop: int) -> float:
    return _rms(signal[:, first:stop])
