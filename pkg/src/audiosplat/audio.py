"""Per-frame audio feature ingestion, windowing, and learnable smoothing.

Feature tracks hold one row per video frame (width D_a, DeepSpeech-like 29
by default). Conditioning uses overlapping 16-frame windows pooled by a
learnable softmax filter over window positions, then projected to the field
feature width D. The pooled+projected vector is the smoothed audio
condition consumed by the attention lookup.
"""

from __future__ import annotations

import struct

import numpy as np

from . import tensor as T

WINDOW = 16
AAF1_MAGIC = b"AAF1"


class AudioFrameTrack:
    """T x D_a feature matrix plus the video frame rate."""

    def __init__(self, features, frame_rate=25.0):
        features = np.asarray(features)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError("features must be a non-empty T x D_a matrix")
        if not np.all(np.isfinite(features)):
            raise ValueError("non-finite audio features")
        self.features = features
        self.frame_rate = float(frame_rate)

    @property
    def n_frames(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def save(self, path):
        with open(path, "wb") as f:
            f.write(AAF1_MAGIC)
            f.write(struct.pack("<IIf", self.n_frames, self.dim, self.frame_rate))
            f.write(self.features.astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:4] != AAF1_MAGIC:
            raise ValueError("not an AAF1 track")
        n, d, rate = struct.unpack_from("<IIf", blob, 4)
        feats = np.frombuffer(blob, dtype="<f4", count=n * d, offset=16).reshape(n, d)
        return cls(feats.astype(np.float32), rate)


def window_audio(track, t, w=WINDOW):
    """Rows t-w/2 .. t+w/2-1 with edge replication at the track boundaries."""
    if not 0 <= t < track.n_frames:
        raise IndexError(f"frame {t} outside track of length {track.n_frames}")
    idx = np.clip(np.arange(t - w // 2, t + w // 2), 0, track.n_frames - 1)
    return track.features[idx]


class TemporalFilter:
    """Softmax pooling over window positions plus a linear map to width D."""

    def __init__(self, logits, projection):
        self.logits = logits
        self.projection = projection

    @classmethod
    def create(cls, audio_dim, out_dim, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        logits = np.zeros(WINDOW)
        proj = rng.uniform(-1.0, 1.0, (audio_dim, out_dim)) / np.sqrt(audio_dim)
        return cls(
            T.Parameter(logits.astype(dtype), "audio.filter_logits"),
            T.Parameter(proj.astype(dtype), "audio.projection"),
        )

    def parameters(self):
        return [self.logits, self.projection]

    def astype(self, dtype):
        return TemporalFilter(
            T.Parameter(self.logits.data.astype(dtype), self.logits.name),
            T.Parameter(self.projection.data.astype(dtype), self.projection.name),
        )


def smooth_audio(window, filt):
    """Pooled window mapped to the condition vector: (softmax(l) @ W) @ P."""
    window_t = window if isinstance(window, T.Tensor) else T.Tensor(
        np.asarray(window, dtype=filt.logits.data.dtype)
    )
    weights = T.softmax(filt.logits, axis=-1)
    pooled = T.matmul(weights, window_t)
    return T.matmul(pooled, filt.projection)
