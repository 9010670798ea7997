"""Audio-visual boundary-aware localization network."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .. import autodiff as ad
from ..autodiff import DiffArray
from ..postproc import average_maps
from .layers import (
    ChannelAttention,
    Conv1d,
    LayerNorm,
    Module,
    PointwiseMLP,
    TemporalAttention,
    key_padding_bias,
)

MAP_KINDS = ("p", "c", "pc")
WEIGHT_FLOOR = 1e-6


@dataclass
class ModelConfig:
    latent_channels: int = 32  # C_f
    T: int = 64
    D: int = 8
    visual_channels: int = 8  # C_v
    n_mels: int = 16  # F_m
    audio_steps: int = 4  # tau_a
    depth: int = 2
    heads: int = 2
    boundary_hidden: int | None = None  # C_h, defaults to C_f
    fusion_hidden: int = 16
    seed: int = 0

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("boundary_hidden",) and v is None:
                continue
            if f.name == "seed":
                if v < 0:
                    raise ValueError("seed must be >= 0")
                continue
            if not isinstance(v, int) or v <= 0:
                raise ValueError(f"{f.name} must be a positive integer, got {v!r}")
        if self.D > self.T:
            raise ValueError("D must not exceed T")
        if self.latent_channels % self.heads or self.hidden % self.heads:
            raise ValueError("channel widths must be divisible by heads")

    @property
    def hidden(self) -> int:
        return self.boundary_hidden or self.latent_channels

    @property
    def audio_rows(self) -> int:
        return self.n_mels * self.audio_steps

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class ModelOutputs:
    z_visual: DiffArray
    z_audio: DiffArray
    frame_visual: DiffArray  # (B, T)
    frame_audio: DiffArray
    maps_visual: dict[str, DiffArray]  # kind -> (B, D, T)
    maps_audio: dict[str, DiffArray]
    fused: dict[str, DiffArray]

    def averaged_map(self) -> np.ndarray:
        return average_maps(*(self.fused[k].value for k in MAP_KINDS))


class EncoderBlock(Module):
    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        self.norm_conv = LayerNorm(channels)
        self.conv = Conv1d(channels, channels, 3, rng)
        self.norm_attn = LayerNorm(channels)
        self.attn = TemporalAttention(channels, heads, rng)
        self.norm_mlp = LayerNorm(channels)
        self.mlp = PointwiseMLP(channels, 2 * channels, rng)

    def __call__(self, x, mask, bias):
        x = x + ad.relu(self.conv(self.norm_conv(x)))
        x = x + self.attn(self.norm_attn(x), bias)
        x = x + self.mlp(self.norm_mlp(x))
        return x * mask


class SequenceEncoder(Module):
    """Conv stem followed by residual {conv, self-attention, MLP} blocks."""

    def __init__(self, in_channels: int, config: ModelConfig, rng: np.random.Generator):
        self.stem = Conv1d(in_channels, config.latent_channels, 3, rng)
        self.blocks = [EncoderBlock(config.latent_channels, config.heads, rng) for _ in range(config.depth)]

    def __call__(self, x, mask: np.ndarray) -> DiffArray:
        bias = key_padding_bias(mask)
        h = self.stem(x) * mask
        for block in self.blocks:
            h = block(h, mask, bias)
        return h


class FrameClassifier(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        self.proj = Conv1d(channels, 1, 1, rng)

    def __call__(self, z) -> DiffArray:
        logits = self.proj(z)
        return ad.sigmoid(ad.reshape(logits, (logits.shape[0], logits.shape[-1])))


class MapHead(Module):
    """Dilated conv stack from hidden features to D map logits."""

    def __init__(self, channels: int, D: int, rng: np.random.Generator):
        self.conv1 = Conv1d(channels, channels, 3, rng)
        self.conv2 = Conv1d(channels, channels, 3, rng, dilation=2)
        self.out = Conv1d(channels, D, 3, rng, dilation=4)

    def __call__(self, h) -> DiffArray:
        h = ad.relu(self.conv1(h))
        h = ad.relu(self.conv2(h))
        return self.out(h)


class BoundaryModule(Module):
    """Position-aware, channel-aware and aggregated boundary maps."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        c_h = config.hidden
        self.stem = Conv1d(config.latent_channels + 1, c_h, 3, rng)
        self.norm_pos = LayerNorm(c_h)
        self.pos_attn = TemporalAttention(c_h, config.heads, rng)
        self.pos_head = MapHead(c_h, config.D, rng)
        self.norm_chan = LayerNorm(c_h)
        self.chan_attn = ChannelAttention(c_h, rng)
        self.chan_head = MapHead(c_h, config.D, rng)
        self.aggregate = Conv1d(2 * config.D, config.D, 1, rng)

    def __call__(self, z, frame_scores, mask) -> dict[str, DiffArray]:
        b, _, t = z.shape
        x = ad.concat([z, ad.reshape(frame_scores, (b, 1, t))], axis=1)
        h = ad.relu(self.stem(x)) * mask
        hp = h + self.pos_attn(self.norm_pos(h), key_padding_bias(mask))
        hc = h + self.chan_attn(self.norm_chan(h), mask)
        map_p = ad.sigmoid(self.pos_head(hp))
        map_c = ad.sigmoid(self.chan_head(hc))
        map_pc = ad.sigmoid(self.aggregate(ad.concat([map_p, map_c], axis=1)))
        return {"p": map_p, "c": map_c, "pc": map_pc}


class FusionWeights(Module):
    """Strictly positive per-cell weights from one modality's map and both latents."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.conv1 = Conv1d(config.D + 2, config.fusion_hidden, 3, rng)
        self.conv2 = Conv1d(config.fusion_hidden, config.D, 3, rng)

    def __call__(self, bm, z_visual, z_audio) -> DiffArray:
        # per-frame channel means stand in for the latent summaries
        summary_v = ad.mean(z_visual, axis=1, keepdims=True)
        summary_a = ad.mean(z_audio, axis=1, keepdims=True)
        h = ad.relu(self.conv1(ad.concat([bm, summary_v, summary_a], axis=1)))
        return ad.softplus(self.conv2(h)) + WEIGHT_FLOOR


def weighted_fuse(map_v, map_a, w_v, w_a) -> DiffArray:
    """(W_v * map_v + W_a * map_a) / (W_v + W_a), elementwise."""
    map_v, map_a, w_v, w_a = (ad.as_array(x) for x in (map_v, map_a, w_v, w_a))
    shapes = {map_v.shape, map_a.shape, w_v.shape, w_a.shape}
    if len(shapes) != 1:
        raise ad.ShapeError("weighted_fuse", map_v.shape, map_a.shape, w_v.shape, w_a.shape)
    total = w_v + w_a
    if np.any(total.value <= 0):
        raise ValueError("weighted_fuse: weight sum must be strictly positive")
    return (w_v * map_v + w_a * map_a) / total


class FusionModule(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.visual = FusionWeights(config, rng)
        self.audio = FusionWeights(config, rng)

    def __call__(self, map_v, map_a, z_visual, z_audio) -> DiffArray:
        w_v = self.visual(map_v, z_visual, z_audio)
        w_a = self.audio(map_a, z_visual, z_audio)
        return weighted_fuse(map_v, map_a, w_v, w_a)


class BoundaryAwareDetector(Module):
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.visual_encoder = SequenceEncoder(config.visual_channels, config, rng)
        self.audio_encoder = SequenceEncoder(config.audio_rows, config, rng)
        self.visual_classifier = FrameClassifier(config.latent_channels, rng)
        self.audio_classifier = FrameClassifier(config.latent_channels, rng)
        self.visual_boundary = BoundaryModule(config, rng)
        self.audio_boundary = BoundaryModule(config, rng)
        self.fusion = {kind: FusionModule(config, rng) for kind in MAP_KINDS}

    def named_parameters(self, prefix: str = "") -> dict[str, DiffArray]:
        out = {}
        for name in ("visual_encoder", "audio_encoder", "visual_classifier", "audio_classifier",
                     "visual_boundary", "audio_boundary"):
            out.update(getattr(self, name).named_parameters(f"{prefix}{name}."))
        for kind in MAP_KINDS:
            out.update(self.fusion[kind].named_parameters(f"{prefix}fusion_{kind}."))
        return out

    def _check(self, visual: np.ndarray, audio: np.ndarray):
        cfg = self.config
        if visual.ndim != 3 or visual.shape[1:] != (cfg.visual_channels, cfg.T):
            raise ad.ShapeError("forward(visual)", visual.shape, (None, cfg.visual_channels, cfg.T))
        if audio.ndim != 3 or audio.shape[1:] != (cfg.audio_rows, cfg.T):
            raise ad.ShapeError("forward(audio)", audio.shape, (None, cfg.audio_rows, cfg.T))
        if visual.shape[0] != audio.shape[0]:
            raise ad.ShapeError("forward(batch)", visual.shape, audio.shape)

    def forward(self, visual, audio, lengths) -> ModelOutputs:
        """Run the full network on a batch.

        visual: (B, C_v, T); audio: (B, tau_a * F_m, T); lengths: (B,) valid frames.
        """
        visual = ad.as_array(visual)
        audio = ad.as_array(audio)
        self._check(visual.value, audio.value)
        T = self.config.T
        mask = (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)[:, None, :]
        z_v = self.visual_encoder(visual, mask)
        z_a = self.audio_encoder(audio, mask)
        y_v = self.visual_classifier(z_v)
        y_a = self.audio_classifier(z_a)
        maps_v = self.visual_boundary(z_v, y_v, mask)
        maps_a = self.audio_boundary(z_a, y_a, mask)
        fused = {k: self.fusion[k](maps_v[k], maps_a[k], z_v, z_a) for k in MAP_KINDS}
        return ModelOutputs(z_v, z_a, y_v, y_a, maps_v, maps_a, fused)

    __call__ = forward

    def predict_maps(self, visual, audio, lengths) -> np.ndarray:
        """Averaged fused boundary maps (B, D, T) without keeping a graph."""
        with_grad = [p.requires_grad for p in self.parameters()]
        params = self.parameters()
        for p in params:
            p.requires_grad = False
        try:
            out = self.forward(visual, audio, lengths)
        finally:
            for p, flag in zip(params, with_grad):
                p.requires_grad = flag
        return out.averaged_map()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.named_parameters()
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ValueError(f"state mismatch: missing={missing[:3]} unexpected={extra[:3]}")
        for k, p in params.items():
            if p.value.shape != state[k].shape:
                raise ValueError(f"shape mismatch for {k}: {p.value.shape} vs {state[k].shape}")
            p.value = np.array(state[k], dtype=np.float64)
