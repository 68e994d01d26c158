"""Full recognizer: video encoder + prompt encoder + two-way decoder + head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import PAD
from .data.annotations import ClipRecord
from .decoder import DecoderOutput, GarHead, HeadOutput, RecognitionDecoder
from .nn import Module, Tensor
from .prompts import N_BOX_POINTS, N_KEYPOINTS, N_POINT_TYPES, PromptBatch, PromptEncoder
from .video import ClipTensor, VideoEncoder, VideoTokens


@dataclass
class ModelConfig:
    dim: int = 64
    n_pooled: int = 8
    heads: int = 4
    decoder_layers: int = 2
    encoder_blocks: int = 2
    patch: tuple = (2, 4, 4)
    epsilon: float = 10.0
    pooling: str = "depthwise"
    n_classes: int = 8
    channels: int = 1
    flat_frames: int | None = None  # frame count the flat pooling variant is tied to

    def __post_init__(self):
        self.patch = tuple(int(p) for p in self.patch)
        for name in ("dim", "n_pooled", "heads", "decoder_layers", "encoder_blocks", "n_classes", "channels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"model.{name} must be positive")
        if self.dim % self.heads:
            raise ValueError(f"model.dim={self.dim} is not divisible by heads={self.heads}")
        if self.dim % 2:
            raise ValueError("model.dim must be even for the Fourier embedding")
        if len(self.patch) != 3 or min(self.patch) <= 0:
            raise ValueError("model.patch must be three positive extents")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch"] = list(self.patch)
        return d


@dataclass
class Batch:
    frames: np.ndarray  # (B, T, H, W, C)
    times: np.ndarray  # (B, T)
    prompts: PromptBatch
    labels: np.ndarray  # (B,)
    clip_ids: list = field(default_factory=list)


def point_types(n_frames: int) -> np.ndarray:
    box = np.tile(np.arange(N_BOX_POINTS), n_frames)
    kpt = np.tile(np.arange(N_BOX_POINTS, N_POINT_TYPES), n_frames)
    return np.concatenate([box, kpt])


def prompt_batch(records: list[ClipRecord]) -> PromptBatch:
    """Points laid out per instance as [box (T×3); kpt (T×17)], padded over instances."""
    t = records[0].T
    if any(r.T != t for r in records):
        raise ValueError("all clips in a batch must have the same frame count")
    b = len(records)
    n = max((r.n_instances for r in records), default=0)
    nb = t * N_BOX_POINTS
    p = t * N_POINT_TYPES
    coords = np.full((b, n, p, 3), 0.5)
    visible = np.zeros((b, n, p), dtype=bool)
    ids = np.full((b, n), PAD, dtype=np.int64)
    for bi, rec in enumerate(records):
        times = np.asarray(rec.times)
        for i, inst in enumerate(rec.instances):
            ids[bi, i] = inst.track_id
            for k in range(t):
                box = inst.boxes[k]
                if box is not None:
                    x0, y0, x1, y1 = box
                    sl = slice(k * N_BOX_POINTS, (k + 1) * N_BOX_POINTS)
                    coords[bi, i, sl, 0] = (x0, (x0 + x1) / 2, x1)
                    coords[bi, i, sl, 1] = (y0, (y0 + y1) / 2, y1)
                    coords[bi, i, sl, 2] = times[k]
                    visible[bi, i, sl] = True
                skel = inst.skeletons[k]
                if skel is not None:
                    sk = np.asarray(skel, dtype=np.float64)
                    sl = slice(nb + k * N_KEYPOINTS, nb + (k + 1) * N_KEYPOINTS)
                    coords[bi, i, sl, :2] = sk[:, :2]
                    coords[bi, i, sl, 2] = times[k]
                    visible[bi, i, sl] = sk[:, 2] > 0
    inst_mask = visible.any(axis=2)
    ids = np.where(inst_mask, ids, PAD)
    return PromptBatch(coords, point_types(t), visible, ids, inst_mask, t)


def collate(clips: list[ClipTensor], records: list[ClipRecord]) -> Batch:
    frames = np.stack([c.frames for c in clips])
    times = np.stack([c.times for c in clips])
    return Batch(frames, times, prompt_batch(records), np.array([r.label for r in records]),
                 [r.clip_id for r in records])


@dataclass
class ModelOutput:
    logits: Tensor
    head: HeadOutput
    decoded: DecoderOutput


class PromptGAR(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = int(seed)
        video_ss, prompt_ss, dec_ss, head_ss = np.random.SeedSequence(self.seed).spawn(4)
        self.video = VideoEncoder(config.dim, config.heads, config.encoder_blocks, config.patch,
                                  config.channels, np.random.default_rng(video_ss))
        self.prompt = PromptEncoder(config.dim, config.n_pooled, np.random.default_rng(prompt_ss),
                                    pooling=config.pooling, n_frames=config.flat_frames)
        self.decoder = RecognitionDecoder(config.dim, config.heads, config.decoder_layers,
                                          np.random.default_rng(dec_ss), epsilon=config.epsilon)
        self.head = GarHead(config.dim, config.n_classes, np.random.default_rng(head_ss))

    def frozen_buffers(self) -> dict[str, np.ndarray]:
        return {"video.basis": self.video.basis.matrix, "prompt.basis": self.prompt.basis.matrix}

    def load_frozen_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        self.video.basis.matrix = np.asarray(buffers["video.basis"], dtype=np.float64).copy()
        self.prompt.basis.matrix = np.asarray(buffers["prompt.basis"], dtype=np.float64).copy()

    def encode_video(self, batch: Batch) -> VideoTokens:
        return self.video(batch.frames, batch.times)

    def decode(self, vt: VideoTokens, prompts: PromptBatch, head_mode: str = "both",
               epsilon: float | None = None, probe: bool = False) -> ModelOutput:
        feats = self.prompt(prompts)
        dec = self.decoder(vt.features, vt.pos, vt.class_token, feats, epsilon=epsilon)
        head = self.head(dec.class_token, dec.prompt_tokens, dec.prompt_mask, head_mode, probe=probe)
        return ModelOutput(head.logits, head, dec)

    def __call__(self, batch: Batch, head_mode: str = "both", epsilon: float | None = None,
                 probe: bool = False) -> ModelOutput:
        return self.decode(self.encode_video(batch), batch.prompts, head_mode, epsilon, probe)
