"""Toy video encoder: tubelet patches, Fourier positions, a few transformer blocks.

Stands in for a pretrained video backbone behind the same contract: a clip of
any length in, patch feature tokens plus a class token out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import MultiHeadAttention
from .nn import MLP, F, LayerNorm, Linear, Module, Tensor, parameter
from .prompts import FourierBasis, fourier_embed


@dataclass
class ClipTensor:
    """frames: (T, H, W, C) in [0, 1]; times: (T,) normalized timestamps."""

    frames: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[0] == 0:
            raise ValueError(f"clip: expected non-empty (T, H, W, C) frames, got {self.frames.shape}")
        if self.times.shape != (self.frames.shape[0],):
            raise ValueError("clip: one timestamp per frame required")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def frame_times(n: int) -> np.ndarray:
    """Frame-center timestamps (i + 0.5) / n."""
    return (np.arange(n) + 0.5) / n


@dataclass
class VideoTokens:
    features: Tensor  # (B, L, D)
    coords: np.ndarray  # (B, L, 3)
    pos: np.ndarray  # (B, L, D) Fourier positional encoding of coords
    class_token: Tensor  # (B, D)


def patchify(frames: np.ndarray, times: np.ndarray, patch: tuple[int, int, int]):
    """Cut (B, T, H, W, C) frames into flattened tubelets with patch-center coords.

    T is padded up to a multiple of the temporal patch by repeating the last
    frame (and its timestamp). Returns (patches (B, L, pt*ph*pw*C), coords (B, L, 3)).
    """
    frames = np.asarray(frames, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if frames.ndim == 4:
        frames, times = frames[None], times[None]
    b, t, h, w, c = frames.shape
    if t == 0 or h == 0 or w == 0:
        raise ValueError(f"patchify: zero-size clip {frames.shape}")
    pt, ph, pw = patch
    if h % ph or w % pw:
        raise ValueError(f"patchify: frame {h}x{w} not divisible by patch {ph}x{pw}")
    pad = (-t) % pt
    if pad:
        frames = np.concatenate([frames, np.repeat(frames[:, -1:], pad, axis=1)], axis=1)
        times = np.concatenate([times, np.repeat(times[:, -1:], pad, axis=1)], axis=1)
        t += pad
    nt, nh, nw = t // pt, h // ph, w // pw
    x = frames.reshape(b, nt, pt, nh, ph, nw, pw, c)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7).reshape(b, nt * nh * nw, pt * ph * pw * c)
    tc = times.reshape(b, nt, pt).mean(axis=2)
    yc = (np.arange(nh) + 0.5) / nh
    xc = (np.arange(nw) + 0.5) / nw
    grid_t = np.broadcast_to(tc[:, :, None, None], (b, nt, nh, nw))
    grid_y = np.broadcast_to(yc[None, None, :, None], (b, nt, nh, nw))
    grid_x = np.broadcast_to(xc[None, None, None, :], (b, nt, nh, nw))
    coords = np.stack([grid_x, grid_y, grid_t], axis=-1).reshape(b, nt * nh * nw, 3)
    return np.ascontiguousarray(x), coords


class EncoderBlock(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, 2 * dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h)
        return x + self.mlp(self.norm2(x))


class VideoEncoder(Module):
    def __init__(
        self,
        dim: int,
        heads: int,
        blocks: int,
        patch: tuple[int, int, int],
        channels: int,
        rng: np.random.Generator,
    ):
        self.patch = tuple(patch)
        self.basis = FourierBasis.sample(dim, rng)
        self.embed = Linear(int(np.prod(patch)) * channels, dim, rng)
        self.cls = parameter(rng.normal(0.0, 0.02, dim))
        self.blocks = [EncoderBlock(dim, heads, rng) for _ in range(blocks)]
        self.norm = LayerNorm(dim)

    def encode_tokens(self, patches: np.ndarray, coords: np.ndarray) -> VideoTokens:
        b = patches.shape[0]
        pos = fourier_embed(coords, self.basis)
        x = self.embed(Tensor(patches)) + pos
        cls = F.expand(self.cls, (b, 1, self.cls.shape[0]))
        x = F.concat([cls, x], axis=1)
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x)
        return VideoTokens(features=x[:, 1:], coords=coords, pos=pos, class_token=x[:, 0])

    def __call__(self, frames: np.ndarray, times: np.ndarray) -> VideoTokens:
        patches, coords = patchify(frames, times, self.patch)
        return self.encode_tokens(patches, coords)


def encode_video(encoder: VideoEncoder, clip: ClipTensor) -> VideoTokens:
    return encoder(clip.frames[None], clip.times[None])
