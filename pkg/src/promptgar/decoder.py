"""Two-way recognition decoder and the prompt-fused classification head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import PAD, SENT, MultiHeadAttention
from .nn import MLP, F, LayerNorm, Linear, Module, Tensor
from .prompts import PromptFeatures

HEAD_MODES = ("both", "class", "prompts")
_MODE_ALIASES = {"class_only": "class", "prompts_only": "prompts"}


@dataclass
class TokenSet:
    """Row 0 is the class token (id SENT); then N*O prompt tokens tagged by instance."""

    values: Tensor  # (B, 1 + N*O, D)
    instance_ids: np.ndarray  # (B, 1 + N*O)
    mask: np.ndarray  # (B, 1 + N*O) real tokens

    @property
    def n_prompt_tokens(self) -> int:
        return self.values.shape[1] - 1


def build_token_set(class_token: Tensor, prompts: PromptFeatures | None) -> TokenSet:
    b, d = class_token.shape
    cls = class_token.reshape(b, 1, d)
    sent = np.full((b, 1), SENT, dtype=np.int64)
    if prompts is None or prompts.n_instances == 0:
        return TokenSet(cls, sent, np.ones((b, 1), dtype=bool))
    n, o = prompts.n_instances, prompts.n_pooled
    toks = prompts.values.reshape(b, n * o, d)
    mask = np.asarray(prompts.token_mask(), dtype=bool)
    ids = np.where(mask, prompts.token_ids(), PAD).astype(np.int64)
    return TokenSet(
        F.concat([cls, toks], axis=1),
        np.concatenate([sent, ids], axis=1),
        np.concatenate([np.ones((b, 1), dtype=bool), mask], axis=1),
    )


class TwoWayLayer(Module):
    """(1) relative-instance self-attention on tokens, (2) tokens -> image
    cross-attention, (3) token MLP, (4) image -> tokens cross-attention.
    Pre-norm residual sublayers; image positions re-added at each cross-attention.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, epsilon: float, zero_out: bool = False):
        self.norm_self = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng, relative=True, epsilon=epsilon, zero_out=zero_out)
        self.norm_t2i = LayerNorm(dim)
        self.norm_t2i_img = LayerNorm(dim)
        self.t2i = MultiHeadAttention(dim, heads, rng, zero_out=zero_out)
        self.norm_mlp = LayerNorm(dim)
        self.mlp = MLP(dim, 2 * dim, rng)
        if zero_out:
            self.mlp.fc2 = Linear(2 * dim, dim, rng, zero=True)
        self.norm_i2t = LayerNorm(dim)
        self.norm_i2t_tok = LayerNorm(dim)
        self.i2t = MultiHeadAttention(dim, heads, rng, zero_out=zero_out)

    def __call__(self, image: Tensor, pos: np.ndarray, tokens: TokenSet, epsilon: float | None = None):
        t, ids, mask = tokens.values, tokens.instance_ids, tokens.mask
        h = self.norm_self(t)
        t = t + self.self_attn(h, h, h, key_mask=mask, ids_q=ids, ids_k=ids, epsilon=epsilon)
        h = self.norm_t2i(t)
        im = self.norm_t2i_img(image)
        t = t + self.t2i(h, im + pos, im)
        t = t + self.mlp(self.norm_mlp(t))
        h = self.norm_i2t(image)
        tk = self.norm_i2t_tok(t)
        image = image + self.i2t(h + pos, tk, tk, key_mask=mask)
        return image, TokenSet(t, ids, mask)


def two_way_layer(image: Tensor, pos: np.ndarray, tokens: TokenSet, weights: TwoWayLayer, epsilon=None):
    return weights(image, pos, tokens, epsilon)


@dataclass
class DecoderOutput:
    class_token: Tensor  # (B, D)
    prompt_tokens: Tensor | None  # (B, N*O, D)
    prompt_mask: np.ndarray | None  # (B, N*O)
    image: Tensor  # updated image features, unused downstream
    tokens: TokenSet


class RecognitionDecoder(Module):
    def __init__(self, dim: int, heads: int, layers: int, rng: np.random.Generator, epsilon: float = 10.0):
        self.epsilon = float(epsilon)
        self.layers = [TwoWayLayer(dim, heads, rng, epsilon) for _ in range(layers)]
        self.norm = LayerNorm(dim)

    def set_epsilon(self, epsilon: float) -> None:
        self.epsilon = float(epsilon)
        for layer in self.layers:
            layer.self_attn.epsilon = float(epsilon)

    def __call__(self, image: Tensor, pos: np.ndarray, class_token: Tensor, prompts: PromptFeatures | None,
                 epsilon: float | None = None) -> DecoderOutput:
        tokens = build_token_set(class_token, prompts)
        for layer in self.layers:
            image, tokens = layer(image, pos, tokens, epsilon)
        out = self.norm(tokens.values)
        x_hat = out[:, 0]
        if tokens.n_prompt_tokens == 0:
            return DecoderOutput(x_hat, None, None, image, tokens)
        return DecoderOutput(x_hat, out[:, 1:], tokens.mask[:, 1:], image, TokenSet(out, tokens.instance_ids, tokens.mask))


def normalize_mode(mode: str) -> str:
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in HEAD_MODES:
        raise ValueError(f"head mode must be one of {HEAD_MODES}, got {mode!r}")
    return mode


@dataclass
class HeadOutput:
    logits: Tensor
    class_input: Tensor | None
    prompt_mean: Tensor | None


class GarHead(Module):
    def __init__(self, dim: int, n_classes: int, rng: np.random.Generator, init_scale: float = 0.02):
        self.linear = Linear(dim, n_classes, rng)
        self.linear.weight.data *= init_scale * np.sqrt(dim)

    def __call__(self, x_hat: Tensor, f_hat: Tensor | None, f_mask: np.ndarray | None = None,
                 mode: str = "both", probe: bool = False) -> HeadOutput:
        mode = normalize_mode(mode)
        has_prompts = f_hat is not None and f_hat.shape[-2] > 0
        if has_prompts and f_mask is None:
            f_mask = np.ones(f_hat.shape[:-1], dtype=bool)
        if has_prompts and not np.asarray(f_mask).any():
            has_prompts = False
        if mode == "prompts":
            if not has_prompts or not np.asarray(f_mask).any(axis=-1).all():
                raise ValueError("head mode 'prompts' needs prompt tokens for every sample")
        if probe:
            x_hat.retain_grad()
        if not has_prompts or mode == "class":
            return HeadOutput(self.linear(x_hat), x_hat, None)
        m = F.masked_mean(f_hat, f_mask, axis=f_hat.ndim - 2)
        if probe:
            m.retain_grad()
        if mode == "prompts":
            return HeadOutput(self.linear(m), None, m)
        # empty rows come out of the masked mean as exact zeros
        return HeadOutput(self.linear(x_hat + m), x_hat, m)


def gar_head(head: GarHead, x_hat: Tensor, f_hat: Tensor | None, mode: str = "both", f_mask=None) -> Tensor:
    return head(x_hat, f_hat, f_mask, mode).logits
