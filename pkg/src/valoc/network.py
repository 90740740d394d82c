"""Differentiable forward pass: encoders, cross-modal fusion, span predictors.

The video path projects per-second features, fuses them with the text via
context-query attention, and scores start/end per frame with two
unidirectional LSTMs. The text path projects token embeddings and adds the
mean-pooled fused video vector to every token before scoring start/end per
token. Question tokens are masked out of the textual logits with a large
negative sentinel so they can never be predicted or normalized over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import Sample, concat_token_ids, token_layout

__all__ = [
    "ModelConfig",
    "FusionState",
    "SpanLogits",
    "CrossModalSpanNet",
    "NoTextTargetError",
    "MASK_SENTINEL",
    "sample_inputs",
]

# -infinity stand-in for masked textual logits; large enough that softmax
# weight underflows to 0 in float32 and float64 alike
MASK_SENTINEL = -1e9


class NoTextTargetError(RuntimeError):
    """Signal that a sample has no subtitle tokens for the textual path."""


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    d_in: int = 32
    vocab_size: int = 256
    kernel_size: int = 1
    seed: int = 0

    def validate(self) -> None:
        if min(self.d, self.d_in, self.vocab_size) < 1:
            raise ValueError("d, d_in and vocab_size must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd so the video length is preserved")


@dataclass
class FusionState:
    V: torch.Tensor  # (k, d) encoded video
    T: torch.Tensor  # (n, d) encoded text
    G: torch.Tensor  # (k, n) trilinear similarity
    G_r: torch.Tensor  # (k, n) softmax over text axis, rows sum to 1
    G_c: torch.Tensor  # (k, n) softmax over video axis, columns sum to 1
    D: torch.Tensor  # (k, d) context-to-query
    F: torch.Tensor  # (k, d) query-to-context
    V_prime: torch.Tensor  # (k, d)
    V_dprime: torch.Tensor  # (k, d)
    T_prime: torch.Tensor  # (n, d)
    V_bar: torch.Tensor  # (d,) pooled video
    T_bar: torch.Tensor  # (n, d) broadcast sum


@dataclass
class SpanLogits:
    v_start: torch.Tensor  # (k,)
    v_end: torch.Tensor  # (k,)
    t_start: torch.Tensor  # (n,)
    t_end: torch.Tensor  # (n,)
    t_mask: torch.Tensor  # (n,) bool, True on subtitle tokens

    @property
    def has_text(self) -> bool:
        return bool(self.t_mask.any())


class CrossModalSpanNet(nn.Module):
    """Dual span predictor over video frames and subtitle tokens."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        super().__init__()
        self.cfg = cfg
        d = cfg.d
        torch.manual_seed(cfg.seed)
        self.video_proj = nn.Linear(cfg.d_in, d)
        self.token_embed = nn.Embedding(cfg.vocab_size, d)
        # trilinear similarity w . [v ; t ; v*t]
        self.sim_weight = nn.Parameter(torch.empty(3 * d))
        self.sim_bias = nn.Parameter(torch.zeros(1))
        self.ffn_c = nn.Linear(4 * d, d)
        self.attn_q = nn.Linear(d, d)
        self.attn_k = nn.Linear(d, d)
        self.conv = nn.Conv1d(2 * d, d, cfg.kernel_size, padding=cfg.kernel_size // 2)
        self.ffn_p = nn.Linear(d, d)
        self.lstm_start = nn.LSTM(d, d, batch_first=True)
        self.lstm_end = nn.LSTM(d, d, batch_first=True)
        self.head_v_start = nn.Linear(d, 1)
        self.head_v_end = nn.Linear(d, 1)
        self.head_t_start = nn.Linear(d, 1)
        self.head_t_end = nn.Linear(d, 1)
        bound = 1.0 / math.sqrt(3 * d)
        nn.init.uniform_(self.sim_weight, -bound, bound)
        nn.init.uniform_(self.token_embed.weight, -1.0 / math.sqrt(d), 1.0 / math.sqrt(d))

    # -- encoders ---------------------------------------------------------

    def embed_video(self, raw: torch.Tensor) -> torch.Tensor:
        if raw.ndim != 2 or raw.shape[1] != self.cfg.d_in:
            raise ValueError(f"expected (k, {self.cfg.d_in}) video features, got {tuple(raw.shape)}")
        return F.relu(self.video_proj(raw))

    def embed_text(self, token_ids: torch.Tensor) -> torch.Tensor:
        if token_ids.numel() and not (0 <= int(token_ids.min()) and int(token_ids.max()) < self.cfg.vocab_size):
            raise ValueError(f"token ids out of range for vocab size {self.cfg.vocab_size}")
        return self.token_embed(token_ids)

    # -- fusion -----------------------------------------------------------

    def cqa_fuse(self, V: torch.Tensor, T: torch.Tensor):
        """Context-query attention: similarity, both normalizations, D and F."""
        d = self.cfg.d
        w_v, w_t, w_m = self.sim_weight[:d], self.sim_weight[d : 2 * d], self.sim_weight[2 * d :]
        G = (V @ w_v).unsqueeze(1) + (T @ w_t).unsqueeze(0) + (V * w_m) @ T.T + self.sim_bias
        G_r = torch.softmax(G, dim=1)
        G_c = torch.softmax(G, dim=0)
        D = G_r @ T
        Fm = G_c @ (G_r.T @ V)
        return G, G_r, G_c, D, Fm

    def context_query_concat(self, V, D, Fm) -> torch.Tensor:
        return F.relu(self.ffn_c(torch.cat([V, D, V * D, V * Fm], dim=1)))

    def cross_attend(self, V_prime: torch.Tensor, T: torch.Tensor) -> torch.Tensor:
        """Scaled dot-product attention with video queries over raw text values."""
        scores = self.attn_q(V_prime) @ self.attn_k(T).T / math.sqrt(self.cfg.d)
        return torch.softmax(scores, dim=1) @ T

    def video_text_conv(self, V_prime, T, G_r) -> torch.Tensor:
        """Cross-attend V' to the text, align the text to the video axis via
        G_r, and mix the concatenation with a 1-D convolution."""
        attended = self.cross_attend(V_prime, T)
        aligned = G_r @ T
        x = torch.cat([attended, aligned], dim=1).T.unsqueeze(0)  # (1, 2d, k)
        return F.relu(self.conv(x)).squeeze(0).T

    def text_projection_broadcast(self, T, V_dprime):
        T_prime = F.relu(self.ffn_p(T))
        V_bar = V_dprime.mean(dim=0)
        return T_prime, V_bar, V_bar.unsqueeze(0) + T_prime

    # -- predictors -------------------------------------------------------

    def visual_predict(self, V_dprime: torch.Tensor):
        h_start, _ = self.lstm_start(V_dprime.unsqueeze(0))
        h_end, _ = self.lstm_end(V_dprime.unsqueeze(0))
        v_start = self.head_v_start(h_start.squeeze(0)).squeeze(-1)
        v_end = self.head_v_end(h_end.squeeze(0)).squeeze(-1)
        return v_start, v_end

    def textual_predict(self, T_bar: torch.Tensor, t_mask: torch.Tensor):
        if not bool(t_mask.any()):
            raise NoTextTargetError("no subtitle tokens to score")
        t_start = self.head_t_start(T_bar).squeeze(-1).masked_fill(~t_mask, MASK_SENTINEL)
        t_end = self.head_t_end(T_bar).squeeze(-1).masked_fill(~t_mask, MASK_SENTINEL)
        return t_start, t_end

    # -- full pass --------------------------------------------------------

    def forward(self, video: torch.Tensor, token_ids: torch.Tensor, t_mask: torch.Tensor):
        if token_ids.numel() == 0:
            raise ValueError("cannot run the forward pass with zero text tokens")
        V = self.embed_video(video)
        T = self.embed_text(token_ids)
        G, G_r, G_c, D, Fm = self.cqa_fuse(V, T)
        V_prime = self.context_query_concat(V, D, Fm)
        V_dprime = self.video_text_conv(V_prime, T, G_r)
        T_prime, V_bar, T_bar = self.text_projection_broadcast(T, V_dprime)
        state = FusionState(
            V=V, T=T, G=G, G_r=G_r, G_c=G_c, D=D, F=Fm,
            V_prime=V_prime, V_dprime=V_dprime, T_prime=T_prime, V_bar=V_bar, T_bar=T_bar,
        )
        v_start, v_end = self.visual_predict(V_dprime)
        if bool(t_mask.any()):
            t_start, t_end = self.textual_predict(T_bar, t_mask)
        else:
            # subtitle-free sample: keep the shape contract, everything masked
            t_start = torch.full_like(T_bar[:, 0], MASK_SENTINEL)
            t_end = torch.full_like(T_bar[:, 0], MASK_SENTINEL)
        return state, SpanLogits(v_start=v_start, v_end=v_end, t_start=t_start, t_end=t_end, t_mask=t_mask)

    def forward_sample(self, sample: Sample):
        video, tokens, mask = sample_inputs(sample, device=self.device, dtype=self.dtype)
        return self.forward(video, tokens, mask)

    @property
    def device(self) -> torch.device:
        return self.video_proj.weight.device

    @property
    def dtype(self) -> torch.dtype:
        return self.video_proj.weight.dtype

    def visual_param_names(self) -> list[str]:
        """Parameters exclusive to the visual predictor heads."""
        return [n for n, _ in self.named_parameters()
                if n.startswith(("lstm_", "head_v_"))]

    def textual_param_names(self) -> list[str]:
        """Parameters exclusive to the textual predictor heads."""
        return [n for n, _ in self.named_parameters()
                if n.startswith(("ffn_p", "head_t_"))]


def sample_inputs(sample: Sample, device=None, dtype=torch.float32):
    """Tensors for one sample: video features, concatenated token ids, and
    the subtitle-token mask (False on question tokens)."""
    layout = token_layout(sample)
    video = torch.tensor(sample.video_features, dtype=dtype, device=device)
    tokens = torch.as_tensor(concat_token_ids(sample), dtype=torch.long, device=device)
    mask = torch.tensor([o is not None for o in layout.token_to_subtitle], dtype=torch.bool, device=device)
    return video, tokens, mask
