"""Per-view image encoder and cross-view exam fusion.

Each screening view (one grayscale image) is encoded by a small three-stage
convolutional pyramid into a (16, 8, 8) feature map.  The four views of an
exam are pooled into tokens, tagged with learned view embeddings (an absent
view contributes a learned placeholder token instead), mixed by one block of
two-head self-attention plus a feed-forward residual, and averaged into a
single exam token for the temporal backbone.
"""

from __future__ import annotations

import numpy as np

from mammorisk.recurrent import glorot, linear, zeros_param
from mammorisk.tensor import (
    Tensor, add, avgpool2, concat, conv2d, layernorm, matmul, mean_axis,
    permute, reshape, silu, slice_axis, softmax_last,
)

VIEWS = ("LCC", "RCC", "LMLO", "RMLO")


def he_conv(rng: np.random.Generator, cout: int, cin: int, dtype) -> Tensor:
    """He-scaled 3x3 kernels, symmetrized along width at init.

    A width-symmetric kernel commutes with horizontal mirroring (the rest of
    the pyramid — stride-1 same-pad convs and 2x2 mean pooling — already
    does), so at initialization the encoder maps mirrored content to mirrored
    features.  Bilateral difference maps then start out blind to everything
    the two sides share and sensitive only to genuine left/right deviations;
    training is free to break the symmetry afterwards.
    """
    std = np.sqrt(2.0 / (cin * 9))
    k = rng.normal(0.0, std, size=(cout, cin, 3, 3))
    k = (k + k[..., ::-1]) / np.sqrt(2.0)
    return Tensor(k.astype(dtype), requires_grad=True)


class ViewEncoder:
    """(B, 1, S, S) images -> (B, C, S/8, S/8) feature maps."""

    def __init__(self, rng: np.random.Generator, image_size: int = 64,
                 channels: tuple[int, int, int] = (8, 12, 16),
                 dtype=np.float64):
        if image_size % 8:
            raise ValueError("image_size must be divisible by 8")
        self.image_size = image_size
        self.channels = channels
        self.dtype = np.dtype(dtype)
        self.feature_hw = image_size // 8
        cins = (1,) + channels[:2]
        self.weights = [he_conv(rng, co, ci, dtype)
                        for ci, co in zip(cins, channels)]
        self.biases = [zeros_param((co,), dtype) for co in channels]

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}conv{i}_w"] = w
            out[f"{prefix}conv{i}_b"] = b
        return out

    def forward(self, images: Tensor) -> Tensor:
        x = images
        for w, b in zip(self.weights, self.biases):
            x = avgpool2(silu(conv2d(x, w, b, padding=1)))
        return x


class ViewFusion:
    """Four view feature maps -> one exam token."""

    def __init__(self, rng: np.random.Generator, feat_channels: int = 16,
                 token_dim: int = 64, heads: int = 2, ffn_dim: int = 128,
                 dtype=np.float64):
        if token_dim % heads:
            raise ValueError("token_dim must split evenly across heads")
        self.feat_channels = feat_channels
        self.token_dim = token_dim
        self.heads = heads
        self.head_dim = token_dim // heads
        self.dtype = np.dtype(dtype)

        self.token_w = glorot(rng, feat_channels, token_dim,
                              (feat_channels, token_dim), dtype)
        self.token_b = zeros_param((token_dim,), dtype)
        emb = rng.normal(0.0, 0.02, size=(len(VIEWS), token_dim))
        self.view_emb = Tensor(emb.astype(dtype), requires_grad=True)
        self.absent_emb = Tensor(
            rng.normal(0.0, 0.02, size=token_dim).astype(dtype),
            requires_grad=True)
        self.wq = glorot(rng, token_dim, token_dim, (token_dim, token_dim), dtype)
        self.wk = glorot(rng, token_dim, token_dim, (token_dim, token_dim), dtype)
        self.wv = glorot(rng, token_dim, token_dim, (token_dim, token_dim), dtype)
        self.wo = glorot(rng, token_dim, token_dim, (token_dim, token_dim), dtype)
        self.ln1_g = Tensor(np.ones(token_dim, dtype=dtype), requires_grad=True)
        self.ln1_b = zeros_param((token_dim,), dtype)
        self.ffn_w1 = glorot(rng, token_dim, ffn_dim, (token_dim, ffn_dim), dtype)
        self.ffn_b1 = zeros_param((ffn_dim,), dtype)
        self.ffn_w2 = glorot(rng, ffn_dim, token_dim, (ffn_dim, token_dim), dtype)
        self.ffn_b2 = zeros_param((token_dim,), dtype)
        self.ln2_g = Tensor(np.ones(token_dim, dtype=dtype), requires_grad=True)
        self.ln2_b = zeros_param((token_dim,), dtype)

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        return {
            prefix + "token_w": self.token_w, prefix + "token_b": self.token_b,
            prefix + "view_emb": self.view_emb,
            prefix + "absent_emb": self.absent_emb,
            prefix + "wq": self.wq, prefix + "wk": self.wk,
            prefix + "wv": self.wv, prefix + "wo": self.wo,
            prefix + "ln1_g": self.ln1_g, prefix + "ln1_b": self.ln1_b,
            prefix + "ffn_w1": self.ffn_w1, prefix + "ffn_b1": self.ffn_b1,
            prefix + "ffn_w2": self.ffn_w2, prefix + "ffn_b2": self.ffn_b2,
            prefix + "ln2_g": self.ln2_g, prefix + "ln2_b": self.ln2_b,
        }

    def tokens(self, feature_maps: Tensor | None, present: list[bool]) -> Tensor:
        """Build the (4, token_dim) token matrix for one exam.

        ``feature_maps`` holds the encoded maps of the *present* views, in
        view order, shape (n_present, C, h, w); absent views take the learned
        placeholder token.
        """
        if sum(present) > 0:
            n, c, fh, fw = feature_maps.shape
            pooled = mean_axis(reshape(feature_maps, (n, c, fh * fw)), 2)
            proj = linear(pooled, self.token_w, self.token_b)
        rows = []
        pi = 0
        for v, is_present in enumerate(present):
            emb = slice_axis(self.view_emb, 0, v, v + 1)
            if is_present:
                tok = add(slice_axis(proj, 0, pi, pi + 1), emb)
                pi += 1
            else:
                tok = add(reshape(self.absent_emb, (1, self.token_dim)), emb)
            rows.append(tok)
        return concat(rows, axis=0)

    def _attention(self, x: Tensor) -> Tensor:
        q, k, v = matmul(x, self.wq), matmul(x, self.wk), matmul(x, self.wv)
        outs = []
        inv_sqrt = 1.0 / np.sqrt(self.head_dim)
        for h in range(self.heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh = slice_axis(q, 1, lo, hi)
            kh = slice_axis(k, 1, lo, hi)
            vh = slice_axis(v, 1, lo, hi)
            scores = matmul(qh, permute(kh, (1, 0))) * inv_sqrt
            outs.append(matmul(softmax_last(scores), vh))
        return matmul(concat(outs, axis=1), self.wo)

    def forward(self, feature_maps: Tensor | None, present: list[bool]) -> Tensor:
        """Fuse one exam into a (token_dim,) vector."""
        x = self.tokens(feature_maps, present)
        x = layernorm(add(x, self._attention(x)), self.ln1_g, self.ln1_b)
        ffn = linear(silu(linear(x, self.ffn_w1, self.ffn_b1)),
                     self.ffn_w2, self.ffn_b2)
        x = layernorm(add(x, ffn), self.ln2_g, self.ln2_b)
        return mean_axis(x, 0)
