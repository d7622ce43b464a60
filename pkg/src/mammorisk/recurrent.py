"""Recurrent backbone over yearly exams.

Each time step takes a fused exam representation, injects it at fine scale,
downsamples by patch merging (2x2 cells, channels doubled), runs a
four-direction selective-scan gating block at the coarse scale, applies a
gated cell update carried across time, then upsamples and reconstructs a
fine-scale map that is fed back into the next step's fusion.

The gating block scans the feature map as four 1-D sequences (row-major and
column-major, each forward and reversed) through one shared selective-scan
unit, merges the four outputs by summation, layer-normalizes over channels,
and adds a parallel SiLU stream of the raw input.  The sigmoid of that sum
gates the cell update:

    cell_t   = gate * (tanh(pre_gate) + cell_{t-1})
    hidden_t = gate * tanh(cell_t)

Steps with no usable exam are skipped entirely, so recurrent state and the
fine-scale carry pass through bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mammorisk import scan as scan_mod
from mammorisk.tensor import (
    Tensor, add, concat, dwconv3x3, expand, flip, layernorm, matmul,
    mean_axis, mul, permute, reshape, sigmoid, silu, tanh,
)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape,
           dtype) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype),
                  requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (rows, fin) @ w (fin, fout) + b, bias broadcast over rows."""
    out = matmul(x, w)
    return add(out, expand(reshape(b, (1, b.shape[0])), out.shape))


@dataclass
class VssOutput:
    pre_gate: Tensor  # (C, H, W) additive merge of scan and direct streams
    gate: Tensor      # sigmoid(pre_gate)


@dataclass
class VmrnnState:
    hidden: Tensor
    cell: Tensor
    t: int


# ---------------------------------------------------------------------------
# directional scanning


def cross_scan(x: Tensor) -> list[Tensor]:
    """Unfold (C, H, W) into four (H*W, C) sequences: row/col major, fw/rev."""
    c, h, w = x.shape
    row = permute(reshape(x, (c, h * w)), (1, 0))
    col = permute(reshape(permute(x, (0, 2, 1)), (c, h * w)), (1, 0))
    return [row, flip(row, 0), col, flip(col, 0)]


def cross_merge(ys: list[Tensor], height: int, width: int) -> Tensor:
    """Fold four scanned sequences back onto the grid and sum them."""
    c = ys[0].shape[1]
    row = reshape(permute(ys[0], (1, 0)), (c, height, width))
    row_r = reshape(permute(flip(ys[1], 0), (1, 0)), (c, height, width))
    col = permute(reshape(permute(ys[2], (1, 0)), (c, width, height)), (0, 2, 1))
    col_r = permute(reshape(permute(flip(ys[3], 0), (1, 0)), (c, width, height)),
                    (0, 2, 1))
    return add(add(row, row_r), add(col, col_r))


# ---------------------------------------------------------------------------
# block


class VmrnnBlock:
    """One recurrent level: fine channels ``channels`` on a height x width grid,
    coarse processing at 2*channels on the half-resolution grid."""

    def __init__(self, rng: np.random.Generator, channels: int, height: int,
                 width: int, state_dim: int = 8, token_dim: int = 64,
                 dtype=np.float64):
        if height % 2 or width % 2:
            raise ValueError("grid dims must pair up for 2x2 patch merging")
        self.channels = channels
        self.height = height
        self.width = width
        self.token_dim = token_dim
        self.dtype = np.dtype(dtype)
        coarse = 2 * channels
        self.coarse = coarse

        self.merge_w = glorot(rng, 4 * channels, coarse, (4 * channels, coarse), dtype)
        self.merge_b = zeros_param((coarse,), dtype)
        self.dw_kernel = glorot(rng, 9, 9, (coarse, 3, 3), dtype)
        self.dw_bias = zeros_param((coarse,), dtype)
        self.ssm = scan_mod.init_ssm(rng, coarse, state_dim, dtype=dtype)
        self.ln_gamma = Tensor(np.ones(coarse, dtype=dtype), requires_grad=True)
        self.ln_beta = zeros_param((coarse,), dtype)
        self.expand_w = glorot(rng, coarse, 4 * channels, (coarse, 4 * channels), dtype)
        self.expand_b = zeros_param((4 * channels,), dtype)
        self.recon_w = glorot(rng, channels, channels, (channels, channels), dtype)
        self.recon_b = zeros_param((channels,), dtype)

        fuse_in = token_dim + channels * height * width + 2
        fuse_out = channels * height * width
        self.fuse_w = glorot(rng, fuse_in, fuse_out, (fuse_in, fuse_out), dtype)
        self.fuse_b = zeros_param((fuse_out,), dtype)

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out = {
            prefix + "merge_w": self.merge_w, prefix + "merge_b": self.merge_b,
            prefix + "dw_kernel": self.dw_kernel, prefix + "dw_bias": self.dw_bias,
            prefix + "ln_gamma": self.ln_gamma, prefix + "ln_beta": self.ln_beta,
            prefix + "expand_w": self.expand_w, prefix + "expand_b": self.expand_b,
            prefix + "recon_w": self.recon_w, prefix + "recon_b": self.recon_b,
            prefix + "fuse_w": self.fuse_w, prefix + "fuse_b": self.fuse_b,
        }
        out.update(self.ssm.named_params(prefix + "ssm/"))
        return out

    # -- spatial rescaling ---------------------------------------------------

    def patch_merge(self, x: Tensor) -> Tensor:
        """(C, H, W) -> (2C, H/2, W/2) by 2x2 cell flattening + linear map."""
        c, h, w = x.shape
        cells = permute(reshape(x, (c, h // 2, 2, w // 2, 2)), (1, 3, 2, 4, 0))
        flat = reshape(cells, (h // 2 * (w // 2), 4 * c))
        merged = linear(flat, self.merge_w, self.merge_b)
        return reshape(permute(merged, (1, 0)), (self.coarse, h // 2, w // 2))

    def patch_expand(self, x: Tensor) -> Tensor:
        """(2C, H/2, W/2) -> (C, H, W), inverse layout of patch_merge."""
        c2, hc, wc = x.shape
        c = self.channels
        flat = permute(reshape(x, (c2, hc * wc)), (1, 0))
        up = linear(flat, self.expand_w, self.expand_b)
        cells = reshape(up, (hc, wc, 2, 2, c))
        return reshape(permute(cells, (4, 0, 2, 1, 3)), (c, 2 * hc, 2 * wc))

    def reconstruct(self, x: Tensor) -> Tensor:
        """Per-pixel linear mix of channels (a 1x1 convolution)."""
        c, h, w = x.shape
        flat = permute(reshape(x, (c, h * w)), (1, 0))
        out = linear(flat, self.recon_w, self.recon_b)
        return reshape(permute(out, (1, 0)), (c, h, w))

    # -- gating block ----------------------------------------------------------

    def vss_forward(self, x: Tensor) -> VssOutput:
        conv_stream = silu(dwconv3x3(x, self.dw_kernel, self.dw_bias))
        c, h, w = x.shape
        ys = [scan_mod.s6_forward(self.ssm, seq) for seq in cross_scan(conv_stream)]
        merged = cross_merge(ys, h, w)
        normed = permute(layernorm(permute(merged, (1, 2, 0)),
                                   self.ln_gamma, self.ln_beta), (2, 0, 1))
        pre_gate = add(normed, silu(x))
        return VssOutput(pre_gate=pre_gate, gate=sigmoid(pre_gate))

    # -- temporal step ---------------------------------------------------------

    def init_state(self) -> VmrnnState:
        shape = (self.coarse, self.height // 2, self.width // 2)
        return VmrnnState(hidden=Tensor(np.zeros(shape, dtype=self.dtype)),
                          cell=Tensor(np.zeros(shape, dtype=self.dtype)), t=0)

    def init_carry(self) -> Tensor:
        return Tensor(np.zeros((self.channels, self.height, self.width),
                               dtype=self.dtype))

    def fuse_input(self, token: Tensor, carry: Tensor, delta_t: float,
                   present: float) -> Tensor:
        """Merge exam token, previous reconstruction, and timing metadata
        into the fine-scale input map for this step."""
        meta = Tensor(np.array([delta_t, present], dtype=self.dtype))
        feat = concat([token, reshape(carry, (carry.size,)), meta], axis=0)
        out = linear(reshape(feat, (1, feat.size)), self.fuse_w, self.fuse_b)
        return reshape(out, (self.channels, self.height, self.width))

    def step(self, x_fine: Tensor, state: VmrnnState) -> tuple[Tensor, VmrnnState]:
        coarse_in = self.patch_merge(x_fine)
        vss = self.vss_forward(coarse_in)
        cell = mul(vss.gate, add(tanh(vss.pre_gate), state.cell))
        hidden = mul(vss.gate, tanh(cell))
        recon = self.reconstruct(self.patch_expand(hidden))
        return recon, VmrnnState(hidden=hidden, cell=cell, t=state.t + 1)


def pool_hidden(state: VmrnnState) -> Tensor:
    """Spatial mean of the final hidden map -> (2C,) feature vector."""
    c = state.hidden.shape[0]
    return mean_axis(reshape(state.hidden, (c, state.hidden.size // c)), 1)
