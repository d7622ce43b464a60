"""End-to-end risk model: encoder -> exam fusion -> recurrence -> hazards.

Per subject, every present exam is encoded (all available views in one
batched pass), fused into an exam token, and folded into the recurrent
state; absent exams are skipped so state passes through untouched.  In
parallel, the encoder feature maps feed the left/right asymmetry tracker,
whose fused scalar joins the pooled recurrent summary in the hazard head.

The two ablation switches:

* ``use_vmr=False`` replaces the pooled recurrent summary with zeros, so
  risk rests on the asymmetry scalar alone;
* ``use_asym=False`` pins the asymmetry input to an exact constant 0, so
  the head's asymmetry weights receive identically zero gradient.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from mammorisk.asymmetry import VIEW_PAIRS, LongitudinalAsymmetry, \
    subject_asymmetry
from mammorisk.encoder import VIEWS, ViewEncoder, ViewFusion
from mammorisk.hazard import HazardHead, RiskOutput, pool_risk_features
from mammorisk.recurrent import VmrnnBlock, pool_hidden
from mammorisk.storage import load_checkpoint, save_checkpoint
from mammorisk.synthetic import SubjectData
from mammorisk.tensor import Tensor


@dataclass
class ModelConfig:
    image_size: int = 64
    encoder_channels: tuple[int, int, int] = (8, 12, 16)
    token_dim: int = 64
    attn_heads: int = 2
    ffn_dim: int = 128
    state_dim: int = 8
    horizon: int = 5
    asym_window: int = 5
    asym_upweight: float = 0.5
    use_vmr: bool = True
    use_asym: bool = True
    freeze_encoder: bool = False
    dtype: str = "float32"
    init_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = dict(d)
        if "encoder_channels" in kwargs:
            kwargs["encoder_channels"] = tuple(kwargs["encoder_channels"])
        return cls(**kwargs)


@dataclass
class SubjectDiagnostics:
    asym_score: float
    tracks: list[LongitudinalAsymmetry]
    steps_used: int


class RiskModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        dtype = np.dtype(config.dtype)
        self.dtype = dtype
        rng = np.random.default_rng(config.init_seed)
        feat_c = config.encoder_channels[-1]
        feat_hw = config.image_size // 8
        self.encoder = ViewEncoder(rng, config.image_size,
                                   config.encoder_channels, dtype)
        self.fusion = ViewFusion(rng, feat_c, config.token_dim,
                                 config.attn_heads, config.ffn_dim, dtype)
        self.block = VmrnnBlock(rng, feat_c, feat_hw, feat_hw,
                                config.state_dim, config.token_dim, dtype)
        self.head = HazardHead(rng, 2 * feat_c + 1, config.horizon, dtype)
        if config.freeze_encoder:
            # the tape skips non-grad leaves entirely, so the encoder runs as a
            # fixed feature extractor; checkpoints still carry its weights
            for p in self.encoder.named_params("enc/").values():
                p.requires_grad = False

    # -- parameters -----------------------------------------------------------

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.encoder.named_params("enc/"))
        out.update(self.fusion.named_params("fus/"))
        out.update(self.block.named_params("rnn/"))
        out.update(self.head.named_params("head/"))
        return out

    def trainable_params(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.named_params().items() if p.requires_grad}

    def save(self, ckpt_dir, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        cfg = asdict(self.config)
        cfg["encoder_channels"] = list(cfg["encoder_channels"])
        meta["model_config"] = cfg
        save_checkpoint(ckpt_dir,
                        {k: v.data for k, v in self.named_params().items()},
                        meta)

    @classmethod
    def load(cls, ckpt_dir) -> tuple["RiskModel", dict]:
        params, meta = load_checkpoint(ckpt_dir)
        model = cls(ModelConfig.from_dict(meta["model_config"]))
        own = model.named_params()
        if set(own) != set(params):
            missing = set(own) ^ set(params)
            raise ValueError(f"checkpoint parameter set mismatch: {missing}")
        for name, tensor in own.items():
            arr = params[name].astype(model.dtype, copy=False)
            if arr.shape != tensor.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {tensor.shape}")
            tensor.data = np.ascontiguousarray(arr)
        return model, meta

    # -- forward --------------------------------------------------------------

    def forward_subject(self, subject: SubjectData,
                        ) -> tuple[RiskOutput, SubjectDiagnostics]:
        cfg = self.config
        state = self.block.init_state()
        carry = self.block.init_carry()
        prev_age: float | None = None
        pair_maps: dict[tuple[str, str], dict[int, tuple]] = \
            {pair: {} for pair in VIEW_PAIRS}
        steps_used = 0

        for step in subject.steps:
            if not step.present:
                continue
            present = [step.views[v] is not None for v in VIEWS]
            imgs = np.stack([step.views[v] for v in VIEWS
                             if step.views[v] is not None])
            imgs_t = Tensor(imgs[:, None, :, :].astype(self.dtype))
            feats = self.encoder.forward(imgs_t)

            if cfg.use_asym:
                maps = {v: feats.data[i] for i, v in enumerate(
                    v for v in VIEWS if step.views[v] is not None)}
                for pair in VIEW_PAIRS:
                    left, right = pair
                    if left in maps and right in maps:
                        pair_maps[pair][step.t] = (maps[left], maps[right])

            if cfg.use_vmr:
                token = self.fusion.forward(feats, present)
                delta_t = 0.0 if prev_age is None else step.age_years - prev_age
                x = self.block.fuse_input(token, carry, delta_t,
                                          float(np.mean(present)))
                carry, state = self.block.step(x, state)
            prev_age = step.age_years
            steps_used += 1

        if cfg.use_asym:
            asym_score, tracks = subject_asymmetry(pair_maps, cfg.asym_window,
                                                   cfg.asym_upweight)
        else:
            asym_score, tracks = 0.0, []

        if cfg.use_vmr:
            pooled = pool_hidden(state)
        else:
            pooled = Tensor(np.zeros(2 * cfg.encoder_channels[-1],
                                     dtype=self.dtype))
        features = pool_risk_features(pooled, asym_score, cfg.use_asym)
        output = self.head.forward(features)
        return output, SubjectDiagnostics(asym_score=asym_score, tracks=tracks,
                                          steps_used=steps_used)
