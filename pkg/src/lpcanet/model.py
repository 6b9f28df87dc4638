"""The LPCANet architecture.

Dual-stream RGB-D segmentation: an inverted-residual RGB backbone and a
lightweight depth pyramid produce four spatially-aligned feature maps at
strides 4/8/16/32; each stage is fused by multi-head cross-attention
(queries from RGB, keys/values from depth), refined by a spatial feature
extractor built from 1x3/3x1 convolutions, progressively downsampled and
decoded back to a full-resolution probability mask via pixel shuffle.

Everything is assembled from a single :class:`ModelConfig`, so the ablation
variants (no cross-attention, no/partial spatial extractor, alternative
upsamplers, wider depth pyramid) are pure config toggles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    DepthwiseConv2d,
    Linear,
    Pool2d,
    pixel_shuffle,
    upsample_bilinear,
    upsample_nearest,
)
from .tensor import ShapeError, Tensor

__all__ = [
    "ModelConfig",
    "Module",
    "LPCANet",
    "make_config",
    "build_model",
    "ablation_variant",
    "count_params_flops",
    "UPSAMPLE_MODES",
]

UPSAMPLE_MODES = ("pixel_shuffle", "staged_ps", "nearest", "bilinear", "transposed_conv", "patch_expand")

# total stride of the fused map entering the decoder: stage 4 (x32) downsampled once more
DECODER_STRIDE = 64


@dataclass(frozen=True)
class ModelConfig:
    input_hw: tuple[int, int] = (64, 64)
    rgb_stage_channels: tuple[int, int, int, int] = (8, 16, 32, 64)
    depth_stage_channels: tuple[int, int, int, int] = (8, 16, 32, 64)
    cam_channels: tuple[int, int, int, int] = (8, 16, 32, 64)
    num_heads: int = 4
    sfe_stage_mask: tuple[bool, bool, bool, bool] = (True, True, True, False)
    use_cam: bool = True
    upsample_mode: str = "pixel_shuffle"
    pool_kind: str = "max"
    width_preset: str = "tiny"
    stem_channels: int = 4
    expansion: int = 2
    blocks_per_stage: int = 1

    def validate(self) -> None:
        h, w = self.input_hw
        if h % DECODER_STRIDE or w % DECODER_STRIDE:
            raise ValueError(f"input {h}x{w} must be divisible by {DECODER_STRIDE}")
        if self.num_heads < 1:
            raise ValueError("num_heads must be positive")
        for c in self.cam_channels:
            if c % self.num_heads:
                raise ValueError(f"cam channels {c} not divisible by num_heads {self.num_heads}")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ValueError(f"unknown upsample_mode {self.upsample_mode!r}; choose from {UPSAMPLE_MODES}")
        if self.pool_kind not in ("max", "avg"):
            raise ValueError(f"unknown pool_kind {self.pool_kind!r}")

    def head_dim(self, stage: int) -> int:
        return self.cam_channels[stage] // self.num_heads

    def stage_hw(self, stage: int) -> tuple[int, int]:
        h, w = self.input_hw
        s = 2 ** (stage + 2)
        return h // s, w // s


def make_config(preset: str = "tiny", **overrides) -> ModelConfig:
    """Named width presets; keyword overrides win."""
    if preset == "paper":
        cfg = ModelConfig(
            input_hw=(320, 320),
            rgb_stage_channels=(24, 32, 96, 320),
            depth_stage_channels=(64, 128, 256, 512),
            cam_channels=(64, 128, 256, 512),
            width_preset="paper",
            stem_channels=16,
            expansion=6,
            blocks_per_stage=2,
        )
    elif preset == "tiny":
        cfg = ModelConfig()
    else:
        raise ValueError(f"unknown preset {preset!r}")
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def ablation_variant(config: ModelConfig, toggle: str, value=None) -> ModelConfig:
    """Config toggles for the ablation suite."""
    if toggle == "no_cam":
        out = replace(config, use_cam=False)
    elif toggle == "no_sfe":
        out = replace(config, sfe_stage_mask=(False, False, False, False))
    elif toggle == "sfe_stage_mask":
        out = replace(config, sfe_stage_mask=tuple(bool(v) for v in value))
    elif toggle == "lpm_width":
        widths = tuple(int(value) * (2**i) for i in range(4))
        out = replace(config, depth_stage_channels=widths, cam_channels=widths)
    elif toggle == "upsample_mode":
        out = replace(config, upsample_mode=str(value))
    else:
        raise ValueError(f"unknown ablation toggle {toggle!r}")
    out.validate()
    return out


# -- module plumbing ----------------------------------------------------------


class Module:
    """Minimal container: child layers/modules register on attribute set."""

    def __init__(self):
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Module) or hasattr(value, "parameters"):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, child in self._children.items():
            key = f"{prefix}{name}"
            if isinstance(child, Module):
                out.update(child.named_parameters(f"{key}."))
            else:
                for pname, p in child.parameters().items():
                    out[f"{key}.{pname}"] = p
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, child in self._children.items():
            key = f"{prefix}{name}"
            if isinstance(child, Module):
                out.update(child.named_buffers(f"{key}."))
            elif hasattr(child, "buffers"):
                for bname, b in child.buffers().items():
                    out[f"{key}.{bname}"] = b
        return out

    def set_training(self, flag: bool) -> None:
        for child in self._children.values():
            if isinstance(child, Module):
                child.set_training(flag)
            elif isinstance(child, BatchNorm2d):
                child.training = flag

    def train(self) -> None:
        self.set_training(True)

    def eval(self) -> None:
        self.set_training(False)

    def init(self, rng: np.random.Generator) -> None:
        # deterministic order: registration order, depth first
        for child in self._children.values():
            if hasattr(child, "init"):
                child.init(rng)

    def param_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def zero_grads(self) -> None:
        for p in self.named_parameters().values():
            p.zero_grad()


class ConvBNReLU(Module):
    def __init__(self, cin, cout, kernel, stride=1, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(cin, cout, kernel, stride, bias=False, dtype=dtype)
        self.bn = BatchNorm2d(cout, dtype=dtype)

    def forward(self, x):
        return T.relu(self.bn(self.conv(x)))

    __call__ = forward


class InvertedResidual(Module):
    """expand 1x1 -> depthwise 3x3 -> project 1x1, skip when shape-preserving."""

    def __init__(self, cin, cout, stride, expansion, dtype=np.float32):
        super().__init__()
        mid = cin * expansion
        self.use_skip = stride == 1 and cin == cout
        self.expand = ConvBNReLU(cin, mid, 1, dtype=dtype) if expansion > 1 else None
        self.depthwise = DepthwiseConv2d(mid, 3, stride, bias=False, dtype=dtype)
        self.dw_bn = BatchNorm2d(mid, dtype=dtype)
        self.project = Conv2d(mid, cout, 1, bias=False, dtype=dtype)
        self.proj_bn = BatchNorm2d(cout, dtype=dtype)

    def forward(self, x):
        h = self.expand(x) if self.expand is not None else x
        h = T.relu(self.dw_bn(self.depthwise(h)))
        h = self.proj_bn(self.project(h))
        if self.use_skip:
            h = T.add(h, x)
        return h

    __call__ = forward


class Backbone(Module):
    """Inverted-residual RGB pyramid: stages at strides 4, 8, 16, 32."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        super().__init__()
        self.stem = ConvBNReLU(3, cfg.stem_channels, 3, stride=2, dtype=dtype)
        cin = cfg.stem_channels
        self.stages = []
        for i, cout in enumerate(cfg.rgb_stage_channels):
            blocks = Module()
            blocks.b0 = InvertedResidual(cin, cout, 2, cfg.expansion, dtype=dtype)
            for j in range(1, cfg.blocks_per_stage):
                setattr(blocks, f"b{j}", InvertedResidual(cout, cout, 1, cfg.expansion, dtype=dtype))
            setattr(self, f"stage{i + 1}", blocks)
            self.stages.append(blocks)
            cin = cout

    def forward(self, rgb: Tensor) -> list[Tensor]:
        x = self.stem(rgb)
        feats = []
        for stage in self.stages:
            for block in stage._children.values():
                x = block(x)
            feats.append(x)
        return feats

    __call__ = forward


class DepthPyramid(Module):
    """Depth-stream encoder: 4x4/s4 projection, then pooled conv stages."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        super().__init__()
        ch = cfg.depth_stage_channels
        self.proj = Conv2d(1, ch[0], 4, stride=4, dtype=dtype)
        self.stage1a = ConvBNReLU(ch[0], ch[0], 3, dtype=dtype)
        self.stage1b = ConvBNReLU(ch[0], ch[0], 3, dtype=dtype)
        self.pools = []
        self.stages = []
        for i in range(1, 4):
            pool = Pool2d(cfg.pool_kind, 2, 2)
            a = ConvBNReLU(ch[i - 1], ch[i], 3, dtype=dtype)
            b = ConvBNReLU(ch[i], ch[i], 3, dtype=dtype)
            setattr(self, f"pool{i + 1}", pool)
            setattr(self, f"stage{i + 1}a", a)
            setattr(self, f"stage{i + 1}b", b)
            self.pools.append(pool)
            self.stages.append((a, b))

    def forward(self, depth: Tensor) -> list[Tensor]:
        x = self.stage1b(self.stage1a(self.proj(depth)))
        feats = [x]
        for pool, (a, b) in zip(self.pools, self.stages):
            x = b(a(pool(x)))
            feats.append(x)
        return feats

    __call__ = forward


class CrossAttention(Module):
    """Multi-head attention with queries from RGB features and keys/values
    from depth features at the same resolution."""

    def __init__(self, c_rgb, c_depth, c_out, num_heads, dtype=np.float32):
        super().__init__()
        if c_out % num_heads:
            raise ValueError(f"output channels {c_out} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = c_out // num_heads
        self.q_proj = Linear(c_rgb, c_out, dtype=dtype)
        self.k_proj = Linear(c_depth, c_out, dtype=dtype)
        self.v_proj = Linear(c_depth, c_out, dtype=dtype)
        self.out_proj = Linear(c_out, c_out, dtype=dtype)

    @staticmethod
    def _to_tokens(x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        return T.transpose(T.reshape(x, (n, c, h * w)), (0, 2, 1))

    def _split_heads(self, x: Tensor) -> Tensor:
        n, l, c = x.shape
        x = T.reshape(x, (n, l, self.num_heads, self.head_dim))
        x = T.transpose(x, (0, 2, 1, 3))
        return T.reshape(x, (n * self.num_heads, l, self.head_dim))

    def forward(self, f_rgb: Tensor, f_depth: Tensor, return_attn: bool = False):
        if f_rgb.shape[2:] != f_depth.shape[2:] or f_rgb.shape[0] != f_depth.shape[0]:
            raise ShapeError(f"cross-attention: spatial/batch mismatch {f_rgb.shape} vs {f_depth.shape}")
        n, _, h, w = f_rgb.shape
        l = h * w
        q = self._split_heads(self.q_proj(self._to_tokens(f_rgb)))
        tokens_d = self._to_tokens(f_depth)
        k = self._split_heads(self.k_proj(tokens_d))
        v = self._split_heads(self.v_proj(tokens_d))
        scores = T.scale(T.matmul_batched(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(self.head_dim))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul_batched(attn, v)
        ctx = T.reshape(ctx, (n, self.num_heads, l, self.head_dim))
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (n, l, self.num_heads * self.head_dim))
        out = self.out_proj(ctx)
        out = T.reshape(T.transpose(out, (0, 2, 1)), (n, self.num_heads * self.head_dim, h, w))
        if return_attn:
            return out, attn
        return out

    __call__ = forward


class ConcatFusion(Module):
    """Attention-free fusion used by the no-CAM ablation: concat + 1x1 conv."""

    def __init__(self, c_rgb, c_depth, c_out, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(c_rgb + c_depth, c_out, 1, dtype=dtype)

    def forward(self, f_rgb: Tensor, f_depth: Tensor) -> Tensor:
        return self.conv(T.concat_channels(f_rgb, f_depth))

    __call__ = forward


class SpatialFeatureExtractor(Module):
    """1x1 bottleneck, parallel 1x3 / 3x1 branches summed, 1x1 output.

    Pipeline: relu(bn(conv1x1(x))); x-branch conv1x3(bn(.)), y-branch
    conv3x1(bn(.)); conv1x1(bn(relu(sum))).  Spatial size is preserved.
    """

    def __init__(self, channels, dtype=np.float32):
        super().__init__()
        self.conv_in = Conv2d(channels, channels, 1, dtype=dtype)
        self.bn_in = BatchNorm2d(channels, dtype=dtype)
        self.bn_x = BatchNorm2d(channels, dtype=dtype)
        self.conv_x = Conv2d(channels, channels, (1, 3), dtype=dtype)
        self.bn_y = BatchNorm2d(channels, dtype=dtype)
        self.conv_y = Conv2d(channels, channels, (3, 1), dtype=dtype)
        self.bn_out = BatchNorm2d(channels, dtype=dtype)
        self.conv_out = Conv2d(channels, channels, 1, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        f_in = T.relu(self.bn_in(self.conv_in(x)))
        f_x = self.conv_x(self.bn_x(f_in))
        f_y = self.conv_y(self.bn_y(f_in))
        return self.conv_out(self.bn_out(T.relu(T.add(f_x, f_y))))

    __call__ = forward


class Decoder(Module):
    """Maps the stride-64 fused map to a (N,1,H,W) logit map.

    The default route is bn -> relu -> 1x1 conv to r^2 channels -> one pixel
    shuffle with r = 64.  Alternative modes swap the resolution-restoration
    step; all stay differentiable.
    """

    def __init__(self, cin, mode, r, dtype=np.float32):
        super().__init__()
        self.mode = mode
        self.r = r
        self.bn = BatchNorm2d(cin, dtype=dtype)
        if mode == "pixel_shuffle":
            self.head = Conv2d(cin, r * r, 1, dtype=dtype)
        elif mode == "staged_ps":
            if r != 64:
                raise ValueError("staged_ps expects total factor 64")
            self.s1 = Conv2d(cin, 64 * 16, 1, dtype=dtype)
            self.c1 = Conv2d(64, 64, 3, dtype=dtype)
            self.s2 = Conv2d(64, 16 * 16, 1, dtype=dtype)
            self.c2 = Conv2d(16, 16, 3, dtype=dtype)
            self.s3 = Conv2d(16, 16, 1, dtype=dtype)
        elif mode in ("nearest", "bilinear"):
            self.head = Conv2d(cin, 1, 1, dtype=dtype)
        elif mode == "transposed_conv":
            steps = int(math.log2(r))
            if 2**steps != r:
                raise ValueError("transposed_conv decoder needs a power-of-two factor")
            chans = [cin] + [max(2 ** (steps - 1 - i), 1) * 4 for i in range(steps - 1)] + [1]
            self.ups = []
            for i in range(steps):
                up = ConvTranspose2d(chans[i], chans[i + 1], 4, 2, 1, dtype=dtype)
                setattr(self, f"up{i}", up)
                self.ups.append(up)
        elif mode == "patch_expand":
            steps = int(math.log2(r))
            self.expands = []
            c = cin
            for i in range(steps):
                nxt = max(c // 2, 1)
                conv = Conv2d(c, nxt * 4, 1, dtype=dtype)
                setattr(self, f"expand{i}", conv)
                self.expands.append(conv)
                c = nxt
            self.head = Conv2d(c, 1, 1, dtype=dtype)
        else:
            raise ValueError(f"unknown decoder mode {mode!r}")

    def forward(self, x: Tensor) -> Tensor:
        x = T.relu(self.bn(x))
        if self.mode == "pixel_shuffle":
            return pixel_shuffle(self.head(x), self.r)
        if self.mode == "staged_ps":
            x = T.relu(self.c1(pixel_shuffle(self.s1(x), 4)))
            x = T.relu(self.c2(pixel_shuffle(self.s2(x), 4)))
            return pixel_shuffle(self.s3(x), 4)
        if self.mode == "nearest":
            return upsample_nearest(self.head(x), self.r)
        if self.mode == "bilinear":
            return upsample_bilinear(self.head(x), self.r)
        if self.mode == "transposed_conv":
            for i, up in enumerate(self.ups):
                x = up(x)
                if i < len(self.ups) - 1:
                    x = T.relu(x)
            return x
        # patch_expand
        for conv in self.expands:
            x = pixel_shuffle(conv(x), 2)
        return self.head(x)

    __call__ = forward


class LPCANet(Module):
    """Full dual-stream network; forward maps (rgb, depth) to probabilities."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        self.dtype = dtype
        cr, cd, cc = config.rgb_stage_channels, config.depth_stage_channels, config.cam_channels
        self.backbone = Backbone(config, dtype=dtype)
        self.depth_pyramid = DepthPyramid(config, dtype=dtype)
        self.fusers = []
        for i in range(4):
            if config.use_cam:
                f = CrossAttention(cr[i], cd[i], cc[i], config.num_heads, dtype=dtype)
            else:
                f = ConcatFusion(cr[i], cd[i], cc[i], dtype=dtype)
            setattr(self, f"fuse{i + 1}", f)
            self.fusers.append(f)
        self.sfes: list[SpatialFeatureExtractor | None] = []
        self.merges: list[Conv2d | None] = []
        for i in range(4):
            if config.sfe_stage_mask[i]:
                sfe = SpatialFeatureExtractor(cc[i], dtype=dtype)
                merge = Conv2d(2 * cc[i], cc[i], 1, dtype=dtype)
                setattr(self, f"sfe{i + 1}", sfe)
                setattr(self, f"merge{i + 1}", merge)
            else:
                sfe = merge = None
            self.sfes.append(sfe)
            self.merges.append(merge)
        self.downs = []
        self.matches = []
        for i in range(1, 4):
            down = Conv2d(cc[i - 1], cc[i - 1], 4, stride=2, dtype=dtype)
            match = Conv2d(cc[i - 1], cc[i], 1, dtype=dtype)
            setattr(self, f"down{i + 1}", down)
            setattr(self, f"match{i + 1}", match)
            self.downs.append(down)
            self.matches.append(match)
        self.final_down = Conv2d(cc[3], cc[3], 4, stride=2, dtype=dtype)
        h, w = config.input_hw
        h4, _ = config.stage_hw(3)
        r = h // (h4 // 2)
        if (h4 // 2) * r != h:
            raise ValueError("decoder upscale factor is not an integer for this input size")
        self.decoder = Decoder(cc[3], config.upsample_mode, r, dtype=dtype)

    def initialize(self, seed: int) -> None:
        self.init(np.random.default_rng(seed))

    def forward_features(self, rgb: Tensor, depth: Tensor):
        """Stage-wise features: lists of (F_rgb, F_depth, F_fused, F_refined)."""
        self._check_inputs(rgb, depth)
        feats_r = self.backbone(rgb)
        feats_d = self.depth_pyramid(depth)
        stages = []
        for i in range(4):
            fr, fd = feats_r[i], feats_d[i]
            if fr.shape[2:] != fd.shape[2:]:
                raise ShapeError(f"stage {i + 1}: rgb {fr.shape} vs depth {fd.shape} spatial mismatch")
            fused = self.fusers[i](fr, fd)
            refined = self.sfes[i](fused) if self.sfes[i] is not None else None
            stages.append((fr, fd, fused, refined))
        return stages

    def forward(self, rgb: Tensor, depth: Tensor) -> Tensor:
        stages = self.forward_features(rgb, depth)
        carry = None
        for i, (_, _, fused, refined) in enumerate(stages):
            if refined is not None:
                merged = self.merges[i](T.concat_channels(fused, refined))
            else:
                merged = fused
            if carry is None:
                carry = merged
            else:
                carry = T.add(merged, self.matches[i - 1](self.downs[i - 1](carry)))
        f_down = self.final_down(carry)
        return T.sigmoid(self.decoder(f_down))

    __call__ = forward

    def _check_inputs(self, rgb: Tensor, depth: Tensor) -> None:
        h, w = self.config.input_hw
        if rgb.data.ndim != 4 or rgb.shape[1:] != (3, h, w):
            raise ShapeError(f"rgb input must be (N,3,{h},{w}), got {rgb.shape}")
        if depth.data.ndim != 4 or depth.shape[1:] != (1, h, w):
            raise ShapeError(f"depth input must be (N,1,{h},{w}), got {depth.shape}")
        if rgb.shape[0] != depth.shape[0]:
            raise ShapeError("rgb/depth batch sizes differ")

    # -- persistence ----------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters().items()}
        out.update(self.named_buffers())
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own_params = self.named_parameters()
        own_bufs = self.named_buffers()
        own = set(own_params) | set(own_bufs)
        theirs = set(state)
        if own != theirs:
            missing = sorted(own - theirs)
            extra = sorted(theirs - own)
            raise ValueError(f"state name mismatch; missing={missing} unexpected={extra}")
        for name, p in own_params.items():
            arr = state[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)
        for name, b in own_bufs.items():
            arr = state[name]
            if arr.shape != b.shape:
                raise ValueError(f"shape mismatch for buffer {name}: {arr.shape} vs {b.shape}")
            b[...] = arr


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> LPCANet:
    model = LPCANet(config, dtype=dtype)
    model.initialize(seed)
    return model


def count_params_flops(config: ModelConfig, seed: int = 0) -> tuple[int, int]:
    """Exact parameter count and one-image forward multiply-accumulate count."""
    model = build_model(config, seed=seed)
    model.eval()
    h, w = config.input_hw
    rgb = Tensor(np.zeros((1, 3, h, w), dtype=np.float32))
    depth = Tensor(np.zeros((1, 1, h, w), dtype=np.float32))
    with T.no_grad(), T.count_mult_adds() as counter:
        model(rgb, depth)
    return model.param_count(), counter[0]
