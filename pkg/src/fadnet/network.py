"""Two-stage disparity network: RB-NetC, RB-NetS and their residual stack.

Both stages share one encoder-decoder skeleton.  The encoder is a chain of
Dual-ResBlocks, each halving resolution, followed by stride-1 residual
blocks at 1/64 when ``encoder_stages`` exceeds the six downsampling steps.
The decoder walks from 1/64 back to full resolution; at every scale it fuses
learned upsampled features, the bilinearly upsampled coarser prediction and
the encoder skip feature, and emits one disparity map.

RB-NetC runs a shared-weight twin encoder up to ``correlation_after_stage``
and merges the streams with a point-wise correlation cost volume.  RB-NetS
sees the images, the right image warped into the left view and the first
stage's full-resolution disparity, and predicts per-scale residuals.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .nn import Conv2d, ConvTranspose2d, Module, Parameter
from .stereo_ops import CorrelationConfig, pointwise_correlation, warp_by_disparity
from .tensor import Tensor

NUM_SCALES = 7
# Residual branches start small so activations do not double in every block;
# prediction heads start near zero so the untrained net predicts small disparities.
RESIDUAL_INIT_GAIN = 0.1
HEAD_INIT_GAIN = 0.1
# First-stage heads end in a ReLU; a positive starting bias keeps them from dying.
RECTIFIED_HEAD_BIAS = 1.0
REFINEMENT_INPUTS = ("left", "right", "warped_left", "initial_disparity", "reconstruction_error")
_INPUT_CHANNELS = {"left": 3, "right": 3, "warped_left": 3, "initial_disparity": 1, "reconstruction_error": 3}


@dataclass(frozen=True)
class NetworkConfig:
    encoder_stages: int = 7
    base_channels: int = 32
    channel_growth: float = 2.0
    max_channels: int = 512
    correlation_after_stage: int = 3
    corr: CorrelationConfig = field(default_factory=CorrelationConfig)
    refinement_inputs: tuple = ("left", "right", "warped_left", "initial_disparity")
    scales: int = NUM_SCALES
    share_encoder_weights: bool = True
    share_correlation_weights: bool = True
    negative_slope: float = 0.1
    init_seed: int = 0

    def __post_init__(self):
        if self.scales != NUM_SCALES:
            raise ConfigError(f"scales is fixed at {NUM_SCALES}, got {self.scales}")
        if self.encoder_stages < self.scales - 1:
            raise ConfigError(f"encoder_stages must be >= {self.scales - 1}, got {self.encoder_stages}")
        if not 1 <= self.correlation_after_stage < self.encoder_stages:
            raise ConfigError(
                f"correlation_after_stage must lie in [1, {self.encoder_stages - 1}], got {self.correlation_after_stage}"
            )
        if self.correlation_after_stage > self.scales - 1:
            raise ConfigError("correlation must happen at or above the coarsest scale")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        unknown = set(self.refinement_inputs) - set(REFINEMENT_INPUTS)
        if unknown:
            raise ConfigError(f"unknown refinement_inputs {sorted(unknown)}; allowed: {REFINEMENT_INPUTS}")
        if not self.refinement_inputs:
            raise ConfigError("refinement_inputs must not be empty")

    def stage_channels(self, stage):
        """Output channels of encoder stage ``stage`` (1-based)."""
        level = min(stage, self.scales - 1) - 1
        return int(min(self.max_channels, round(self.base_channels * self.channel_growth**level)))

    @property
    def required_multiple(self):
        return 2 ** (self.scales - 1)

    def to_dict(self):
        d = asdict(self)
        d["refinement_inputs"] = list(self.refinement_inputs)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        corr = d.pop("corr", {})
        if "refinement_inputs" in d:
            d["refinement_inputs"] = tuple(d["refinement_inputs"])
        return cls(corr=CorrelationConfig(**corr), **d)


@dataclass
class MultiScaleOutput:
    """Seven (N, 1, H / 2^s, W / 2^s) maps, finest first."""

    maps: list

    def __post_init__(self):
        if len(self.maps) != NUM_SCALES:
            raise DimensionError(f"expected {NUM_SCALES} scale maps, got {len(self.maps)}")
        for s in range(1, NUM_SCALES):
            prev, cur = self.maps[s - 1].shape, self.maps[s].shape
            if cur[2] * 2 != prev[2] or cur[3] * 2 != prev[3]:
                raise DimensionError(f"scale {s} map {cur[2:]} is not half of scale {s - 1} map {prev[2:]}")

    def __getitem__(self, s):
        return self.maps[s]

    def __len__(self):
        return len(self.maps)

    def __iter__(self):
        return iter(self.maps)

    def shapes(self):
        return [m.shape[2:] for m in self.maps]


def check_input_dims(height, width, multiple=2 ** (NUM_SCALES - 1)):
    if height % multiple or width % multiple:
        raise DimensionError(
            f"input height and width must be multiples of {multiple}, got {height}x{width}"
        )


def _require_even(x, what):
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"{what}: spatial dims must be even, got {x.shape[2]}x{x.shape[3]}")


class ResBlock(Module):
    """act(conv(act(conv(x))) + shortcut(x)), projecting the shortcut when shape changes."""

    def __init__(self, in_channels, out_channels, stride=1, negative_slope=0.1, rng=None):
        super().__init__()
        self.slope = negative_slope
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride=stride, rng=rng)
        self.conv2 = Conv2d(out_channels, out_channels, 3, stride=1, rng=rng, init_gain=RESIDUAL_INIT_GAIN)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Conv2d(in_channels, out_channels, 1, stride=stride, padding=0, rng=rng)
        else:
            self.shortcut = None

    def forward(self, x):
        y = ops.leaky_relu(self.conv1(x), self.slope)
        y = self.conv2(y)
        skip = x if self.shortcut is None else self.shortcut(x)
        return ops.leaky_relu(y + skip, self.slope)


class DualConv(Module):
    """Stride-1 convolution then stride-2 convolution: halves resolution."""

    def __init__(self, in_channels, out_channels, negative_slope=0.1, rng=None):
        super().__init__()
        self.slope = negative_slope
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride=1, rng=rng)
        self.conv2 = Conv2d(out_channels, out_channels, 3, stride=2, rng=rng)

    def forward(self, x):
        _require_even(x, "dual_conv")
        x = ops.leaky_relu(self.conv1(x), self.slope)
        return ops.leaky_relu(self.conv2(x), self.slope)


class DualResBlock(Module):
    """DualConv with each convolution replaced by a residual block."""

    def __init__(self, in_channels, out_channels, negative_slope=0.1, rng=None):
        super().__init__()
        self.block1 = ResBlock(in_channels, out_channels, 1, negative_slope, rng)
        self.block2 = ResBlock(out_channels, out_channels, 2, negative_slope, rng)

    def forward(self, x):
        _require_even(x, "dual_resblock")
        return self.block2(self.block1(x))


def dual_conv(x, params):
    return params(x)


def dual_resblock(x, params):
    return params(x)


class Decoder(Module):
    """Coarse-to-fine decoder producing one single-channel map per scale."""

    def __init__(self, cfg, bottleneck_channels, skip_channels, rng, head_bias=0.0):
        super().__init__()
        self.slope = cfg.negative_slope
        self.num_scales = cfg.scales
        top = cfg.scales - 1
        self.predict6 = Conv2d(bottleneck_channels, 1, 3, rng=rng, init_gain=HEAD_INIT_GAIN)
        prev = bottleneck_channels
        self.upconvs = []
        self.iconvs = []
        self.predicts = []
        for s in range(top - 1, -1, -1):
            width = cfg.stage_channels(max(s, 1))
            up = ConvTranspose2d(prev, width, rng=rng)
            iconv = Conv2d(width + 1 + skip_channels[s], width, 3, rng=rng)
            pred = Conv2d(width, 1, 3, rng=rng, init_gain=HEAD_INIT_GAIN)
            setattr(self, f"upconv{s}", up)
            setattr(self, f"iconv{s}", iconv)
            setattr(self, f"predict{s}", pred)
            self.upconvs.append(up)
            self.iconvs.append(iconv)
            self.predicts.append(pred)
            prev = width
        for head in self.prediction_heads():
            head.bias.data[...] = head_bias

    def prediction_heads(self):
        return [self.predict6] + self.predicts

    def forward(self, bottleneck, skips, activation):
        """Return maps finest-first; ``activation`` is applied to every prediction."""
        top = self.num_scales - 1
        pred = activation(self.predict6(bottleneck))
        preds = {top: pred}
        feat = bottleneck
        for i, s in enumerate(range(top - 1, -1, -1)):
            up = ops.leaky_relu(self.upconvs[i](feat), self.slope)
            up_pred = ops.bilinear_upsample2x(pred) * 2.0
            feat = ops.leaky_relu(self.iconvs[i](ops.concat_channels([up, up_pred, skips[s]])), self.slope)
            pred = activation(self.predicts[i](feat))
            preds[s] = pred
        return [preds[s] for s in range(self.num_scales)]


def _build_encoder(module, cfg, first_stage, last_stage, in_channels, rng, prefix="enc"):
    stages = []
    for stage in range(first_stage, last_stage + 1):
        out_channels = cfg.stage_channels(stage)
        if stage <= cfg.scales - 1:
            block = DualResBlock(in_channels, out_channels, cfg.negative_slope, rng)
        else:
            block = ResBlock(in_channels, out_channels, 1, cfg.negative_slope, rng)
        setattr(module, f"{prefix}{stage}", block)
        stages.append(block)
        in_channels = out_channels
    return stages


def _identity(x):
    return x


class RBNetC(Module):
    def __init__(self, cfg, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(cfg.init_seed)
        self.cfg = cfg
        ca = cfg.correlation_after_stage
        self.left_stages = _build_encoder(self, cfg, 1, ca, 3, rng, "enc")
        if cfg.share_encoder_weights:
            self.right_stages = self.left_stages
        else:
            self.right_stages = _build_encoder(self, cfg, 1, ca, 3, rng, "enc_right")
        feat_c = cfg.stage_channels(ca)
        self.corr_conv = Conv2d(feat_c, feat_c, 3, rng=rng)
        if not cfg.share_correlation_weights:
            self.corr_conv_right = Conv2d(feat_c, feat_c, 3, rng=rng)
        redir = max(1, feat_c // 2)
        self.redir = Conv2d(feat_c, redir, 1, padding=0, rng=rng)
        fused = len(cfg.corr.shifts) + redir
        self.post_stages = _build_encoder(self, cfg, ca + 1, cfg.encoder_stages, fused, rng, "enc")
        skip_channels = [3] + [cfg.stage_channels(s) for s in range(1, cfg.scales)]
        self.decoder = Decoder(cfg, cfg.stage_channels(cfg.encoder_stages), skip_channels, rng, RECTIFIED_HEAD_BIAS)

    def _twin(self, left, right):
        ca = self.cfg.correlation_after_stage
        skips = [left]
        if self.cfg.share_encoder_weights:
            n = left.shape[0]
            x = ops.concat_batch([left, right])
            for stage in self.left_stages:
                x = stage(x)
                skips.append(ops.batch_slice(x, 0, n))
            return skips, skips[ca], ops.batch_slice(x, n, 2 * n)
        fl, fr = left, right
        for ls, rs in zip(self.left_stages, self.right_stages):
            fl, fr = ls(fl), rs(fr)
            skips.append(fl)
        return skips, fl, fr

    def features(self, left, right):
        """Pre-correlation feature maps of both streams."""
        _, fl, fr = self._twin(left, right)
        return fl, fr

    def cost_volume(self, fl, fr):
        w2 = b2 = None
        if not self.cfg.share_correlation_weights:
            w2, b2 = self.corr_conv_right.weight, self.corr_conv_right.bias
        return pointwise_correlation(fl, fr, self.corr_conv.weight, self.corr_conv.bias, self.cfg.corr, w2, b2)

    def forward(self, left, right):
        if left.shape != right.shape:
            raise DimensionError(f"left {left.shape} and right {right.shape} differ")
        check_input_dims(left.shape[2], left.shape[3], self.cfg.required_multiple)
        skips, fl, fr = self._twin(left, right)
        cost = ops.leaky_relu(self.cost_volume(fl, fr).volume, self.cfg.negative_slope)
        x = ops.concat_channels([cost, self.redir(fl)])
        for stage in self.post_stages:
            x = stage(x)
            if len(skips) < self.cfg.scales:
                skips.append(x)
        return MultiScaleOutput(self.decoder(x, skips, ops.relu))


class RBNetS(Module):
    def __init__(self, cfg, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(cfg.init_seed + 1)
        self.cfg = cfg
        in_channels = sum(_INPUT_CHANNELS[name] for name in cfg.refinement_inputs)
        self.stages = _build_encoder(self, cfg, 1, cfg.encoder_stages, in_channels, rng, "enc")
        skip_channels = [in_channels] + [cfg.stage_channels(s) for s in range(1, cfg.scales)]
        self.decoder = Decoder(cfg, cfg.stage_channels(cfg.encoder_stages), skip_channels, rng)

    def assemble_inputs(self, left, right, warped_left, initial_disparity):
        parts = {
            "left": left,
            "right": right,
            "warped_left": warped_left,
            "initial_disparity": initial_disparity,
        }
        if "reconstruction_error" in self.cfg.refinement_inputs:
            parts["reconstruction_error"] = ops.absdiff(left, warped_left)
        return ops.concat_channels([parts[name] for name in self.cfg.refinement_inputs])

    def forward(self, left, right, warped_left, c_list):
        check_input_dims(left.shape[2], left.shape[3], self.cfg.required_multiple)
        x = self.assemble_inputs(left, right, warped_left, c_list[0])
        skips = [x]
        for stage in self.stages:
            x = stage(x)
            if len(skips) < self.cfg.scales:
                skips.append(x)
        return MultiScaleOutput(self.decoder(x, skips, _identity))

    def zero_output_layers(self):
        for head in self.decoder.prediction_heads():
            head.weight.data[...] = 0
            head.bias.data[...] = 0


class FADNet(Module):
    """RB-NetC followed by RB-NetS; final maps are first-stage maps plus residuals."""

    def __init__(self, cfg=None):
        super().__init__()
        cfg = cfg or NetworkConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.rbnetc = RBNetC(cfg, rng)
        self.rbnets = RBNetS(cfg, rng)

    def forward(self, left, right):
        c = self.rbnetc(left, right)
        warped = warp_by_disparity(right, c[0])
        r = self.rbnets(left, right, warped, c)
        d = MultiScaleOutput([cs + rs for cs, rs in zip(c, r)])
        return d, c, r


def rbnetc_forward(left, right, model):
    return model.rbnetc(left, right) if isinstance(model, FADNet) else model(left, right)


def rbnets_forward(left, right, warped_left, c_list, model):
    net = model.rbnets if isinstance(model, FADNet) else model
    return net(left, right, warped_left, c_list)


def fadnet_forward(left, right, model):
    """Run the full network; returns (final, first_stage, residual) pyramids."""
    return model(left, right)


def desk_config(**overrides):
    """Small network for CPU-scale experiments on 64 x 128 inputs."""
    base = dict(
        base_channels=8,
        max_channels=32,
        corr=CorrelationConfig(max_range=4, shift_mode="two_sided_stride2"),
    )
    base.update(overrides)
    return NetworkConfig(**base)


__all__ = [
    "NetworkConfig",
    "MultiScaleOutput",
    "ResBlock",
    "DualConv",
    "DualResBlock",
    "RBNetC",
    "RBNetS",
    "FADNet",
    "Parameter",
    "Tensor",
    "dual_conv",
    "dual_resblock",
    "rbnetc_forward",
    "rbnets_forward",
    "fadnet_forward",
    "desk_config",
]
