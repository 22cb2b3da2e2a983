"""Two-branch pose network: backbone, global average pooling, single-layer heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import InvalidConfig, ShapeMismatch

BACKBONES = {"tiny": 128, "mobilenet_v2": 1280}
HEAD_MODES = ("regression", "softclass")
TINY_CHANNELS = (16, 32, 64, 128)
TINY_EXTRA_CONVS = 2  # stride-1 3x3 convs after the last stage widen the receptive field
INPUT_MULTIPLE = 8


@dataclass
class ModelConfig:
    backbone: str = "tiny"
    head_mode: str = "softclass"
    n_bins: int = 12
    input_width: int = 192
    input_height: int = 120
    in_channels: int = 1
    coord_channels: bool = False
    pretrained_backbone: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def feature_channels(self) -> int:
        return BACKBONES[self.backbone]

    @property
    def orientation_dim(self) -> int:
        return 4 if self.head_mode == "regression" else self.n_bins**3

    def validate(self):
        if self.backbone not in BACKBONES:
            raise InvalidConfig(f"unknown backbone {self.backbone!r}; choose from {sorted(BACKBONES)}")
        if self.head_mode not in HEAD_MODES:
            raise InvalidConfig(f"unknown head_mode {self.head_mode!r}; choose from {HEAD_MODES}")
        if self.head_mode == "softclass" and not 2 <= self.n_bins <= 64:
            raise InvalidConfig(f"n_bins must be in [2, 64], got {self.n_bins}")
        # stride-2 convs are padded, so only a coarse multiple is required;
        # this keeps both 192x120 and 384x240 valid
        if self.input_width % INPUT_MULTIPLE or self.input_height % INPUT_MULTIPLE:
            raise InvalidConfig(
                f"input dims must be divisible by {INPUT_MULTIPLE}, "
                f"got {self.input_width}x{self.input_height}"
            )
        if self.in_channels not in (1, 3):
            raise InvalidConfig("in_channels must be 1 or 3")
        if self.backbone == "mobilenet_v2" and self.coord_channels:
            raise InvalidConfig("coord_channels is only supported by the tiny backbone")

    def to_dict(self) -> dict:
        return asdict(self)


def head_param_count(channels: int, head_mode: str, n_bins: int | None = None) -> int:
    """Parameters of a single affine head on ``channels`` pooled features.

    ``head_mode`` is ``"position"`` (3 outputs), ``"regression"`` (4) or
    ``"softclass"`` (``n_bins**3``).
    """
    if channels <= 0:
        raise InvalidConfig("channels must be positive")
    outputs = {"position": 3, "regression": 4}.get(head_mode)
    if outputs is None:
        if head_mode != "softclass" or not n_bins:
            raise InvalidConfig(f"bad head specification {head_mode!r}, n_bins={n_bins}")
        outputs = n_bins**3
    return outputs * (channels + 1)


def tiny_backbone(in_channels: int) -> nn.Sequential:
    layers = []
    c_in = in_channels
    for c_out in TINY_CHANNELS:
        layers += [
            nn.Conv2d(c_in, c_out, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        ]
        c_in = c_out
    for _ in range(TINY_EXTRA_CONVS):
        layers += [nn.Conv2d(c_in, c_in, 3, padding=1, bias=False), nn.BatchNorm2d(c_in), nn.ReLU(inplace=True)]
    return nn.Sequential(*layers)


def mobilenet_backbone(pretrained: bool) -> nn.Module:
    from torchvision.models import MobileNet_V2_Weights, mobilenet_v2

    weights = MobileNet_V2_Weights.IMAGENET1K_V1 if pretrained else None
    return mobilenet_v2(weights=weights).features


class AddCoords(nn.Module):
    """Append normalized x/y coordinate planes in [-1, 1] to the input."""

    def forward(self, x):
        b, _, h, w = x.shape
        ys = torch.linspace(-1.0, 1.0, h, dtype=x.dtype, device=x.device)
        xs = torch.linspace(-1.0, 1.0, w, dtype=x.dtype, device=x.device)
        gy, gx = torch.meshgrid(ys, xs, indexing="ij")
        coords = torch.stack([gx, gy]).expand(b, 2, h, w)
        return torch.cat([x, coords], dim=1)


class PoseNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.backbone == "tiny":
            extra = 2 if cfg.coord_channels else 0
            self.prep = AddCoords() if cfg.coord_channels else nn.Identity()
            self.backbone = tiny_backbone(cfg.in_channels + extra)
        else:
            self.prep = nn.Identity()
            self.backbone = mobilenet_backbone(cfg.pretrained_backbone)
        self.pool = nn.AdaptiveAvgPool2d(1)
        c = cfg.feature_channels
        self.position_head = nn.Linear(c, 3)
        self.orientation_head = nn.Linear(c, cfg.orientation_dim)

    def forward(self, images: torch.Tensor):
        cfg = self.cfg
        if images.ndim != 4 or images.shape[-2:] != (cfg.input_height, cfg.input_width):
            raise ShapeMismatch(
                f"expected (B, C, {cfg.input_height}, {cfg.input_width}), got {tuple(images.shape)}"
            )
        if cfg.backbone == "mobilenet_v2" and images.shape[1] == 1:
            images = images.expand(-1, 3, -1, -1)
        elif cfg.backbone == "tiny" and images.shape[1] != cfg.in_channels:
            raise ShapeMismatch(f"expected {cfg.in_channels} channel(s), got {images.shape[1]}")
        feats = self.pool(self.backbone(self.prep(images))).flatten(1)
        return self.position_head(feats), self.orientation_head(feats)


def _init_weights(net: PoseNet):
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    for head in (net.position_head, net.orientation_head):
        nn.init.kaiming_uniform_(head.weight, nonlinearity="linear")
        nn.init.zeros_(head.bias)


def build_model(cfg: ModelConfig) -> PoseNet:
    """Build a :class:`PoseNet` with weights initialized from ``cfg.seed``."""
    cfg.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        net = PoseNet(cfg)
        if not cfg.pretrained_backbone:
            _init_weights(net)
        else:
            torch.manual_seed(cfg.seed)
            for head in (net.position_head, net.orientation_head):
                nn.init.kaiming_uniform_(head.weight, nonlinearity="linear")
                nn.init.zeros_(head.bias)
    return net


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def normalize_quaternion_output(raw: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Project a regressed 4-vector onto the unit sphere."""
    return raw / raw.norm(dim=-1, keepdim=True).clamp_min(eps)
