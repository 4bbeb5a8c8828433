"""Single-channel CNNs used as descriptor extractors and pseudo-label classifiers.

Every network exposes two paths:

* ``descriptors(x)`` - conv stack followed by global average pooling
* ``forward(x)`` - classifier logits over ``num_classes`` pseudo-labels
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import torch
from torch import nn
from torchvision import models

from .errors import ConfigError

VARIANTS = ("RN", "VGG", "TOY")


@dataclass
class NetworkConfig:
    variant: str = "TOY"
    input_channels: int = 1
    input_size: int = 64
    num_classes: int = 6
    descriptor_dim: int = 64
    toy_width: int = 16
    seed: int = 0

    def __post_init__(self):
        self.variant = str(self.variant).upper()
        if self.variant not in VARIANTS:
            raise ConfigError(f"unsupported network variant {self.variant!r}; expected one of {VARIANTS}")
        if self.input_channels != 1:
            raise ConfigError("spectrogram networks take exactly one input channel")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.variant in ("RN", "VGG"):
            self.descriptor_dim = 512
        if self.descriptor_dim < 1:
            raise ConfigError("descriptor_dim must be positive")
        if self.variant == "VGG" and self.input_size < 32:
            raise ConfigError("VGG needs inputs of at least 32 pixels")

    def to_dict(self):
        return asdict(self)


class SpectrogramNet(nn.Module):
    """Conv trunk with a pooled descriptor and a replaceable classifier head.

    ``head_pool`` maps the trunk's feature map to the head input. For the
    residual variants this is the same global average pool that yields the
    descriptor; the VGG variant keeps its 7 x 7 pooled map so the classifier
    matches the original fully connected stack.
    """

    def __init__(self, config: NetworkConfig, trunk: nn.Module, head_pool: nn.Module, head: nn.Sequential):
        super().__init__()
        self.config = config
        self.trunk = trunk
        self.global_pool = nn.AdaptiveAvgPool2d(1)
        self.head_pool = head_pool
        self.head = head

    def descriptors(self, x):
        return torch.flatten(self.global_pool(self.trunk(x)), 1)

    def forward(self, x):
        return self.head(self.head_pool(self.trunk(x)))

    @property
    def final_layer(self) -> nn.Linear:
        return self.head[-1]

    def reset_final_layer(self, seed: int):
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.final_layer.reset_parameters()

    def body_parameters(self):
        """Every parameter except the final classification layer."""
        final = {id(p) for p in self.final_layer.parameters()}
        return [p for p in self.parameters() if id(p) not in final]

    def trunk_hash(self) -> str:
        h = hashlib.sha256()
        for name, tensor in self.trunk.state_dict().items():
            h.update(name.encode())
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()


class _ResidualBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.proj = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + self.proj(x))


def _toy(config: NetworkConfig) -> SpectrogramNet:
    # 5 conv layers: stem, residual pair + projection, output conv
    c = config.toy_width
    trunk = nn.Sequential(
        nn.Conv2d(1, c, 3, 2, 1, bias=False),
        nn.BatchNorm2d(c),
        nn.ReLU(inplace=True),
        _ResidualBlock(c, 2 * c, 2),
        nn.Conv2d(2 * c, config.descriptor_dim, 3, 2, 1, bias=False),
        nn.BatchNorm2d(config.descriptor_dim),
        nn.ReLU(inplace=True),
    )
    head = nn.Sequential(nn.Linear(config.descriptor_dim, config.num_classes))
    return SpectrogramNet(config, trunk, nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Flatten()), head)


def _resnet18(config: NetworkConfig) -> SpectrogramNet:
    base = models.resnet18(weights=None)
    base.conv1 = nn.Conv2d(1, 64, kernel_size=7, stride=2, padding=3, bias=False)
    trunk = nn.Sequential(
        base.conv1, base.bn1, base.relu, base.maxpool,
        base.layer1, base.layer2, base.layer3, base.layer4,
    )
    head = nn.Sequential(nn.Linear(512, config.num_classes))
    return SpectrogramNet(config, trunk, nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Flatten()), head)


def _vgg16_bn(config: NetworkConfig) -> SpectrogramNet:
    base = models.vgg16_bn(weights=None)
    base.features[0] = nn.Conv2d(1, 64, kernel_size=3, padding=1)
    head = nn.Sequential(
        nn.Linear(512 * 7 * 7, 4096), nn.ReLU(True), nn.Dropout(),
        nn.Linear(4096, 4096), nn.ReLU(True), nn.Dropout(),
        nn.Linear(4096, config.num_classes),
    )
    return SpectrogramNet(config, base.features, nn.Sequential(nn.AdaptiveAvgPool2d(7), nn.Flatten()), head)


_BUILDERS = {"TOY": _toy, "RN": _resnet18, "VGG": _vgg16_bn}


def build_network(config: NetworkConfig) -> SpectrogramNet:
    """Construct a randomly initialised network; initialisation is seeded."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        net = _BUILDERS[config.variant](config)
    return net


def count_parameters(net: nn.Module, trainable_only=True) -> int:
    return sum(p.numel() for p in net.parameters() if p.requires_grad or not trainable_only)
