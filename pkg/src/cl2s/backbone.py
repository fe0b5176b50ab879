"""Multi-scale feature extraction and attention-weighted aggregation.

Two backbone profiles share one contract: "full" is a ResNeXt-101 trunk
(optionally ImageNet-pretrained), "tiny" is a small strided CNN that keeps
every test runnable on CPU without downloaded weights. Either produces a
FeaturePyramid; the aggregation module collapses it into two spatially
aligned working maps (atmospheric + shared) consumed by the heads and the
fusion trunk.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class BackboneConfig:
    name: str = "tiny"
    strides: tuple = (4, 8)
    level_channels: tuple = (32, 64)
    width: int = 64  # channel width of the aggregated working maps
    pretrained: bool = False

    def __post_init__(self):
        if len(self.strides) < 2:
            raise ValueError("backbone needs at least 2 pyramid levels")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ValueError("strides must be strictly increasing")
        if len(self.strides) != len(self.level_channels):
            raise ValueError("strides and level_channels must align")

    @staticmethod
    def named(name, pretrained=False):
        if name == "tiny":
            return BackboneConfig()
        if name == "full":
            return BackboneConfig(
                name="full",
                strides=(4, 8, 16, 32),
                level_channels=(256, 512, 1024, 2048),
                width=128,
                pretrained=pretrained,
            )
        raise ValueError(f"unknown backbone profile {name!r}")


@dataclass
class FeaturePyramid:
    """Ordered multi-resolution feature maps, finest level first."""

    levels: list
    strides: tuple
    input_size: tuple  # (H, W) of the image the pyramid came from

    def validate(self):
        if len(self.levels) != len(self.strides):
            raise ValueError("pyramid inconsistent: level/stride count mismatch")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ValueError("pyramid inconsistent: strides not increasing")
        h, w = self.input_size
        for lvl, s in zip(self.levels, self.strides):
            expect = (math.ceil(h / s), math.ceil(w / s))
            if tuple(lvl.shape[-2:]) != expect:
                raise ValueError(
                    f"pyramid inconsistent: stride {s} level has spatial size "
                    f"{tuple(lvl.shape[-2:])}, expected {expect}"
                )
        return self


@dataclass
class AggregatedFeatures:
    """Spatially aligned working maps at 1/working_stride of input resolution."""

    atmospheric: torch.Tensor
    shared: torch.Tensor
    working_stride: int
    input_size: tuple


class TinyTrunk(nn.Module):
    """Small strided CNN honoring the FeaturePyramid contract."""

    def __init__(self, config):
        super().__init__()
        self.stages = nn.ModuleList()
        prev_stride, prev_ch = 1, 3
        for stride, ch in zip(config.strides, config.level_channels):
            factor = stride // prev_stride
            if factor * prev_stride != stride or factor & (factor - 1):
                raise ValueError("tiny backbone strides must grow by powers of 2")
            layers = []
            while factor > 1:
                layers += [nn.Conv2d(prev_ch, ch, 3, stride=2, padding=1), nn.SELU(inplace=True)]
                prev_ch, factor = ch, factor // 2
            layers += [nn.Conv2d(prev_ch, ch, 3, padding=1), nn.SELU(inplace=True)]
            self.stages.append(nn.Sequential(*layers))
            prev_stride, prev_ch = stride, ch

    def forward(self, x):
        levels = []
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return levels


class ResNeXtTrunk(nn.Module):
    """ResNeXt-101 (32x8d) stages 1-4 as the four pyramid levels."""

    # ImageNet statistics used by the pretrained weights
    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self, pretrained=False):
        super().__init__()
        import torchvision.models as models

        weights = models.ResNeXt101_32X8D_Weights.IMAGENET1K_V1 if pretrained else None
        net = models.resnext101_32x8d(weights=weights)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1 = net.layer1
        self.layer2 = net.layer2
        self.layer3 = net.layer3
        self.layer4 = net.layer4
        self._pretrained = pretrained
        self.register_buffer("mean", torch.tensor(self.MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(self.STD).view(1, 3, 1, 1))

    def forward(self, x):
        x = (x - self.mean) / self.std
        l1 = self.layer1(self.stem(x))
        l2 = self.layer2(l1)
        l3 = self.layer3(l2)
        l4 = self.layer4(l3)
        return [l1, l2, l3, l4]


class FeatureExtractor(nn.Module):
    """Runs the configured trunk and packages its outputs as a FeaturePyramid."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        if config.name == "full":
            self.trunk = ResNeXtTrunk(pretrained=config.pretrained)
        else:
            self.trunk = TinyTrunk(config)

    def forward(self, x):
        h, w = x.shape[-2:]
        if min(h, w) < max(self.config.strides):
            raise ValueError(
                f"input too small: {h}x{w} for maximum stride {max(self.config.strides)}"
            )
        pyr = FeaturePyramid(self.trunk(x), self.config.strides, (h, w))
        return pyr.validate()


class AttentionAggregation(nn.Module):
    """Collapse a pyramid into one map via per-position softmax over levels.

    Each level is 1x1-projected to a common width and bilinearly upsampled to
    the finest participating resolution; a per-level 1x1 conv produces the
    attention logit so the weights can vary per position.
    """

    def __init__(self, level_channels, width):
        super().__init__()
        if not level_channels:
            raise ValueError("aggregation needs at least one level")
        self.proj = nn.ModuleList(nn.Conv2d(c, width, 1) for c in level_channels)
        self.logit = nn.ModuleList(nn.Conv2d(width, 1, 1) for _ in level_channels)
        self.width = width

    def forward(self, pyramid, return_weights=False):
        if len(pyramid.levels) != len(self.proj):
            raise ValueError(
                f"pyramid inconsistent: aggregation built for {len(self.proj)} "
                f"levels, got {len(pyramid.levels)}"
            )
        size = pyramid.levels[0].shape[-2:]
        projected = []
        for lvl, proj in zip(pyramid.levels, self.proj):
            p = proj(lvl)
            if p.shape[-2:] != size:
                p = F.interpolate(p, size=size, mode="bilinear", align_corners=False)
            projected.append(p)
        logits = torch.stack([lg(p) for p, lg in zip(projected, self.logit)], dim=1)
        weights = F.softmax(logits, dim=1)  # B x L x 1 x h x w, sums to 1 over L
        out = (torch.stack(projected, dim=1) * weights).sum(dim=1)
        if return_weights:
            return out, weights.squeeze(2)
        return out


class Backbone(nn.Module):
    """Feature extractor plus two independently parameterized aggregations."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.extractor = FeatureExtractor(config)
        self.aggregate_atmospheric = AttentionAggregation(config.level_channels, config.width)
        self.aggregate_shared = AttentionAggregation(config.level_channels, config.width)

    def forward(self, x):
        pyr = self.extractor(x)
        return AggregatedFeatures(
            atmospheric=self.aggregate_atmospheric(pyr),
            shared=self.aggregate_shared(pyr),
            working_stride=self.config.strides[0],
            input_size=tuple(x.shape[-2:]),
        )
