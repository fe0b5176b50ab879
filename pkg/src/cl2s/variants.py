"""Variant factory: assemble backbone + selected heads + matching fusion.

Presets cover the full ablation matrix. FDNet carries all six components;
every other preset removes components from it, named by what is removed:

    FDNet    AS MUL ADD EXP LOG SIN
    FD-AS       MUL ADD EXP LOG SIN
    FD-J1    AS     ADD EXP LOG SIN
    FD-J2    AS MUL     EXP LOG SIN
    FD-J3    AS MUL ADD     LOG SIN
    CL2S     AS MUL ADD EXP     SIN   (alias FD-J4)
    DM2F     AS MUL ADD EXP LOG       (alias FD-J5)
    FD-J1,4  AS     ADD EXP     SIN

Components are identified symbolically (never by index) so removals stay
unambiguous. Arbitrary custom kind sets are also accepted.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backbone import Backbone, BackboneConfig
from .fusion import AttentionTrunk, fuse
from .heads import KIND_ORDER, ComponentKind, build_head
from .images import clamp_unit, from_tensor, to_tensor, validate_image

K = ComponentKind

PRESETS = {
    "FD-AS": (K.MUL, K.ADD, K.EXP, K.LOG, K.SIN),
    "FD-J1": (K.AS, K.ADD, K.EXP, K.LOG, K.SIN),
    "FD-J2": (K.AS, K.MUL, K.EXP, K.LOG, K.SIN),
    "FD-J3": (K.AS, K.MUL, K.ADD, K.LOG, K.SIN),
    "CL2S": (K.AS, K.MUL, K.ADD, K.EXP, K.SIN),
    "DM2F": (K.AS, K.MUL, K.ADD, K.EXP, K.LOG),
    "FD-J1,4": (K.AS, K.ADD, K.EXP, K.SIN),
    "FDNet": tuple(KIND_ORDER),
}

# Table row order used by the ablation harness.
ABLATION_ORDER = ("FD-AS", "FD-J1", "FD-J2", "FD-J3", "CL2S", "DM2F", "FD-J1,4", "FDNet")

_ALIASES = {"FD-J4": "CL2S", "FD-J5": "DM2F", "FD-J14": "FD-J1,4"}


def resolve_preset_name(name):
    """Normalize a user-supplied variant name to its canonical preset key."""
    cleaned = name.strip().replace(" ", "").replace("−", "-").upper()
    for key in PRESETS:
        if cleaned == key.upper():
            return key
    if cleaned in _ALIASES:
        return _ALIASES[cleaned]
    raise ValueError(f"unknown variant {name!r} (known: {', '.join(PRESETS)})")


@dataclass(frozen=True)
class VariantSpec:
    """Named, ordered set of active component kinds."""

    name: str
    kinds: tuple

    def __post_init__(self):
        if not self.kinds:
            raise ValueError("empty variant: at least one component kind required")
        kinds = tuple(ComponentKind(k) for k in self.kinds)
        if len(set(kinds)) != len(kinds):
            raise ValueError(f"duplicate component kinds in variant {self.name!r}")
        # store in canonical head order
        object.__setattr__(self, "kinds", tuple(k for k in KIND_ORDER if k in kinds))

    @staticmethod
    def preset(name):
        key = resolve_preset_name(name)
        return VariantSpec(key, PRESETS[key])

    @staticmethod
    def from_kinds(kinds, name=None):
        """Build a custom variant from kind names, e.g. "AS,MUL,SIN" or a list."""
        if isinstance(kinds, str):
            kinds = [k for k in kinds.replace(" ", "").split(",") if k]
        parsed = tuple(ComponentKind(str(k).upper()) for k in kinds)
        return VariantSpec(name or "+".join(k.value for k in parsed), parsed)

    @property
    def arity(self):
        return len(self.kinds)


def resolve_spec(value):
    """Coerce a preset name, kind-set string ("AS,MUL,SIN"), kind sequence,
    or VariantSpec into a VariantSpec."""
    if isinstance(value, VariantSpec):
        return value
    if isinstance(value, str):
        try:
            return VariantSpec.preset(value)
        except ValueError as unknown_preset:
            try:
                return VariantSpec.from_kinds(value.replace("+", ","))
            except ValueError:
                raise unknown_preset from None
    return VariantSpec.from_kinds(value)


class DehazeModel(nn.Module):
    """Complete assembly: backbone, the variant's heads, and attention fusion."""

    def __init__(self, spec, backbone=None, divide_by_t=False):
        super().__init__()
        spec = resolve_spec(spec)
        backbone = backbone or BackboneConfig()
        self.spec = spec
        self.backbone_config = backbone
        self.backbone = Backbone(backbone)
        self.heads = nn.ModuleDict()
        for kind in spec.kinds:
            kwargs = {"divide_by_t": divide_by_t} if kind is K.AS else {}
            self.heads[kind.value] = build_head(kind, backbone.width, **kwargs)
        self.attention = AttentionTrunk(backbone.width, spec.arity)

    def forward(self, x):
        """Run the full pipeline on a B x 3 x H x W batch.

        Returns (fused, weights, components): the unclamped fused batch, the
        B x N x H x W attention maps, and the per-head ComponentOutputs in
        spec order.
        """
        feats = self.backbone(x)
        size = x.shape[-2:]
        components = [self.heads[k.value](x, feats) for k in self.spec.kinds]
        weights = self.attention(feats, size)
        return fuse(components, weights), weights, components

    def num_parameters(self):
        return sum(p.numel() for p in self.parameters())


def build_variant(spec, backbone="tiny", pretrained=False, divide_by_t=False, init_std=0.01, seed=None):
    """Construct a DehazeModel for a preset name, VariantSpec, or kind list.

    Non-pretrained parameters are initialized with zero-mean Gaussian noise
    (std `init_std`); pass init_std=None to keep the framework defaults.
    """
    spec = resolve_spec(spec)
    if isinstance(backbone, str):
        backbone = BackboneConfig.named(backbone, pretrained=pretrained)
    model = DehazeModel(spec, backbone, divide_by_t=divide_by_t)
    if init_std is not None:
        init_parameters(model, std=init_std, seed=seed)
    return model


def init_parameters(model, std=0.01, seed=None):
    """Gaussian-initialize every parameter outside pretrained subtrees."""
    gen = None
    if seed is not None:
        gen = torch.Generator()
        gen.manual_seed(seed)
    skip = set()
    for module in model.modules():
        if getattr(module, "_pretrained", False):
            skip.update(id(p) for p in module.parameters())
    with torch.no_grad():
        for p in model.parameters():
            if id(p) not in skip:
                p.normal_(0.0, std, generator=gen)


def forward_image(model, img, clamp=True):
    """Dehaze one H x W x 3 image array.

    Returns (dehazed image, attention maps as an N x H x W array, component
    outputs). The fused image is clamped to [0, 1] unless `clamp=False`.
    """
    arr = validate_image(img)
    device = next(model.parameters()).device
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            fused, weights, components = model(to_tensor(arr).to(device))
    finally:
        model.train(was_training)
    out = from_tensor(fused)
    if clamp:
        out = clamp_unit(out)
    return out, weights.squeeze(0).cpu().numpy().astype(np.float64), components
