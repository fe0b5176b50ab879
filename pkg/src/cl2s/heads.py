"""The six elementary-function dehazing components.

Each head turns the hazy image plus the shared working features into one
candidate dehazed image:

    AS   J = I - A * (1 - T)         (atmospheric scattering, learned A and T)
    MUL  J = I * R
    ADD  J = I + R
    EXP  J = clamp(I, eps, 1) ** R
    LOG  J = log(1 + I * R)          (natural log)
    SIN  J = sin(I + R)

R, A and T come from small learned layers on the working maps. Head
predictions are intentionally NOT clamped to [0, 1]; the convex fusion
bounds their influence and clamping here would kill gradients.

Every head accepts externally injected R (or A, T) maps so tests can check
the bare formulas against closed-form evaluation.
"""

import enum
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

# Domain guards: remove the 0**negative and log(<=0) singularities without
# measurably altering in-range behavior.
EXP_BASE_EPS = 1e-4
LOG_ARG_FLOOR = 1e-6
T_MIN = 0.05


class ComponentKind(str, enum.Enum):
    AS = "AS"
    MUL = "MUL"
    ADD = "ADD"
    EXP = "EXP"
    LOG = "LOG"
    SIN = "SIN"


# Canonical head order; variant kind sets are always sorted by this.
KIND_ORDER = (
    ComponentKind.AS,
    ComponentKind.MUL,
    ComponentKind.ADD,
    ComponentKind.EXP,
    ComponentKind.LOG,
    ComponentKind.SIN,
)


@dataclass
class ComponentOutput:
    kind: ComponentKind
    prediction: torch.Tensor  # B x 3 x H x W, not range-restricted
    aux: dict = field(default_factory=dict)


@dataclass
class AtmosphericEstimate:
    a: torch.Tensor  # B x 3 x 1 x 1, per-channel in [0, 1]
    t: torch.Tensor  # B x 1 x H x W, in (t_min, 1]


class ResidualMapHead(nn.Module):
    """Base for the R-driven heads: learned per-pixel correction map R.

    R is produced by a 3x3 conv on the shared features, a nonlinearity, and
    a 3x3 conv to 3 channels, bilinearly upsampled to input resolution. No
    range activation: the fusion softmax handles out-of-range components.
    """

    kind = None

    def __init__(self, width):
        super().__init__()
        self.r_layers = nn.Sequential(
            nn.Conv2d(width, width, 3, padding=1),
            nn.SELU(inplace=True),
            nn.Conv2d(width, 3, 3, padding=1),
        )

    def residual(self, feats, size):
        r = self.r_layers(feats.shared)
        if r.shape[-2:] != tuple(size):
            r = F.interpolate(r, size=size, mode="bilinear", align_corners=False)
        return r

    def formula(self, image, r):
        raise NotImplementedError

    def forward(self, image, feats, r=None):
        if r is None:
            r = self.residual(feats, image.shape[-2:])
        return ComponentOutput(self.kind, self.formula(image, r), {"r": r})


class MultiplyHead(ResidualMapHead):
    kind = ComponentKind.MUL

    def formula(self, image, r):
        return image * r


class AdditionHead(ResidualMapHead):
    kind = ComponentKind.ADD

    def formula(self, image, r):
        return image + r


class ExponentHead(ResidualMapHead):
    kind = ComponentKind.EXP

    def formula(self, image, r):
        return image.clamp(min=EXP_BASE_EPS, max=1.0) ** r


class LogarithmHead(ResidualMapHead):
    kind = ComponentKind.LOG

    def formula(self, image, r):
        return torch.log1p((image * r).clamp(min=LOG_ARG_FLOOR - 1.0))


class SineHead(ResidualMapHead):
    kind = ComponentKind.SIN

    def formula(self, image, r):
        return torch.sin(image + r)


class ScatteringHead(nn.Module):
    """Atmospheric scattering component J = I - A * (1 - T).

    A is a global per-channel triple (sigmoid-bounded to [0, 1]) pooled from
    the atmospheric features; T is a per-pixel sigmoid map rescaled into
    (t_min, 1]. The division by T of the classical inversion is off by
    default (`divide_by_t`) to match the component equation as used here.
    """

    kind = ComponentKind.AS

    def __init__(self, width, t_min=T_MIN, divide_by_t=False):
        super().__init__()
        self.t_min = t_min
        self.divide_by_t = divide_by_t
        self.a_layers = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(width, width, 1),
            nn.SELU(inplace=True),
            nn.Conv2d(width, 3, 1),
            nn.Sigmoid(),
        )
        self.t_layers = nn.Sequential(
            nn.Conv2d(width, width // 2, 3, padding=1),
            nn.SELU(inplace=True),
            nn.Conv2d(width // 2, 1, 1),
            nn.Sigmoid(),
        )

    def estimate(self, feats, size):
        a = self.a_layers(feats.atmospheric)
        t = self.t_layers(feats.atmospheric)
        if t.shape[-2:] != tuple(size):
            t = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
        t = self.t_min + (1.0 - self.t_min) * t
        return AtmosphericEstimate(a=a, t=t)

    def forward(self, image, feats, a=None, t=None):
        if a is None or t is None:
            est = self.estimate(feats, image.shape[-2:])
            a = est.a if a is None else a
            t = est.t if t is None else t
        pred = image - a * (1.0 - t)
        if self.divide_by_t:
            pred = pred / t.clamp(min=self.t_min)
        return ComponentOutput(self.kind, pred, {"a": a, "t": t})


_HEAD_CLASSES = {
    ComponentKind.AS: ScatteringHead,
    ComponentKind.MUL: MultiplyHead,
    ComponentKind.ADD: AdditionHead,
    ComponentKind.EXP: ExponentHead,
    ComponentKind.LOG: LogarithmHead,
    ComponentKind.SIN: SineHead,
}


def build_head(kind, width, **kwargs):
    """Instantiate the head implementing one ComponentKind."""
    return _HEAD_CLASSES[ComponentKind(kind)](width, **kwargs)
