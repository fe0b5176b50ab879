"""Per-pixel attention over the active components and their convex fusion.

The attention trunk is a 1x1 conv, two 3x3 convs, another 1x1 conv and a
softmax across the component axis, so at every pixel the weights are
nonnegative and sum to 1. The fused image is the weighted sum of the
component predictions: a convex combination, hence always inside the
per-pixel min/max envelope of the components.
"""

import torch
import torch.nn.functional as F
from torch import nn

ATTENTION_HIDDEN = 128


class AttentionTrunk(nn.Module):
    """Produce n softmax-normalized per-pixel weight maps from shared features."""

    def __init__(self, width, n, hidden=ATTENTION_HIDDEN):
        super().__init__()
        if n < 1:
            raise ValueError("attention arity must be >= 1, got n=0")
        self.n = n
        self.layers = nn.Sequential(
            nn.Conv2d(width, hidden, 1),
            nn.SELU(inplace=True),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.SELU(inplace=True),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.SELU(inplace=True),
            nn.Conv2d(hidden, n, 1),
        )

    def logits(self, feats, size):
        out = self.layers(feats.shared)
        if out.shape[-2:] != tuple(size):
            out = F.interpolate(out, size=size, mode="bilinear", align_corners=False)
        return out

    def forward(self, feats, size):
        return F.softmax(self.logits(feats, size), dim=1)


def fuse(outputs, weights):
    """Convex combination of component predictions under the attention maps.

    `outputs` is the ordered list of ComponentOutput (or raw B x 3 x H x W
    tensors); `weights` is B x N x H x W with N == len(outputs). The result
    is left unclamped: inference clamps, training feeds it to the loss raw.
    """
    preds = [getattr(o, "prediction", o) for o in outputs]
    if len(preds) != weights.shape[1]:
        raise ValueError(
            f"fusion arity error: {len(preds)} components vs {weights.shape[1]} weight maps"
        )
    stack = torch.stack(preds, dim=1)  # B x N x 3 x H x W
    if stack.shape[-2:] != weights.shape[-2:]:
        raise ValueError(
            f"fusion arity error: component size {tuple(stack.shape[-2:])} vs "
            f"weight size {tuple(weights.shape[-2:])}"
        )
    return (stack * weights.unsqueeze(2)).sum(dim=1)
