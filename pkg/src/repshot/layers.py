"""Torch building blocks shared by the template, evolution and attention models.

All models run in float64: the networks are tiny and the gradient checks
need double precision.
"""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


def node_profiles(adj: torch.Tensor) -> torch.Tensor:
    """Per-node input features: each node's connectivity row sorted descending.

    Sorting makes the feature vector independent of how the *other* nodes are
    labelled, so a node relabelling only reorders the rows of the result.
    """
    return torch.sort(adj, dim=-1, descending=True).values


def symmetrize(x: torch.Tensor) -> torch.Tensor:
    """Average with the transpose and zero the diagonal."""
    x = 0.5 * (x + x.transpose(-1, -2))
    eye = torch.eye(x.shape[-1], dtype=torch.bool, device=x.device)
    return x.masked_fill(eye, 0.0)


def linear(in_dim: int, out_dim: int, bias: bool = True) -> nn.Linear:
    """Zero-initialised float64 Linear; never draws from torch's global RNG.

    Models get their random weights from :func:`reset_double` instead.
    """
    layer = nn.utils.skip_init(nn.Linear, in_dim, out_dim, bias=bias, dtype=DTYPE)
    with torch.no_grad():
        for p in layer.parameters():
            p.zero_()
    return layer


class EdgeConv(nn.Module):
    """Message passing where the message along (i, j) is scaled by w_ij.

    h'_i = W_self h_i + (1/r) sum_j w_ij W_msg h_j + b
    """

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.msg = linear(in_dim, out_dim, bias=False)
        self.self_loop = linear(in_dim, out_dim)

    def forward(self, h: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        r = adj.shape[-1]
        return self.self_loop(h) + adj @ self.msg(h) / r


def reset_double(module: nn.Module, generator: torch.Generator) -> nn.Module:
    """Re-draw every parameter from a seeded generator (uniform fan-in init)."""
    with torch.no_grad():
        for name, p in module.named_parameters():
            fan_in = p.shape[-1] if p.dim() > 1 else max(p.numel(), 1)
            bound = 1.0 / np.sqrt(fan_in)
            p.copy_((torch.rand(p.shape, generator=generator, dtype=DTYPE) * 2 - 1) * bound)
    return module


def seeded_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
    return g
