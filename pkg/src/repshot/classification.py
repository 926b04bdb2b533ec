"""Graph-attention classifier for whole brain graphs.

A graph is read as: node features = sorted connectivity profiles, neighbourhood
= edges above the graph's mean weight plus a self-loop. Layers use a single
attention head and ELU; the graph score is a mean pool, an affine map and a
softmax over the two classes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .graph_core import THRESHOLD_RTOL, DimensionMismatch, Population
from .layers import DTYPE, as_tensor, linear, node_profiles, reset_double, seeded_generator

log = logging.getLogger(__name__)


class MissingClass(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


@dataclass
class GatLayerParams:
    weight: torch.Tensor  # F x F'
    attention: torch.Tensor  # 2F'
    leaky_relu_alpha: float = 0.2

    def __post_init__(self):
        self.weight = as_tensor(self.weight)
        self.attention = as_tensor(self.attention)
        if self.weight.dim() != 2 or self.attention.shape != (2 * self.weight.shape[1],):
            raise DimensionMismatch(
                f"weight {tuple(self.weight.shape)} and attention {tuple(self.attention.shape)} do not chain"
            )


@dataclass
class ClassifierConfig:
    learning_rate: float = 0.0001
    weight_decay: float = 0.0005
    epochs: int = 300
    rng_seed: int = 0
    hidden_dims: tuple = (16, 16)
    dropout_rate: float = 0.6
    leaky_relu_alpha: float = 0.2

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.epochs < 1:
            raise ValueError("learning_rate and epochs must be positive, weight_decay nonnegative")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


def neighbourhood_mask(adj: torch.Tensor) -> torch.Tensor:
    """Edges above the mean strict-upper-triangle weight, plus self-loops (batched)."""
    r = adj.shape[-1]
    iu = torch.triu_indices(r, r, offset=1)
    mean = adj[..., iu[0], iu[1]].mean(-1)[..., None, None]
    mask = adj - mean > THRESHOLD_RTOL * torch.clamp(mean.abs(), min=1.0)
    return mask | torch.eye(r, dtype=torch.bool)


def _as_mask(mask) -> torch.Tensor:
    if hasattr(mask, "mask"):
        mask = mask.mask
    m = torch.as_tensor(np.asarray(mask) if not isinstance(mask, torch.Tensor) else mask).to(torch.bool)
    return m | torch.eye(m.shape[-1], dtype=torch.bool)


def _scores(wh: torch.Tensor, attention: torch.Tensor, alpha: float) -> torch.Tensor:
    f = wh.shape[-1]
    src = wh @ attention[:f]
    dst = wh @ attention[f:]
    return F.leaky_relu(src.unsqueeze(-1) + dst.unsqueeze(-2), negative_slope=alpha)


def masked_softmax(e: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Row softmax over ``mask``; masked-out entries are exactly zero."""
    e = e.masked_fill(~mask, float("-inf"))
    return torch.softmax(e, dim=-1)


def attention_coefficients(features, params: GatLayerParams, mask) -> torch.Tensor:
    """alpha_ij = softmax_j LeakyReLU(a . [W h_i || W h_j]) over the neighbourhood of i.

    Self-loops are always added to ``mask`` so no neighbourhood is empty.
    """
    h = as_tensor(features)
    if h.shape[-1] != params.weight.shape[0]:
        raise DimensionMismatch(f"features have {h.shape[-1]} columns, weight expects {params.weight.shape[0]}")
    m = _as_mask(mask)
    if m.shape[-1] != h.shape[-2]:
        raise DimensionMismatch("mask and features disagree on the node count")
    wh = h @ params.weight
    return masked_softmax(_scores(wh, params.attention, params.leaky_relu_alpha), m)


def gat_layer_forward(features, params: GatLayerParams, mask) -> torch.Tensor:
    """h'_i = ELU(sum_j alpha_ij W h_j)."""
    h = as_tensor(features)
    alpha = attention_coefficients(h, params, mask)
    return F.elu(alpha @ (h @ params.weight))


class GatLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, leaky_relu_alpha: float = 0.2):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim, dtype=DTYPE))
        self.attention = nn.Parameter(torch.empty(2 * out_dim, dtype=DTYPE))
        self.leaky_relu_alpha = leaky_relu_alpha

    def params(self) -> GatLayerParams:
        return GatLayerParams(self.weight, self.attention, self.leaky_relu_alpha)

    def forward(self, h, mask, drop=None):
        wh = h @ self.weight
        alpha = masked_softmax(_scores(wh, self.attention, self.leaky_relu_alpha), mask)
        if drop is not None:
            alpha = drop(alpha)
        return F.elu(alpha @ wh)


class GatModel(nn.Module):
    def __init__(
        self,
        num_rois: int,
        hidden_dims: Sequence[int] = (16, 16),
        dropout_rate: float = 0.6,
        classes: Sequence = (0, 1),
        leaky_relu_alpha: float = 0.2,
    ):
        super().__init__()
        if len(classes) != 2:
            raise ValueError("exactly two classes are supported")
        dims = [num_rois, *hidden_dims]
        self.num_rois = num_rois
        self.layers = nn.ModuleList(GatLayer(a, b, leaky_relu_alpha) for a, b in zip(dims[:-1], dims[1:]))
        self.readout = linear(dims[-1], 2)
        self.dropout_rate = dropout_rate
        self.classes = tuple(classes)
        # dropout draws from this generator, never from torch's global RNG
        self.dropout_generator: Optional[torch.Generator] = None

    def _dropout(self, x: torch.Tensor) -> torch.Tensor:
        p = self.dropout_rate
        keep = torch.rand(x.shape, generator=self.dropout_generator, dtype=DTYPE) >= p
        return x * keep / (1.0 - p)

    def forward(self, adj: torch.Tensor) -> torch.Tensor:
        """Class logits for one graph (r, r) or a batch (B, r, r)."""
        adj = as_tensor(adj)
        if adj.shape[-1] != self.num_rois:
            raise DimensionMismatch(f"graph has r={adj.shape[-1]}, model expects r={self.num_rois}")
        mask = neighbourhood_mask(adj)
        h = node_profiles(adj)
        drop = self._dropout if self.training and self.dropout_rate > 0 else None
        for k, layer in enumerate(self.layers):
            # the raw profile is too low-dimensional to survive input dropout
            if drop is not None and k > 0:
                h = drop(h)
            h = layer(h, mask, drop)
        return self.readout(h.mean(-2))

    def probabilities(self, adj) -> torch.Tensor:
        return torch.softmax(self(adj), dim=-1)


def classify(model: GatModel, g, threshold: float = 0.5):
    """Return ``(label, (p_first, p_second))``.

    The second class wins only if its probability exceeds ``threshold``; the
    default 0.5 is the argmax with ties going to the first class.
    """
    was_training = model.training
    model.eval()
    with torch.no_grad():
        p = model.probabilities(np.asarray(g, dtype=np.float64) if not isinstance(g, torch.Tensor) else g)
    model.train(was_training)
    p0, p1 = float(p[0]), float(p[1])
    label = model.classes[1] if p1 > threshold else model.classes[0]
    return label, (p0, p1)


def predict_proba(model: GatModel, graphs) -> np.ndarray:
    """Class probabilities for a stack of graphs, shape (B, 2)."""
    model.eval()
    with torch.no_grad():
        return model.probabilities(as_tensor(np.stack([np.asarray(g) for g in graphs]))).numpy()


def _training_set(train, classes):
    if isinstance(train, dict):
        labels = list(train.keys())
        graphs = [np.asarray(train[k], dtype=np.float64) for k in labels]
    elif isinstance(train, Population):
        if train.labels is None:
            raise MissingClass("training population is unlabeled")
        labels = list(train.labels)
        graphs = [m.weights for m in train.members]
    else:
        pairs = list(train)
        graphs = [np.asarray(g, dtype=np.float64) for g, _ in pairs]
        labels = [l for _, l in pairs]
    if classes is None:
        classes = tuple(sorted(set(labels), key=str))
    missing = [c for c in classes if c not in labels]
    if len(classes) != 2 or missing:
        raise MissingClass(f"need one or more samples of each of two classes; classes={classes}, missing={missing}")
    y = torch.tensor([classes.index(l) for l in labels])
    return torch.as_tensor(np.stack(graphs), dtype=DTYPE), y, tuple(classes)


def train_classifier(train, cfg: Optional[ClassifierConfig] = None, classes: Optional[Sequence] = None) -> GatModel:
    """Supervised cross-entropy training, one full-batch optimizer step per epoch.

    Every training strategy therefore gets the same number of updates, however
    many graphs it trains on.

    ``train`` is a labelled :class:`Population`, a ``{label: template}`` dict
    (the one-representative-shot case), or ``(graph, label)`` pairs.
    """
    cfg = cfg or ClassifierConfig()
    x, y, classes = _training_set(train, tuple(classes) if classes is not None else None)
    model = GatModel(x.shape[-1], cfg.hidden_dims, cfg.dropout_rate, classes, cfg.leaky_relu_alpha)
    gen = seeded_generator(cfg.rng_seed)
    reset_double(model, gen)
    model.dropout_generator = gen
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    model.train()
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        loss = F.cross_entropy(model(x), y)
        if not torch.isfinite(loss):
            raise NonConvergence(f"classifier loss became {loss.item()} at epoch {epoch}")
        loss.backward()
        opt.step()
    model.eval()
    model.dropout_generator = None
    return model
