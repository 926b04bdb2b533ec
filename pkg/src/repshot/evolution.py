"""Cascaded graph GANs that forecast follow-up graphs from a baseline graph.

Stage i owns a generator G_i (graph at t_{i-1} -> graph at t_i) and a
discriminator D_i. The prediction of stage i is the input of stage i+1, both
when training and at inference.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .graph_core import ConnectivityMatrix, DimensionMismatch, Trajectory
from .layers import DTYPE, EdgeConv, as_tensor, linear, node_profiles, reset_double, seeded_generator, symmetrize

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
_EPS = 1e-12


class EmptyTrainingSet(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


class InconsistentTrajectoryLength(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


@dataclass
class EvolutionHyperparams:
    lambda1: float = 2.0
    lambda2: float = 2.0
    lambda3: float = 0.001
    gen_lr_initial: float = 0.01
    gen_lr_final: float = 0.001
    disc_lr: float = 0.0002
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    weight_decay: float = 0.01
    epochs: int = 300
    rng_seed: int = 0
    hidden_dims: tuple = (16, 16)
    teacher_forcing: bool = False

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be nonnegative")
        if min(self.gen_lr_initial, self.gen_lr_final, self.disc_lr) <= 0:
            raise ValueError("learning rates must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epochs < 1 or not self.hidden_dims:
            raise ValueError("epochs must be positive and hidden_dims nonempty")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    def generator_lr(self, epoch: int) -> float:
        """Linear schedule from ``gen_lr_initial`` (first epoch) to ``gen_lr_final`` (last).

        Both ends are configurable; the default decays 0.01 by a factor of ten.
        A rising schedule (e.g. 0.01 -> 0.1) overshoots even on identity
        dynamics.
        """
        if self.epochs == 1:
            return self.gen_lr_initial
        frac = epoch / (self.epochs - 1)
        return self.gen_lr_initial + frac * (self.gen_lr_final - self.gen_lr_initial)


# ---------------------------------------------------------------------------
# losses


def _returns_float(*xs) -> bool:
    return not any(isinstance(x, torch.Tensor) for x in xs)


def _pair(pred, truth):
    p, t = as_tensor(pred), as_tensor(truth)
    if p.shape != t.shape:
        raise DimensionMismatch(f"shapes {tuple(p.shape)} and {tuple(t.shape)} differ")
    return p, t


def l1_loss(pred, truth):
    """Sum of absolute differences over the strict upper triangle.

    Accepts single matrices or batches shaped (..., r, r); returns a float for
    array inputs and a (differentiable) tensor when either input is a tensor.
    """
    p, t = _pair(pred, truth)
    r = p.shape[-1]
    iu = torch.triu_indices(r, r, offset=1)
    out = (p[..., iu[0], iu[1]] - t[..., iu[0], iu[1]]).abs().sum(-1)
    return out.item() if _returns_float(pred, truth) and out.dim() == 0 else out


def _row_gaussians(x: torch.Tensor):
    r = x.shape[-1]
    off = ~torch.eye(r, dtype=torch.bool)
    vals = x[..., off].reshape(*x.shape[:-2], r, r - 1)
    mu = vals.mean(-1)
    sigma = torch.sqrt(((vals - mu.unsqueeze(-1)) ** 2).mean(-1))
    return mu, torch.clamp(sigma, min=SIGMA_FLOOR)


def gaussian_kl(mu_p, sigma_p, mu_q, sigma_q):
    """KL(N(mu_p, sigma_p^2) || N(mu_q, sigma_q^2)), elementwise."""
    return (
        torch.log(sigma_q / sigma_p)
        + (sigma_p**2 + (mu_p - mu_q) ** 2) / (2 * sigma_q**2)
        - 0.5
    )


def kl_alignment_loss(pred, truth):
    """Sum over nodes of KL(truth-row Gaussian || predicted-row Gaussian).

    Each node's off-diagonal edge weights are summarised by their mean and
    (population) standard deviation, floored at 1e-6.
    """
    p, t = _pair(pred, truth)
    mu_p, sd_p = _row_gaussians(p)
    mu_t, sd_t = _row_gaussians(t)
    out = gaussian_kl(mu_t, sd_t, mu_p, sd_p).sum(-1)
    return out.item() if _returns_float(pred, truth) and out.dim() == 0 else out


def adversarial_generator_loss(disc_on_pred: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss, -mean log D(G(x))."""
    d = as_tensor(disc_on_pred)
    return -torch.log(d.clamp_min(_EPS)).mean()


def discriminator_loss(disc_on_truth: torch.Tensor, disc_on_pred: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy(disc_on_truth, torch.ones_like(disc_on_truth)) + F.binary_cross_entropy(
        disc_on_pred, torch.zeros_like(disc_on_pred)
    )


def composite_loss(preds, truths, disc_outputs, hp: EvolutionHyperparams) -> torch.Tensor:
    """Full generator objective summed over cascade stages.

    ``preds[i]``/``truths[i]`` are (n, r, r) batches for stage i and
    ``disc_outputs[i]`` holds D_i evaluated on ``preds[i]``. Per stage:
    lambda1 * adv + lambda2/n * sum l1 + lambda3/n * sum KL.
    """
    if not preds or len(preds) != len(truths) or len(preds) != len(disc_outputs):
        raise EmptyBatch("need aligned, nonempty lists of predictions, truths and discriminator outputs")
    total = torch.zeros((), dtype=DTYPE)
    for pred, truth, d in zip(preds, truths, disc_outputs):
        p, t = _pair(pred, truth)
        if p.dim() == 2:
            p, t = p.unsqueeze(0), t.unsqueeze(0)
        n = p.shape[0]
        if n == 0:
            raise EmptyBatch("stage has no subjects")
        total = total + hp.lambda1 * adversarial_generator_loss(d)
        total = total + hp.lambda2 / n * l1_loss(p, t).sum()
        total = total + hp.lambda3 / n * kl_alignment_loss(p, t).sum()
    return total


# ---------------------------------------------------------------------------
# models


class Generator(nn.Module):
    """Residual graph-to-graph map.

    Node encodings come from edge-weighted message passing over sorted
    connectivity profiles. The head adds ``h_i^T M h_j / d^2 + a * x_ij + b`` to the
    input edge, with M symmetric; zero head parameters make the generator the
    identity on valid graphs. Output is symmetrised, zero-diagonal, clamped to
    [0, 1] whatever the parameters.
    """

    def __init__(self, num_rois: int, hidden_dims: Sequence[int] = (16, 16)):
        super().__init__()
        dims = [num_rois, *hidden_dims]
        self.num_rois = num_rois
        self.convs = nn.ModuleList(EdgeConv(a, b) for a, b in zip(dims[:-1], dims[1:]))
        d = dims[-1]
        self.pair_weight = nn.Parameter(torch.zeros(d, d, dtype=DTYPE))
        self.edge_scale = nn.Parameter(torch.zeros((), dtype=DTYPE))
        self.edge_bias = nn.Parameter(torch.zeros((), dtype=DTYPE))

    def head_parameters(self):
        return [self.pair_weight, self.edge_scale, self.edge_bias]

    def zero_head(self) -> "Generator":
        with torch.no_grad():
            for p in self.head_parameters():
                p.zero_()
        return self

    def encode(self, adj: torch.Tensor) -> torch.Tensor:
        h = node_profiles(adj)
        for conv in self.convs:
            h = torch.relu(conv(h, adj))
        return h

    def forward(self, adj: torch.Tensor) -> torch.Tensor:
        adj = as_tensor(adj)
        h = self.encode(adj)
        # mean rather than sum over the d*d feature pairs keeps one optimizer
        # step from moving every edge at once
        m = 0.5 * (self.pair_weight + self.pair_weight.T) / self.pair_weight.numel()
        delta = h @ m @ h.transpose(-1, -2) + self.edge_scale * adj + self.edge_bias
        return torch.clamp(symmetrize(adj + delta), 0.0, 1.0)


class Discriminator(nn.Module):
    """Edge-weighted message passing, mean pool, affine, sigmoid."""

    def __init__(self, num_rois: int, hidden_dims: Sequence[int] = (16, 16)):
        super().__init__()
        dims = [num_rois, *hidden_dims]
        self.convs = nn.ModuleList(EdgeConv(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.readout = linear(dims[-1], 1)

    def forward(self, adj: torch.Tensor) -> torch.Tensor:
        adj = as_tensor(adj)
        h = node_profiles(adj)
        for conv in self.convs:
            h = torch.relu(conv(h, adj))
        return torch.sigmoid(self.readout(h.mean(-2))).squeeze(-1)


class CascadeModel(nn.Module):
    def __init__(self, num_rois: int, num_stages: int, hidden_dims: Sequence[int] = (16, 16), seed: int = 0):
        super().__init__()
        if num_stages < 1:
            raise ValueError("a cascade needs at least one stage")
        gen = seeded_generator(seed)
        self.num_rois = num_rois
        self.generators = nn.ModuleList(
            reset_double(Generator(num_rois, hidden_dims), gen).zero_head() for _ in range(num_stages)
        )
        self.discriminators = nn.ModuleList(
            reset_double(Discriminator(num_rois, hidden_dims), gen) for _ in range(num_stages)
        )

    @property
    def num_stages(self) -> int:
        return len(self.generators)

    def forward(self, baseline: torch.Tensor) -> list:
        outs, x = [], baseline
        for g in self.generators:
            x = g(x)
            outs.append(x)
        return outs


def predict_trajectory(model: CascadeModel, baseline) -> list[ConnectivityMatrix]:
    x = as_tensor(baseline)
    if x.shape[-2:] != (model.num_rois, model.num_rois):
        raise DimensionMismatch(f"baseline has shape {tuple(x.shape)}, model expects r={model.num_rois}")
    with torch.no_grad():
        outs = model(x)
    return [ConnectivityMatrix(o.numpy()) for o in outs]


def _stack_timepoints(train: Sequence[Trajectory]) -> list[torch.Tensor]:
    if not train:
        raise EmptyTrainingSet("no training trajectories")
    lengths = {len(t) for t in train}
    if len(lengths) != 1:
        raise InconsistentTrajectoryLength(f"trajectory lengths differ: {sorted(lengths)}")
    rs = {t.num_rois for t in train}
    if len(rs) != 1:
        raise DimensionMismatch(f"mixed ROI counts {sorted(rs)}")
    return [
        torch.as_tensor(np.stack([t.states[k].weights for t in train]), dtype=DTYPE)
        for k in range(lengths.pop())
    ]


def train_cascade(train: Sequence[Trajectory], hp: Optional[EvolutionHyperparams] = None) -> CascadeModel:
    """Adversarially train one generator/discriminator pair per follow-up.

    Every epoch runs the cascade on the full batch of baselines; stage i then
    takes one discriminator step and one generator step on its own term of
    :func:`composite_loss`. Stage i+1 is fed the detached prediction of stage i
    (or the ground truth when ``hp.teacher_forcing`` is set).
    """
    hp = hp or EvolutionHyperparams()
    xs = _stack_timepoints(train)
    n_stages, r = len(xs) - 1, xs[0].shape[-1]
    model = CascadeModel(r, n_stages, hp.hidden_dims, seed=hp.rng_seed)
    betas = (hp.adam_beta1, hp.adam_beta2)
    g_opts = [
        torch.optim.AdamW(g.parameters(), lr=hp.gen_lr_initial, betas=betas, weight_decay=hp.weight_decay)
        for g in model.generators
    ]
    d_opts = [
        torch.optim.AdamW(d.parameters(), lr=hp.disc_lr, betas=betas, weight_decay=hp.weight_decay)
        for d in model.discriminators
    ]

    for epoch in range(hp.epochs):
        lr = hp.generator_lr(epoch)
        inp = xs[0]
        for i in range(n_stages):
            gen, disc, truth = model.generators[i], model.discriminators[i], xs[i + 1]
            for group in g_opts[i].param_groups:
                group["lr"] = lr

            pred = gen(inp)

            d_opts[i].zero_grad()
            d_loss = discriminator_loss(disc(truth), disc(pred.detach()))
            d_loss.backward()
            d_opts[i].step()

            g_opts[i].zero_grad()
            g_loss = composite_loss([pred], [truth], [disc(pred)], hp)
            if not (torch.isfinite(g_loss) and torch.isfinite(d_loss)):
                raise NonConvergence(f"stage {i + 1} loss diverged at epoch {epoch}")
            g_loss.backward()
            g_opts[i].step()

            inp = truth if hp.teacher_forcing else pred.detach()
    model.eval()
    return model
