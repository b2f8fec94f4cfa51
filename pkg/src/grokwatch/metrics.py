"""Checkpoint metrics: ILDR, weight norm, passive GrokFast EMA, spectral entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping, NamedTuple, Optional

import numpy as np

ILDR_EPS = 1e-8
GROKFAST_ALPHA = 0.99
SUBSAMPLE_MAX = 1500


class ILDRResult(NamedTuple):
    ildr: float
    inter: float
    intra: float


def class_centroids(phi: np.ndarray, labels: np.ndarray):
    """Return ``(classes, centroids, inverse, counts)`` for the classes present in ``labels``."""
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    sums = np.add.reduceat(phi[order], starts, axis=0)
    return classes, sums / counts[:, None], inverse, counts


def ildr(phi, labels, eps: float = ILDR_EPS) -> ILDRResult:
    """Inter/intra-class distance ratio of representations ``phi`` [N, d].

    intra: per-class mean squared distance to the class centroid, averaged
    over classes with equal weight.
    inter: mean squared distance over all unordered pairs of class centroids.
    Classes that do not appear in ``labels`` are ignored.
    """
    phi = np.asarray(phi, dtype=np.float64)
    labels = np.asarray(labels)
    if phi.ndim != 2 or len(phi) == 0:
        raise ValueError("ildr needs a non-empty [N, d] batch")
    if len(labels) != len(phi):
        raise ValueError("phi and labels differ in length")
    _, mu, inverse, counts = class_centroids(phi, labels)
    n_cls = len(counts)
    if n_cls < 2:
        raise ValueError("ildr needs at least two distinct classes")

    resid = phi - mu[inverse]
    sq = np.einsum("ij,ij->i", resid, resid)
    intra = float(np.mean(np.bincount(inverse, weights=sq, minlength=n_cls) / counts))

    # sum over pairs of |mu_c - mu_c'|^2 equals C * sum_c |mu_c - mean(mu)|^2
    centered = mu - mu.mean(axis=0)
    inter = float(2.0 / (n_cls - 1) * np.einsum("ij,ij->", centered, centered))
    return ILDRResult(inter / (intra + eps), inter, intra)


def subsample(test_idx, n_max: int = SUBSAMPLE_MAX, seed: int = 0) -> np.ndarray:
    """Fixed evaluation subset of the held-out indices, drawn once per run."""
    test_idx = np.asarray(test_idx)
    if len(test_idx) == 0:
        raise ValueError("test split is empty")
    if len(test_idx) <= n_max:
        return np.array(test_idx, copy=True)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(test_idx, size=n_max, replace=False))


def _arrays(params) -> list[np.ndarray]:
    vals = params.values() if isinstance(params, Mapping) else params
    return [getattr(p, "data", p) for p in vals]


def weight_norm(params) -> float:
    """Sum over parameter tensors of their L2 (Frobenius) norms."""
    return float(sum(np.linalg.norm(np.ravel(a)) for a in _arrays(params)))


class GrokfastState:
    """Slow-gradient EMA tracked passively: gradients are read, never modified."""

    def __init__(self, alpha: float = GROKFAST_ALPHA):
        if not 0.0 <= alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        self.alpha = alpha
        self.buffers: dict[str, np.ndarray] = {}

    def update(self, grads: Mapping[str, np.ndarray]) -> float:
        a = self.alpha
        grads = {name: np.asarray(getattr(g, "grad", g)) for name, g in grads.items()}
        if self.buffers:
            if set(self.buffers) != set(grads):
                raise ValueError("gradient set changed between updates")
            for name, g in grads.items():
                if self.buffers[name].shape != g.shape:
                    raise ValueError(f"gradient shape for {name} changed from "
                                     f"{self.buffers[name].shape} to {g.shape}")
        total = 0.0
        for name, g in grads.items():
            buf = self.buffers.get(name)
            if buf is None:
                buf = self.buffers[name] = np.zeros_like(g, dtype=np.float64)
            buf *= a
            buf += (1.0 - a) * g
            total += float(np.vdot(buf, buf))
        return math.sqrt(total)

    def magnitude(self) -> float:
        return math.sqrt(sum(float((b * b).sum()) for b in self.buffers.values()))


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings covering every column pair once per sweep, disjoint within a round."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[k], players[m - 1 - k]) for k in range(m // 2)]
        pairs = [(min(p), max(p)) for p in pairs if -1 not in p]
        rounds.append((np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def singular_values(a, tol: float = 1e-10, max_sweeps: int = 60) -> np.ndarray:
    """Singular values (descending) by one-sided Jacobi rotations.

    Columns are rotated pairwise until mutually orthogonal, which diagonalises
    A^T A without forming it; the column norms are then the singular values.
    Disjoint column pairs are rotated together in round-robin order.
    """
    u = np.array(a, dtype=np.float64, copy=True)
    if u.ndim != 2:
        raise ValueError("expected a matrix")
    if u.shape[0] < u.shape[1]:
        u = u.T.copy()
    n = u.shape[1]
    if n < 2:
        return np.sqrt((u * u).sum(axis=0))
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        rotated = False
        for I, J in rounds:
            ui, uj = u[:, I], u[:, J]
            alpha = (ui * ui).sum(axis=0)
            beta = (uj * uj).sum(axis=0)
            gamma = (ui * uj).sum(axis=0)
            act = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not act.any():
                continue
            rotated = True
            I, J = I[act], J[act]
            ui, uj = ui[:, act], uj[:, act]
            alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            u[:, I] = c * ui - s * uj
            u[:, J] = s * ui + c * uj
        if not rotated:
            break
    return np.sort(np.sqrt((u * u).sum(axis=0)))[::-1]


def spectral_entropy_of(matrix, tol: float = 1e-10) -> float:
    """Shannon entropy (nats) of the normalised singular-value distribution; 0 for a zero matrix."""
    sv = singular_values(matrix, tol=tol)
    total = sv.sum()
    if total <= 0:
        return 0.0
    p = sv[sv > 0] / total
    return float(-(p * np.log(p)).sum())


SPECTRAL_MATRICES = ("tok_emb", "l0.wq")


def spectral_entropy(params, names=SPECTRAL_MATRICES) -> float:
    """Summed entropy over the token embedding and the first query projection."""
    return float(sum(spectral_entropy_of(getattr(params[n], "data", params[n])) for n in names))


@dataclass
class MetricSnapshot:
    step: int
    train_acc: float
    val_acc: float
    ildr: float
    inter: float
    intra: float
    weight_norm: float
    grokfast_norm: float
    spectral_entropy: float
    lr: float
    wd: float

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def snapshot_metrics(model, dataset, eval_idx: np.ndarray, grokfast: Optional[GrokfastState],
                     step: int, lr: float, wd: float) -> MetricSnapshot:
    """Evaluate the full metric row for one checkpoint."""
    from .model import evaluate, representations

    phi = representations(model, dataset.sequences[eval_idx])
    res = ildr(phi, dataset.labels[eval_idx])
    return MetricSnapshot(
        step=step,
        train_acc=evaluate(model, dataset, "train"),
        val_acc=evaluate(model, dataset, "test"),
        ildr=res.ildr,
        inter=res.inter,
        intra=res.intra,
        weight_norm=weight_norm(model.params),
        grokfast_norm=grokfast.magnitude() if grokfast is not None else float("nan"),
        spectral_entropy=spectral_entropy(model.params),
        lr=lr,
        wd=wd,
    )
