"""Tokenised algebra tasks: binary operations over Z_p and composition in S5."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OPERATIONS = ("add", "mul", "div", "s5")


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    k = 3
    while k * k <= n:
        if n % k == 0:
            return False
        k += 2
    return True


def mod_inverse(b: int, p: int) -> int:
    """Multiplicative inverse of ``b`` modulo prime ``p`` as b^(p-2) mod p."""
    if not is_prime(p):
        raise ValueError(f"modulus {p} is not prime")
    if not 1 <= b < p:
        raise ValueError(f"{b} has no inverse modulo {p}")
    result, base, e = 1, b % p, p - 2
    while e:
        if e & 1:
            result = result * base % p
        base = base * base % p
        e >>= 1
    return result


@dataclass(frozen=True)
class TaskSpec:
    operation: str = "mul"
    p: int = 97
    train_fraction: float = 0.3
    split_seed: int = 0

    def __post_init__(self):
        if self.operation not in OPERATIONS:
            raise ValueError(f"unknown operation {self.operation!r}; expected one of {OPERATIONS}")
        if self.operation != "s5" and not is_prime(self.p):
            raise ValueError(f"modulus {self.p} is not prime")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class Dataset:
    """All task pairs as ``[a, b, EQ]`` rows with a fixed train/test partition."""

    sequences: np.ndarray  # [n, 3] int64
    labels: np.ndarray  # [n] int64
    train_idx: np.ndarray
    test_idx: np.ndarray
    vocab_size: int
    n_classes: int
    spec: TaskSpec = field(compare=False)

    @property
    def eq_token(self) -> int:
        return self.vocab_size - 1

    def split(self, name: str) -> np.ndarray:
        if name == "train":
            return self.train_idx
        if name == "test":
            return self.test_idx
        raise ValueError(f"unknown split {name!r}")

    def to_csv(self, path) -> None:
        """Write ``a,b,label,split`` rows for auditing."""
        split = np.empty(len(self.labels), dtype=object)
        split[self.train_idx] = "train"
        split[self.test_idx] = "test"
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a", "b", "label", "split"])
            for (a, b, _), y, s in zip(self.sequences, self.labels, split):
                w.writerow([int(a), int(b), int(y), s])


def _split(n: int, spec: TaskSpec) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(spec.train_fraction * n))
    rng = np.random.default_rng(spec.split_seed)
    perm = rng.permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def generate_modular(spec: TaskSpec) -> Dataset:
    if spec.operation not in ("add", "mul", "div"):
        raise ValueError(f"{spec.operation!r} is not a modular operation")
    p = spec.p
    b_lo = 1 if spec.operation == "div" else 0
    a, b = np.meshgrid(np.arange(p), np.arange(b_lo, p), indexing="ij")
    a, b = a.ravel(), b.ravel()
    if spec.operation == "add":
        y = (a + b) % p
    elif spec.operation == "mul":
        y = (a * b) % p
    else:
        inv = np.array([0] + [mod_inverse(int(k), p) for k in range(1, p)])
        y = (a * inv[b]) % p
    seqs = np.stack([a, b, np.full_like(a, p)], axis=1).astype(np.int64)
    train, test = _split(len(y), spec)
    return Dataset(seqs, y.astype(np.int64), train, test, vocab_size=p + 1, n_classes=p, spec=spec)


def permutations(n: int) -> list[tuple[int, ...]]:
    """All permutations of ``range(n)`` in lexicographic order of one-line notation."""
    return list(itertools.permutations(range(n)))


def compose(sigma_j, sigma_i) -> tuple[int, ...]:
    """(sigma_j o sigma_i)(x) = sigma_j(sigma_i(x)), i.e. sigma_i is applied first."""
    return tuple(sigma_j[sigma_i[x]] for x in range(len(sigma_i)))


def composition_table(n: int) -> np.ndarray:
    """``table[i, j]`` = rank of sigma_j o sigma_i over lexicographically ranked S_n."""
    perms = permutations(n)
    rank = {s: r for r, s in enumerate(perms)}
    k = len(perms)
    table = np.empty((k, k), dtype=np.int64)
    for i, si in enumerate(perms):
        for j, sj in enumerate(perms):
            table[i, j] = rank[compose(sj, si)]
    return table


def generate_s5(spec: TaskSpec) -> Dataset:
    if spec.operation != "s5":
        raise ValueError("generate_s5 needs operation='s5'")
    table = composition_table(5)
    k = table.shape[0]
    i, j = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    i, j = i.ravel(), j.ravel()
    seqs = np.stack([i, j, np.full_like(i, k)], axis=1).astype(np.int64)
    y = table[i, j]
    train, test = _split(len(y), spec)
    return Dataset(seqs, y, train, test, vocab_size=k + 1, n_classes=k, spec=spec)


def make_dataset(spec: TaskSpec) -> Dataset:
    return generate_s5(spec) if spec.operation == "s5" else generate_modular(spec)


def sample_batch(dataset: Dataset, split: str, batch_size: int, rng: np.random.Generator):
    """Draw ``batch_size`` rows uniformly with replacement from ``split``."""
    idx = dataset.split(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    pick = idx[rng.integers(0, len(idx), size=batch_size)]
    return dataset.sequences[pick], dataset.labels[pick]
