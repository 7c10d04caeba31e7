"""Class-count bookkeeping and the label matrices derived from it."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .linalg import SvdFactors, svd_desc


@dataclass(frozen=True)
class ImbalanceSpec:
    """Per-class sample counts ``n = [n_1, ..., n_K]``.

    ``groups`` lists ``(N_i, l_i)`` pairs: the distinct class sizes in
    strictly decreasing order and how many classes have each size.
    """

    counts: tuple[int, ...]
    groups: tuple[tuple[int, int], ...] = field(init=False, repr=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) < 2:
            raise ValueError("need at least two classes")
        if any(c < 1 for c in counts):
            raise ValueError("empty class: every count must be >= 1")
        object.__setattr__(self, "counts", counts)
        sizes = sorted(set(counts), reverse=True)
        object.__setattr__(
            self, "groups", tuple((s, counts.count(s)) for s in sizes)
        )

    @property
    def K(self) -> int:
        return len(self.counts)

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def m(self) -> int:
        return len(self.groups)

    @property
    def n(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64)

    @property
    def labels(self) -> np.ndarray:
        """Class index of every sample column, class-major order."""
        return np.repeat(np.arange(self.K), self.counts)

    def is_balanced(self) -> bool:
        return self.m == 1


def spec_from_counts(counts) -> ImbalanceSpec:
    return ImbalanceSpec(tuple(counts))


def parse_counts(text: str) -> ImbalanceSpec:
    """Parse ``"8,8,2,2"`` into a spec."""
    try:
        counts = [int(tok) for tok in text.replace(" ", "").split(",") if tok]
    except ValueError:
        raise ValueError(f"bad counts {text!r}; expected comma-separated integers") from None
    return ImbalanceSpec(tuple(counts))


def target_bias(spec: ImbalanceSpec) -> np.ndarray:
    """Optimal bias ``n / N`` of the biased model."""
    return spec.n / spec.N


@dataclass(frozen=True)
class LabelAlgebra:
    """One-hot labels ``y``, ``d = diag(sqrt n)``, centred labels and their SVD.

    ``y_hat = y_tilde @ d`` is the effective target once the optimal bias has
    been substituted; ``svd`` factors it as ``u diag(kappa) v^T``.
    """

    spec: ImbalanceSpec
    y: np.ndarray
    d: np.ndarray
    y_tilde: np.ndarray
    y_hat: np.ndarray
    svd: SvdFactors

    @property
    def kappa(self) -> np.ndarray:
        return self.svd.s

    @cached_property
    def biasfree_svd(self) -> SvdFactors:
        """SVD of ``d`` itself, the target of the bias-free model.

        The factors are the permutation sorting ``sqrt(n)`` in decreasing
        order (stable, so equal counts keep class order).
        """
        root_n = np.sqrt(self.spec.n)
        order = np.argsort(-root_n, kind="stable")
        perm = np.eye(self.spec.K)[:, order]
        return SvdFactors(u=perm, s=root_n[order], v=perm.copy())

    def target_svd(self, bias: bool) -> SvdFactors:
        return self.svd if bias else self.biasfree_svd


def label_algebra(spec: ImbalanceSpec) -> LabelAlgebra:
    K, N, n = spec.K, spec.N, spec.n
    y = np.zeros((K, N))
    y[spec.labels, np.arange(N)] = 1.0
    d = np.diag(np.sqrt(n))
    y_tilde = np.eye(K) - np.outer(n, np.ones(K)) / N
    y_hat = y_tilde @ d
    return LabelAlgebra(spec=spec, y=y, d=d, y_tilde=y_tilde, y_hat=y_hat, svd=svd_desc(y_hat))
