"""Singular values of the centred label matrix via the group reduction.

For counts grouped as ``(N_i, l_i)``, the K singular values of
``(I - n 1^T / N) diag(sqrt n)`` are ``sqrt(N_i)`` repeated ``l_i - 1`` times
for every group, together with the ``m`` singular values of a small
``m x m`` matrix built from the groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imbalance import ImbalanceSpec
from .linalg import svd_desc

GROUP_REPEAT = "group-repeat"
G_MATRIX = "G-matrix"


@dataclass(frozen=True)
class GroupSpectrum:
    g: np.ndarray
    g_singulars: np.ndarray
    full_singulars: np.ndarray
    # (value, multiplicity, source) in the order the values were assembled
    multiplicities: list[tuple[float, int, str]]


def group_matrix(spec: ImbalanceSpec) -> np.ndarray:
    sizes = np.array([g[0] for g in spec.groups], dtype=np.float64)
    mult = np.array([g[1] for g in spec.groups], dtype=np.float64)
    N = spec.N
    g = -np.outer(sizes, np.sqrt(sizes)) / N * np.sqrt(np.outer(mult, mult))
    np.fill_diagonal(g, np.sqrt(sizes) * (1.0 - sizes * mult / N))
    return g


def closed_form_g_singulars(spec: ImbalanceSpec) -> np.ndarray:
    """Closed-form singular values of the group matrix for two or three groups."""
    K, N = spec.K, spec.N
    if spec.m == 2:
        (n1, _), (n2, _) = spec.groups
        return np.array([math.sqrt(K * n1 * n2 / N), 0.0])
    if spec.m == 3:
        (n1, l1), (n2, l2), (n3, l3) = spec.groups
        a = (n1 * (n2 * l2 + n3 * l3) + n2 * (n1 * l1 + n3 * l3) + n3 * (n1 * l1 + n2 * l2)) / N
        b = K * n1 * n2 * n3 / N
        # roots of x^2 - a x + b; a > 0, take the large root without cancellation
        disc = max(a * a - 4.0 * b, 0.0)
        big = 0.5 * (a + math.sqrt(disc))
        small = b / big
        return np.array([math.sqrt(big), math.sqrt(small), 0.0])
    raise ValueError("closed form unavailable; use group_matrix + svd")


def full_spectrum(spec: ImbalanceSpec) -> GroupSpectrum:
    if spec.m == 1:
        n1 = spec.groups[0][0]
        g = np.zeros((1, 1))
        full = np.array([math.sqrt(n1)] * (spec.K - 1) + [0.0])
        mults = [(math.sqrt(n1), spec.K - 1, GROUP_REPEAT), (0.0, 1, G_MATRIX)]
        return GroupSpectrum(g=g, g_singulars=np.zeros(1), full_singulars=full, multiplicities=mults)

    g = group_matrix(spec)
    g_s = svd_desc(g).s
    values = []
    mults = []
    for (size, count), sigma in zip(spec.groups, g_s):
        if count > 1:
            values.extend([math.sqrt(size)] * (count - 1))
            mults.append((math.sqrt(size), count - 1, GROUP_REPEAT))
        values.append(float(sigma))
        mults.append((float(sigma), 1, G_MATRIX))
    full = np.sort(np.array(values))[::-1]
    return GroupSpectrum(g=g, g_singulars=g_s, full_singulars=full, multiplicities=mults)


def interlacing_margins(spec: ImbalanceSpec, g_singulars=None) -> np.ndarray:
    """Gaps of the chain ``0 = s_m < sqrt(N_m) < s_{m-1} < ... < s_1 < sqrt(N_1)``.

    Returned from the bottom of the chain upward, excluding the leading
    ``s_m = 0`` entry; every entry is positive exactly when the chain is
    strictly interlaced.
    """
    if g_singulars is None:
        g_singulars = svd_desc(group_matrix(spec)).s
    roots = [math.sqrt(size) for size, _ in spec.groups]
    m = spec.m
    chain = [float(g_singulars[m - 1])]
    for i in range(m - 1, 0, -1):
        chain.append(roots[i])
        chain.append(float(g_singulars[i - 1]))
    chain.append(roots[0])
    return np.diff(chain)
