"""Evaluation metrics: precoder cosine similarity, AoA similarity, pairwise
similarity heatmaps, and a Shannon-rate proxy with a linear MMSE receiver.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelTensor, OfdmGrid


def rho(w, w_hat, squared: bool = False) -> float:
    """Stream-matched cosine similarity in [0, 1].

    rho = (1/N_s) sum_s |<w_s, w_hat_s>| for unit columns; the squared form
    averages |.|^2 instead (sensitivity-check variant).
    """
    a = np.asarray(getattr(w, "w", w))
    b = np.asarray(getattr(w_hat, "w", w_hat))
    if a.shape != b.shape:
        raise ValueError(f"precoder shape mismatch: {a.shape} vs {b.shape}")
    inner = np.abs(np.sum(a.conj() * b, axis=0))
    if squared:
        inner = inner**2
    return float(np.mean(inner))


@dataclass(frozen=True)
class DirectionAngles:
    """Azimuth theta in (-pi, pi], elevation phi in [-pi/2, pi/2]."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not -math.pi < self.azimuth <= math.pi + 1e-12:
            raise ValueError(f"azimuth {self.azimuth} outside (-pi, pi]")
        if not -math.pi / 2 - 1e-12 <= self.elevation <= math.pi / 2 + 1e-12:
            raise ValueError(f"elevation {self.elevation} outside [-pi/2, pi/2]")


def direction_vector(a: DirectionAngles) -> np.ndarray:
    """u = [cos(phi)cos(theta), cos(phi)sin(theta), sin(phi)]."""
    return np.array(
        [
            math.cos(a.elevation) * math.cos(a.azimuth),
            math.cos(a.elevation) * math.sin(a.azimuth),
            math.sin(a.elevation),
        ]
    )


def angles_from_vector(u) -> DirectionAngles:
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    return DirectionAngles(
        azimuth=math.atan2(u[1], u[0]),
        elevation=math.asin(max(-1.0, min(1.0, u[2]))),
    )


def aoa_similarity(a: DirectionAngles, b: DirectionAngles) -> float:
    """Inner product of the two 3-D direction vectors, in [-1, 1]."""
    return float(np.dot(direction_vector(a), direction_vector(b)))


def similarity_heatmap(precoders) -> np.ndarray:
    """Pairwise rho matrix over a list of same-subband precoders."""
    if len(precoders) < 2:
        raise ValueError("heatmap needs at least two precoders")
    n = len(precoders)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = rho(precoders[i], precoders[j])
    return out


def rate_proxy(ch: ChannelTensor, precoders, snr: float, grid: OfdmGrid) -> float:
    """Mean spectral efficiency of an MMSE receiver on H_n w, bits/s/Hz.

    ``precoders`` holds one reconstruction per subband (subband-ordered).
    Per stream, SINR_s = 1 / [(I + (snr/N_s) A^H A)^{-1}]_ss - 1 with
    A = H_n w; the rate sums log2(1 + SINR_s) and averages over
    subcarriers. Singular inversions fall back to a 1e-12 ridge.
    """
    if ch.n_subcarriers != grid.n_subcarriers:
        raise ValueError("channel tensor does not match the grid")
    if len(precoders) != grid.n_subbands:
        raise ValueError(
            f"need {grid.n_subbands} per-subband precoders, got {len(precoders)}"
        )
    size = grid.subband_size
    n_streams = np.asarray(getattr(precoders[0], "w", precoders[0])).shape[1]
    ws = np.stack([np.asarray(getattr(p, "w", p)) for p in precoders])  # (K, N_t, N_s)
    w_per_sc = np.repeat(ws, size, axis=0)  # (N_c, N_t, N_s)
    a = np.einsum("nrt,nts->nrs", ch.h, w_per_sc)
    gram = np.einsum("nrs,nrq->nsq", a.conj(), a)
    m = np.eye(n_streams)[None] + (snr / n_streams) * gram
    try:
        minv = np.linalg.inv(m)
    except np.linalg.LinAlgError:
        minv = np.linalg.inv(m + 1e-12 * np.eye(n_streams)[None])
    diag = np.real(np.einsum("nss->ns", minv))
    diag = np.clip(diag, 1e-300, None)
    rates = np.sum(-np.log2(diag), axis=1)
    return float(np.mean(rates))


def write_matrix_csv(matrix: np.ndarray, path, label: str = "rho") -> None:
    """Emit a similarity matrix with an index header row/column."""
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([label] + [str(j) for j in range(matrix.shape[1])])
        for i, row in enumerate(matrix):
            writer.writerow([str(i)] + [repr(float(v)) for v in row])


def write_rows_csv(rows, fieldnames, path) -> None:
    """Emit per-method summary rows with a fixed column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
