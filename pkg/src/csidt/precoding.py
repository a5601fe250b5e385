"""Per-subband eigen-precoders from channel Gram averages.

The feedback payload everywhere in this package: the top N_s eigenvectors
of (1/N) sum_n H_n^H H_n over a subband, unit columns, deterministic phase
convention from the Jacobi eigensolver.
"""

from dataclasses import dataclass

import numpy as np

from .channel import ChannelTensor, OfdmGrid, subband_channels
from .linalg import eig_hermitian, eig_hermitian_batch, gram_average


@dataclass(frozen=True)
class SystemConfig:
    n_tx: int = 8
    n_rx: int = 8
    n_streams: int = 2

    def __post_init__(self):
        if self.n_streams > min(self.n_tx, self.n_rx):
            raise ValueError(
                f"n_streams ({self.n_streams}) exceeds min(n_tx, n_rx) "
                f"({min(self.n_tx, self.n_rx)})"
            )


@dataclass
class Precoder:
    """Unit-column N_t x N_s matrix with its eigenvalues, descending."""

    w: np.ndarray
    eigenvalues: np.ndarray
    subband: int = 0
    position_id: int = 0
    domain: str = "DT"

    @property
    def n_streams(self) -> int:
        return self.w.shape[1]


def extract_precoder(
    channels,
    n_streams: int,
    subband: int = 0,
    position_id: int = 0,
    domain: str = "DT",
) -> Precoder:
    """Top-``n_streams`` eigenvectors of the subband Gram average."""
    gram = gram_average(channels)
    if n_streams > gram.shape[0]:
        raise ValueError(f"n_streams ({n_streams}) exceeds N_t ({gram.shape[0]})")
    res = eig_hermitian(gram)
    return Precoder(
        w=res.eigenvectors[:, :n_streams].copy(),
        eigenvalues=res.eigenvalues[:n_streams].copy(),
        subband=subband,
        position_id=position_id,
        domain=domain,
    )


def precoder_dataset(ch: ChannelTensor, grid: OfdmGrid, n_streams: int):
    """One precoder per subband of a channel tensor, in subband order.

    All subband eigendecompositions run through the batched Jacobi solver;
    the result is bitwise identical to per-subband extract_precoder calls.
    """
    groups = subband_channels(ch, grid)
    grams = np.stack([gram_average(block) for _, block in groups])
    if n_streams > grams.shape[1]:
        raise ValueError(f"n_streams ({n_streams}) exceeds N_t ({grams.shape[1]})")
    out = []
    for (k, _), res in zip(groups, eig_hermitian_batch(grams)):
        out.append(
            Precoder(
                w=res.eigenvectors[:, :n_streams].copy(),
                eigenvalues=res.eigenvalues[:n_streams].copy(),
                subband=k,
                position_id=ch.position_id,
                domain=ch.domain,
            )
        )
    return out
