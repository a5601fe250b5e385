"""Frequency-domain channel assembly and the stochastic cluster baseline.

Per-subcarrier channels follow H_n = sum_l G_l * exp(-j 2 pi (n / N_c) *
tau_l) with the subcarrier index n running 1..N_c and tau_l the path delay
normalized to bandwidth samples, tau_l = delay_s * N_c * spacing. The
cluster generator stands in for standardized stochastic models: exponential
cluster delays, Laplacian ray angles around each cluster, exponentially
decaying cluster powers, uniform ray phases.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .raytrace import Path, PathSet, path_channel_gain
from .scene import AntennaArray

DOMAIN_DT = "DT"
DOMAIN_RW_PROXY = "RW_PROXY"
DOMAIN_CLUSTER = "CLUSTER"
DOMAINS = (DOMAIN_DT, DOMAIN_RW_PROXY, DOMAIN_CLUSTER)


@dataclass(frozen=True)
class OfdmGrid:
    """OFDM numerology: 100 MHz-class grid at 3.8 GHz by default."""

    n_subcarriers: int = 1620
    subcarrier_spacing_hz: float = 60e3
    carrier_hz: float = 3.8e9
    n_subbands: int = 60

    def __post_init__(self):
        if self.n_subcarriers % self.n_subbands != 0:
            raise ValueError(
                f"n_subcarriers ({self.n_subcarriers}) not divisible by "
                f"n_subbands ({self.n_subbands})"
            )

    @property
    def subband_size(self) -> int:
        return self.n_subcarriers // self.n_subbands

    @property
    def bandwidth_hz(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing_hz


@dataclass
class ChannelTensor:
    """Stack of per-subcarrier channel matrices, shape (N_c, N_r, N_t)."""

    h: np.ndarray
    position_id: int
    domain: str

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain tag {self.domain!r}")
        if self.h.ndim != 3:
            raise ValueError("channel tensor must be (N_c, N_r, N_t)")

    @property
    def n_subcarriers(self) -> int:
        return self.h.shape[0]


def synth_channel(
    paths: PathSet,
    grid: OfdmGrid,
    bs: AntennaArray,
    ue: AntennaArray,
    position_id: int = 0,
    domain: str = DOMAIN_DT,
) -> ChannelTensor:
    """Assemble the per-subcarrier channel from a traced path set.

    Exact sum over paths, no approximation. Raises if any normalized delay
    exceeds one OFDM symbol (N_c samples); clamping would alias silently.
    """
    if len(paths) == 0:
        raise ValueError("synth_channel needs a nonempty path set")
    wavelength = 299_792_458.0 / grid.carrier_hz
    n_c = grid.n_subcarriers
    n = np.arange(1, n_c + 1)

    gains = np.stack(
        [path_channel_gain(p, bs, ue, wavelength) for p in paths.paths]
    )  # (L, N_r, N_t)
    taus = np.array([p.delay_s for p in paths.paths]) * n_c * grid.subcarrier_spacing_hz
    over = taus > n_c
    if np.any(over):
        worst = float(np.max(taus))
        raise NumericalError(
            f"path delay {worst:.3f} samples exceeds one OFDM symbol ({n_c}); "
            "refusing to clamp"
        )
    phase = np.exp(-2j * np.pi * np.outer(n / n_c, taus))  # (N_c, L)
    h = np.einsum("nl,lrt->nrt", phase, gains)
    return ChannelTensor(h=h, position_id=position_id, domain=domain)


def subband_channels(ch: ChannelTensor, grid: OfdmGrid):
    """Partition per-subcarrier matrices into consecutive subband groups.

    Returns [(subband_id, [H_n, ...]), ...]; order preserving, no drops.
    """
    if ch.n_subcarriers != grid.n_subcarriers:
        raise ValueError(
            f"tensor has {ch.n_subcarriers} subcarriers, grid expects {grid.n_subcarriers}"
        )
    size = grid.subband_size
    out = []
    for k in range(grid.n_subbands):
        block = [ch.h[k * size + i] for i in range(size)]
        out.append((k, block))
    return out


@dataclass(frozen=True)
class ClusterConfig:
    """Knobs of the stochastic cluster generator."""

    n_clusters: int = 6
    rays_per_cluster: int = 8
    delay_spread_s: float = 120e-9
    angular_spread_deg: float = 20.0
    power_decay: float = 1.0

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("need at least one cluster")
        if self.rays_per_cluster < 1:
            raise ValueError("need at least one ray per cluster")


def _angles_to_unit(az: float, el: float) -> np.ndarray:
    return np.array(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
    )


def cluster_channel(
    cfg: ClusterConfig,
    grid: OfdmGrid,
    bs: AntennaArray,
    ue: AntennaArray,
    seed: int,
    position_id: int = 0,
) -> ChannelTensor:
    """Draw one stochastic multipath realization and synthesize its channel.

    Deterministic per seed. Path gains are scaled so the expanded gain
    matrices carry unit total Frobenius energy, which puts the expected
    mean subcarrier energy at one.
    """
    rng = np.random.default_rng(seed)
    spread = math.radians(cfg.angular_spread_deg)

    if cfg.delay_spread_s == 0.0:
        cluster_delays = np.zeros(cfg.n_clusters)
        powers = np.full(cfg.n_clusters, 1.0 / cfg.n_clusters)
    else:
        cluster_delays = np.sort(rng.exponential(cfg.delay_spread_s, cfg.n_clusters))
        cluster_delays -= cluster_delays[0]
        powers = np.exp(-cluster_delays / (cfg.delay_spread_s * cfg.power_decay))
        powers /= powers.sum()

    paths = []
    for c in range(cfg.n_clusters):
        aod_c = rng.uniform(-math.pi, math.pi)
        aoa_c = rng.uniform(-math.pi, math.pi)
        el_d = rng.uniform(-0.2, 0.2)
        el_a = rng.uniform(-0.2, 0.2)
        ray_amp = math.sqrt(powers[c] / cfg.rays_per_cluster)
        for _ in range(cfg.rays_per_cluster):
            az_d = aod_c + rng.laplace(0.0, spread)
            az_a = aoa_c + rng.laplace(0.0, spread)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            paths.append(
                Path(
                    gain=ray_amp * np.exp(1j * phase),
                    delay_s=float(cluster_delays[c]),
                    aod=tuple(_angles_to_unit(az_d, el_d)),
                    aoa=tuple(_angles_to_unit(az_a, el_a)),
                    order=0,
                    signature=("cluster", c, len(paths)),
                )
            )

    wavelength = 299_792_458.0 / grid.carrier_hz
    energy = sum(
        np.linalg.norm(path_channel_gain(p, bs, ue, wavelength)) ** 2 for p in paths
    )
    if energy > 0:
        scale = 1.0 / math.sqrt(energy)
        paths = [
            Path(
                gain=p.gain * scale,
                delay_s=p.delay_s,
                aod=p.aod,
                aoa=p.aoa,
                order=p.order,
                signature=p.signature,
            )
            for p in paths
        ]
    pathset = PathSet(
        paths=paths, tx=bs.position, rx=ue.position, carrier_hz=grid.carrier_hz
    )
    return synth_channel(pathset, grid, bs, ue, position_id=position_id, domain=DOMAIN_CLUSTER)
