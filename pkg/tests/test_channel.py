import numpy as np
import pytest

from csidt.channel import (
    DOMAIN_CLUSTER,
    ChannelTensor,
    ClusterConfig,
    OfdmGrid,
    cluster_channel,
    subband_channels,
    synth_channel,
)
from csidt.errors import NumericalError
from csidt.raytrace import SPEED_OF_LIGHT, Path, PathSet
from csidt.scene import uniform_linear_array

GRID = OfdmGrid(n_subcarriers=64, subcarrier_spacing_hz=60e3, carrier_hz=3.8e9, n_subbands=4)


def scalar_arrays():
    bs = uniform_linear_array(1, [0, 0, 0], boresight=[1, 0, 0])
    ue = uniform_linear_array(1, [5, 0, 0], boresight=[-1, 0, 0])
    return bs, ue


def make_path(gain, tau_samples, grid=GRID):
    delay = tau_samples / (grid.n_subcarriers * grid.subcarrier_spacing_hz)
    return Path(
        gain=gain, delay_s=delay, aod=(1.0, 0.0, 0.0), aoa=(-1.0, 0.0, 0.0),
        order=0, signature=("t", tau_samples),
    )


def make_pathset(paths, grid=GRID):
    return PathSet(paths=paths, tx=np.zeros(3), rx=np.array([5.0, 0, 0]),
                   carrier_hz=grid.carrier_hz)


class TestOfdmGrid:
    def test_defaults(self):
        g = OfdmGrid()
        assert g.n_subcarriers == 1620
        assert g.n_subbands == 60
        assert g.subband_size == 27

    def test_indivisible_rejected(self):
        with pytest.raises(ValueError):
            OfdmGrid(n_subcarriers=100, n_subbands=60)


class TestSynthChannel:
    def test_zero_delay_flat(self):
        bs, ue = scalar_arrays()
        ch = synth_channel(make_pathset([make_path(0.5 + 0.1j, 0.0)]), GRID, bs, ue)
        assert np.max(np.abs(ch.h - ch.h[0])) <= 1e-12

    def test_quarter_band_delay_phase_step(self):
        # tau = N_c/4 samples: arg(H_{n+1} / H_n) = -2 pi / 4.
        bs, ue = scalar_arrays()
        tau = GRID.n_subcarriers / 4
        ch = synth_channel(make_pathset([make_path(1.0 + 0j, tau)]), GRID, bs, ue)
        ratio = ch.h[1:, 0, 0] / ch.h[:-1, 0, 0]
        assert np.allclose(np.angle(ratio), -np.pi / 2, atol=1e-12)

    def test_two_path_null_pattern(self):
        # Equal gains at tau = 0 and tau = N_c/2: H_n = 1 + e^{-j pi n}, zero at odd n.
        bs, ue = scalar_arrays()
        ps = make_pathset([make_path(1.0 + 0j, 0.0), make_path(1.0 + 0j, GRID.n_subcarriers / 2)])
        ch = synth_channel(ps, GRID, bs, ue)
        mags = np.abs(ch.h[:, 0, 0])
        # Subcarrier index n runs 1..N_c; row i holds n = i + 1.
        odd_rows = np.arange(0, GRID.n_subcarriers, 2)   # n = 1, 3, ...
        even_rows = np.arange(1, GRID.n_subcarriers, 2)  # n = 2, 4, ...
        assert np.max(mags[odd_rows]) <= 1e-12
        assert np.min(mags[even_rows]) >= 2.0 - 1e-12

    def test_linearity_in_paths(self):
        bs = uniform_linear_array(4, [0, 0, 0], boresight=[1, 0, 0])
        ue = uniform_linear_array(2, [5, 0, 0], boresight=[-1, 0, 0])
        rng = np.random.default_rng(2)
        p1 = [make_path(complex(*rng.standard_normal(2)), float(rng.uniform(0, 8))) for _ in range(3)]
        p2 = [make_path(complex(*rng.standard_normal(2)), float(rng.uniform(0, 8))) for _ in range(4)]
        h1 = synth_channel(make_pathset(p1), GRID, bs, ue).h
        h2 = synth_channel(make_pathset(p2), GRID, bs, ue).h
        h12 = synth_channel(make_pathset(p1 + p2), GRID, bs, ue).h
        assert np.max(np.abs(h12 - (h1 + h2))) <= 1e-12

    @pytest.mark.parametrize("tau", [7.0, 11.2, 23.8])
    def test_idft_energy_concentrates_at_delay_tap(self, tau):
        # Rectangular-window leakage caps the in-window share near fractional
        # offsets of 0.5, so the localization bound is checked at offsets
        # up to 0.2 where >= 95% must land within +-1 tap.
        bs, ue = scalar_arrays()
        ch = synth_channel(make_pathset([make_path(1.0 + 0j, tau)]), GRID, bs, ue)
        taps = np.fft.ifft(ch.h[:, 0, 0])
        energy = np.abs(taps) ** 2
        window = [round(tau) - 1, round(tau), round(tau) + 1]
        assert energy[window].sum() / energy.sum() >= 0.95

    def test_excessive_delay_rejected(self):
        bs, ue = scalar_arrays()
        with pytest.raises(NumericalError):
            synth_channel(make_pathset([make_path(1.0, GRID.n_subcarriers + 1)]), GRID, bs, ue)

    def test_empty_pathset_rejected(self):
        bs, ue = scalar_arrays()
        with pytest.raises(ValueError):
            synth_channel(make_pathset([]), GRID, bs, ue)


class TestSubbands:
    def test_default_grouping_shape(self):
        grid = OfdmGrid()
        bs, ue = scalar_arrays()
        ch = synth_channel(make_pathset([make_path(1.0, 3.0, grid)], grid), grid, bs, ue)
        groups = subband_channels(ch, grid)
        assert len(groups) == 60
        assert all(len(block) == 27 for _, block in groups)
        assert [k for k, _ in groups] == list(range(60))

    def test_tiny_grouping(self):
        grid = OfdmGrid(n_subcarriers=4, n_subbands=2)
        h = np.arange(4, dtype=complex).reshape(4, 1, 1)
        ch = ChannelTensor(h=h, position_id=0, domain="DT")
        groups = subband_channels(ch, grid)
        assert groups[0][1][0][0, 0] == 0 and groups[0][1][1][0, 0] == 1
        assert groups[1][1][0][0, 0] == 2 and groups[1][1][1][0, 0] == 3

    def test_concatenation_recovers_sequence(self):
        bs, ue = scalar_arrays()
        ch = synth_channel(make_pathset([make_path(1.0, 5.0)]), GRID, bs, ue)
        groups = subband_channels(ch, GRID)
        flat = [m for _, block in groups for m in block]
        assert len(flat) == GRID.n_subcarriers
        for i, m in enumerate(flat):
            assert np.array_equal(m, ch.h[i])

    def test_mismatched_tensor_rejected(self):
        bs, ue = scalar_arrays()
        ch = synth_channel(make_pathset([make_path(1.0, 0.0)]), GRID, bs, ue)
        with pytest.raises(ValueError):
            subband_channels(ch, OfdmGrid(n_subcarriers=128, n_subbands=4))


class TestClusterChannel:
    def arrays(self):
        bs = uniform_linear_array(2, [0, 0, 10], boresight=[1, 0, 0])
        ue = uniform_linear_array(2, [30, 0, 1.5], boresight=[-1, 0, 0])
        return bs, ue

    def test_degenerate_single_path_flat(self):
        bs, ue = self.arrays()
        cfg = ClusterConfig(n_clusters=1, rays_per_cluster=1,
                            delay_spread_s=0.0, angular_spread_deg=0.0)
        ch = cluster_channel(cfg, GRID, bs, ue, seed=5)
        assert ch.domain == DOMAIN_CLUSTER
        assert np.max(np.abs(ch.h - ch.h[0])) <= 1e-12

    def test_seed_determinism(self):
        bs, ue = self.arrays()
        cfg = ClusterConfig()
        a = cluster_channel(cfg, GRID, bs, ue, seed=123)
        b = cluster_channel(cfg, GRID, bs, ue, seed=123)
        assert np.array_equal(a.h, b.h)

    def test_different_seeds_differ(self):
        bs, ue = self.arrays()
        cfg = ClusterConfig()
        a = cluster_channel(cfg, GRID, bs, ue, seed=1)
        b = cluster_channel(cfg, GRID, bs, ue, seed=2)
        assert not np.array_equal(a.h, b.h)

    def test_monte_carlo_unit_power(self):
        # E[mean_n ||H_n||_F^2] = 1 by the unit-energy gain normalization.
        grid = OfdmGrid(n_subcarriers=60, n_subbands=60)
        bs, ue = self.arrays()
        cfg = ClusterConfig(n_clusters=3, rays_per_cluster=4)
        total = 0.0
        n_seeds = 10_000
        for seed in range(n_seeds):
            h = cluster_channel(cfg, grid, bs, ue, seed=seed).h
            total += float(np.mean(np.sum(np.abs(h) ** 2, axis=(1, 2))))
        assert total / n_seeds == pytest.approx(1.0, rel=0.05)

    def test_zero_clusters_rejected(self):
        with pytest.raises(ValueError):
            ClusterConfig(n_clusters=0)
