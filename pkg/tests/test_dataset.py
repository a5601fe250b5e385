import numpy as np
import pytest

from csidt.channel import ClusterConfig, OfdmGrid
from csidt.dataset import (
    Corpus,
    CorpusHeader,
    CorpusRecord,
    PerturbSpec,
    build_cluster_corpus,
    build_corpus,
    corpora_equal,
    load_corpus,
    ol_split,
    perturb_corpus,
    save_corpus,
    write_failure_manifest,
)
from csidt.errors import CorpusFormatError
from csidt.metrics import rho
from csidt.precoding import SystemConfig
from csidt.scene import PatternSpec, preset_scene

# Tiny settings keep the build-heavy tests quick.
SMALL_GRID = OfdmGrid(n_subcarriers=60, n_subbands=60)
SMALL_SYS = SystemConfig(n_tx=4, n_rx=4, n_streams=2)


@pytest.fixture(scope="module")
def corridor_corpus():
    return build_corpus("corridor", SMALL_SYS, SMALL_GRID, seed=11)


class TestBuildCorpus:
    def test_grid_enumeration(self, corridor_corpus):
        expected = len(preset_scene("corridor").ue_grid())
        assert corridor_corpus.n_positions + len(corridor_corpus.failures) == expected
        assert corridor_corpus.failures == []

    def test_domain_and_counts(self, corridor_corpus):
        assert corridor_corpus.header.domain == "DT"
        for rec in corridor_corpus.records:
            assert len(rec.precoders) == SMALL_GRID.n_subbands
            assert rec.channel.h.shape == (60, 4, 4)
            assert 0 <= rec.orientation_id < 100

    def test_seed_reproducibility(self):
        a = build_corpus("corridor", SMALL_SYS, SMALL_GRID, seed=3)
        b = build_corpus("corridor", SMALL_SYS, SMALL_GRID, seed=3)
        assert corpora_equal(a, b)

    def test_different_seed_changes_orientations(self):
        a = build_corpus("corridor", SMALL_SYS, SMALL_GRID, seed=4)
        b = build_corpus("corridor", SMALL_SYS, SMALL_GRID, seed=5)
        oa = [r.orientation_id for r in a.records]
        ob = [r.orientation_id for r in b.records]
        assert oa != ob

    def test_campus_preset(self):
        corpus = build_corpus("campus_square", SMALL_SYS, SMALL_GRID, seed=6)
        assert corpus.header.scene_name == "campus_square"
        assert corpus.header.domain == "DT"
        assert corpus.n_positions == len(preset_scene("campus_square").ue_grid())


class TestClusterCorpus:
    def test_build_and_determinism(self):
        cfg = ClusterConfig(n_clusters=3, rays_per_cluster=4)
        a = build_cluster_corpus(cfg, SMALL_SYS, SMALL_GRID, n_positions=5, seed=7)
        b = build_cluster_corpus(cfg, SMALL_SYS, SMALL_GRID, n_positions=5, seed=7)
        assert corpora_equal(a, b)
        assert a.header.domain == "CLUSTER"
        assert a.n_positions == 5


class TestPerturb:
    def test_noop_preserves_precoders(self, corridor_corpus):
        out = perturb_corpus(corridor_corpus, PerturbSpec(), seed=99)
        assert out.header.domain == "RW_PROXY"
        for ra, rb in zip(corridor_corpus.records, out.records):
            for pa, pb in zip(ra.precoders, rb.precoders):
                assert rho(pa, pb) == pytest.approx(1.0, abs=1e-12)

    def test_source_untouched(self, corridor_corpus):
        before = [r.channel.h.copy() for r in corridor_corpus.records[:3]]
        perturb_corpus(
            corridor_corpus,
            PerturbSpec(gamma_jitter=0.3, diffuse_paths=4, estimation_noise_snr_db=20.0),
            seed=50,
        )
        for h0, rec in zip(before, corridor_corpus.records[:3]):
            assert np.array_equal(h0, rec.channel.h)

    def test_high_snr_noise_barely_moves_precoders(self, corridor_corpus):
        out = perturb_corpus(
            corridor_corpus, PerturbSpec(estimation_noise_snr_db=40.0), seed=51
        )
        rhos = [
            rho(pa, pb)
            for ra, rb in zip(corridor_corpus.records, out.records)
            for pa, pb in zip(ra.precoders, rb.precoders)
        ]
        assert np.mean(rhos) >= 0.99

    def test_bs_swap_hurts_more_than_ue_swap(self, corridor_corpus):
        bs_swap = perturb_corpus(
            corridor_corpus, PerturbSpec(bs_pattern_swap=PatternSpec("dipole")), seed=52
        )
        ue_swap = perturb_corpus(
            corridor_corpus, PerturbSpec(ue_pattern_swap=PatternSpec("patch", q=2.0)), seed=52
        )

        def mean_rho_drop(perturbed):
            vals = [
                rho(pa, pb)
                for ra, rb in zip(corridor_corpus.records, perturbed.records)
                for pa, pb in zip(ra.precoders, rb.precoders)
            ]
            return 1.0 - float(np.mean(vals))

        assert mean_rho_drop(bs_swap) > mean_rho_drop(ue_swap)

    def test_determinism(self, corridor_corpus):
        spec = PerturbSpec(gamma_jitter=0.15, diffuse_paths=8, estimation_noise_snr_db=25.0)
        a = perturb_corpus(corridor_corpus, spec, seed=53)
        b = perturb_corpus(corridor_corpus, spec, seed=53)
        assert corpora_equal(a, b)

    def test_requires_dt_input(self, corridor_corpus):
        proxy = perturb_corpus(corridor_corpus, PerturbSpec(), seed=54)
        with pytest.raises(ValueError):
            perturb_corpus(proxy, PerturbSpec(), seed=55)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            PerturbSpec(gamma_jitter=1.5)
        with pytest.raises(ValueError):
            PerturbSpec(diffuse_paths=4, diffuse_power_db=3.0)


class TestOlSplit:
    def test_paper_scale_floor_arithmetic(self, corridor_corpus):
        # 78 positions at fraction 0.30 -> floor gives 23 OL positions,
        # 23 * 60 = 1380 OL precoders.
        records = (corridor_corpus.records * 3)[:78]
        fake = Corpus(header=corridor_corpus.header, records=records, failures=[])
        ol, ev = ol_split(fake, 0.30, seed=60)
        assert ol.n_positions == 23
        assert ev.n_positions == 55
        assert len(ol.all_precoders()) == 23 * 60

    def test_two_position_half_split(self, corridor_corpus):
        fake = Corpus(header=corridor_corpus.header,
                      records=corridor_corpus.records[:2], failures=[])
        ol, ev = ol_split(fake, 0.5, seed=61)
        assert ol.n_positions == 1 and ev.n_positions == 1

    def test_partition_property(self, corridor_corpus):
        ol, ev = ol_split(corridor_corpus, 0.3, seed=62)
        ids_ol = {r.channel.position_id for r in ol.records}
        ids_ev = {r.channel.position_id for r in ev.records}
        assert ids_ol.isdisjoint(ids_ev)
        assert ids_ol | ids_ev == {r.channel.position_id for r in corridor_corpus.records}

    def test_empty_side_rejected(self, corridor_corpus):
        fake = Corpus(header=corridor_corpus.header,
                      records=corridor_corpus.records[:2], failures=[])
        with pytest.raises(ValueError):
            ol_split(fake, 0.1, seed=63)


class TestSerialization:
    def test_round_trip_bit_exact(self, corridor_corpus, tmp_path):
        path = tmp_path / "c.corpus"
        small = Corpus(header=corridor_corpus.header,
                       records=corridor_corpus.records[:4],
                       failures=[(3, "TraceError: synthetic failure")])
        save_corpus(small, path)
        loaded = load_corpus(path)
        assert corpora_equal(small, loaded)

    def test_same_seed_byte_identical_files(self, tmp_path):
        p1, p2 = tmp_path / "a.corpus", tmp_path / "b.corpus"
        save_corpus(build_corpus("corridor", SMALL_SYS, SMALL_GRID, seed=8), p1)
        save_corpus(build_corpus("corridor", SMALL_SYS, SMALL_GRID, seed=8), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.corpus"
        path.write_bytes(b"NOPE!!" + b"\x00" * 64)
        with pytest.raises(CorpusFormatError, match="magic"):
            load_corpus(path)

    def test_version_mismatch_names_both(self, corridor_corpus, tmp_path):
        path = tmp_path / "v.corpus"
        small = Corpus(header=corridor_corpus.header,
                       records=corridor_corpus.records[:1], failures=[])
        save_corpus(small, path)
        data = bytearray(path.read_bytes())
        data[6:8] = (2).to_bytes(2, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(CorpusFormatError, match=r"version 2.*1"):
            load_corpus(path)

    def test_truncation(self, corridor_corpus, tmp_path):
        path = tmp_path / "t.corpus"
        small = Corpus(header=corridor_corpus.header,
                       records=corridor_corpus.records[:2], failures=[])
        save_corpus(small, path)
        data = path.read_bytes()
        path.write_bytes(data[: int(len(data) * 0.7)])
        with pytest.raises(CorpusFormatError, match="truncated"):
            load_corpus(path)

    def test_failure_manifest(self, corridor_corpus, tmp_path):
        small = Corpus(header=corridor_corpus.header, records=[],
                       failures=[(5, "boom"), (9, "bang")])
        out = tmp_path / "fail.csv"
        write_failure_manifest(small, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "position_index,message"
        assert len(lines) == 3


def test_parallel_build_matches_serial():
    serial = build_corpus("corridor", SMALL_SYS, SMALL_GRID, seed=70, jobs=1)
    parallel = build_corpus("corridor", SMALL_SYS, SMALL_GRID, seed=70, jobs=2)
    assert corpora_equal(serial, parallel)
