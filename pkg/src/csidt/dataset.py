"""Corpus construction, perturbation, splitting, and persistence.

A corpus is one measurement campaign: per grid position, the traced
channel tensor and its per-subband precoders, plus a header that records
how it was made. RW-proxy corpora are derived from a DT corpus by
re-tracing with controlled mismatches (swapped antenna patterns, jittered
reflection coefficients, appended diffuse paths, estimation noise) so a
sim-to-real gap of known origin can be opened on demand.

All randomness flows through one corpus seed; per-position draws use
``seed XOR position_index`` so generation parallelizes without changing
results. Binary files start with magic ``CSIDT1`` and round-trip
bit-exactly.
"""

import csv
import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import (
    DOMAIN_CLUSTER,
    DOMAIN_DT,
    DOMAIN_RW_PROXY,
    ChannelTensor,
    ClusterConfig,
    OfdmGrid,
    cluster_channel,
    synth_channel,
)
from .errors import ConfigError, CorpusFormatError
from .precoding import Precoder, SystemConfig, precoder_dataset
from .raytrace import Path, PathSet, trace_paths
from .scene import (
    N_UE_ORIENTATIONS,
    PatternSpec,
    Scene,
    azimuth_directions,
    preset_scene,
    uniform_linear_array,
)

CORPUS_MAGIC = b"CSIDT1"
CORPUS_VERSION = 1

DEFAULT_BS_PATTERN = PatternSpec("patch", q=1.0)
DEFAULT_UE_PATTERN = PatternSpec("patch", q=1.0)
DEFAULT_MAX_PATHS = 64


@dataclass(frozen=True)
class PerturbSpec:
    """Controlled DT-to-proxy mismatch knobs.

    ``gamma_jitter`` is a relative fraction in [0, 1) applied per material;
    ``diffuse_power_db`` is total appended diffuse power relative to the
    specular power and must be negative; ``estimation_noise_snr_db`` adds
    complex Gaussian noise to every channel entry at the stated SNR.
    """

    bs_pattern_swap: PatternSpec = None
    ue_pattern_swap: PatternSpec = None
    gamma_jitter: float = 0.0
    diffuse_paths: int = 0
    diffuse_power_db: float = -20.0
    estimation_noise_snr_db: float = None

    def __post_init__(self):
        if not 0.0 <= self.gamma_jitter < 1.0:
            raise ValueError("gamma_jitter must be in [0, 1)")
        if self.diffuse_paths < 0:
            raise ValueError("diffuse_paths must be nonnegative")
        if self.diffuse_paths and self.diffuse_power_db >= 0.0:
            raise ValueError("diffuse_power_db must be negative (relative)")

    def is_noop(self) -> bool:
        return (
            self.bs_pattern_swap is None
            and self.ue_pattern_swap is None
            and self.gamma_jitter == 0.0
            and self.diffuse_paths == 0
            and self.estimation_noise_snr_db is None
        )


@dataclass
class CorpusHeader:
    scene_name: str
    domain: str
    seed: int
    system: SystemConfig
    grid: OfdmGrid
    creation: dict = field(default_factory=dict)

    def creation_json(self) -> str:
        return json.dumps(self.creation, sort_keys=True)


@dataclass
class CorpusRecord:
    position: np.ndarray
    orientation_id: int
    channel: ChannelTensor
    precoders: list


@dataclass
class Corpus:
    header: CorpusHeader
    records: list
    failures: list = field(default_factory=list)  # (position_index, message)

    @property
    def n_positions(self) -> int:
        return len(self.records)

    def all_precoders(self) -> list:
        return [p for rec in self.records for p in rec.precoders]


def _pattern_dict(p: PatternSpec) -> dict:
    return {"family": p.family, "q": p.q, "peak_gain": p.peak_gain}


def _pattern_from_dict(d) -> PatternSpec:
    if d is None:
        return None
    return PatternSpec(d["family"], q=d["q"], peak_gain=d["peak_gain"])


def _scene_with_gammas(scene: Scene, gammas: dict) -> Scene:
    return Scene(
        reflectors=scene.reflectors, materials=gammas, bounds=scene.bounds, name=scene.name
    )


def _trace_position(scene, preset, system, grid, bs_pattern, ue_pattern,
                    max_order, max_paths, index, position, orientation_id,
                    domain, extra=None):
    """Trace, synthesize, and extract one position. Pure given arguments."""
    bs = uniform_linear_array(
        system.n_tx, preset.bs_position, preset.bs_boresight, bs_pattern
    )
    boresight = azimuth_directions()[orientation_id]
    ue = uniform_linear_array(system.n_rx, position, boresight, ue_pattern)
    paths = trace_paths(scene, preset.bs_position, position, max_order,
                        grid.carrier_hz, max_paths)
    if extra is not None:
        paths = extra(paths, bs, ue)
    ch = synth_channel(paths, grid, bs, ue, position_id=index, domain=domain)
    precoders = precoder_dataset(ch, grid, system.n_streams)
    return CorpusRecord(
        position=np.asarray(position, dtype=float),
        orientation_id=orientation_id,
        channel=ch,
        precoders=precoders,
    )


def _build_one(args):
    (preset_name, gammas, system, grid, bs_pattern, ue_pattern, max_order,
     max_paths, index, seed) = args
    preset = preset_scene(preset_name)
    scene = _scene_with_gammas(preset.scene, gammas)
    position = preset.ue_grid()[index]
    rng = np.random.default_rng(seed ^ index)
    orientation_id = int(rng.integers(N_UE_ORIENTATIONS))
    try:
        record = _trace_position(scene, preset, system, grid, bs_pattern,
                                 ue_pattern, max_order, max_paths, index,
                                 position, orientation_id, DOMAIN_DT)
        return index, record, None
    except Exception as exc:  # per-position failures go to the manifest
        return index, None, f"{type(exc).__name__}: {exc}"


def build_corpus(
    preset_name: str,
    system: SystemConfig,
    grid: OfdmGrid,
    seed: int,
    bs_pattern: PatternSpec = DEFAULT_BS_PATTERN,
    ue_pattern: PatternSpec = DEFAULT_UE_PATTERN,
    max_order: int = None,
    max_paths: int = DEFAULT_MAX_PATHS,
    jobs: int = 1,
) -> Corpus:
    """Trace -> synthesize -> extract over the preset's full UE grid.

    Per-position failures are recorded in the corpus failure manifest and
    do not abort the build. Results are byte-identical for equal
    (arguments, seed) regardless of ``jobs``.
    """
    preset = preset_scene(preset_name)
    if max_order is None:
        max_order = preset.max_order
    n = len(preset.ue_grid())
    argv = [
        (preset_name, dict(preset.scene.materials), system, grid, bs_pattern,
         ue_pattern, max_order, max_paths, i, seed)
        for i in range(n)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_build_one, argv, chunksize=8))
    else:
        outcomes = [_build_one(a) for a in argv]

    records, failures = [], []
    for index, record, message in outcomes:
        if record is not None:
            records.append(record)
        else:
            failures.append((index, message))
    header = CorpusHeader(
        scene_name=preset_name,
        domain=DOMAIN_DT,
        seed=seed,
        system=system,
        grid=grid,
        creation={
            "kind": "traced",
            "preset": preset_name,
            "max_order": max_order,
            "max_paths": max_paths,
            "bs_pattern": _pattern_dict(bs_pattern),
            "ue_pattern": _pattern_dict(ue_pattern),
        },
    )
    return Corpus(header=header, records=records, failures=failures)


def build_cluster_corpus(
    cluster: ClusterConfig,
    system: SystemConfig,
    grid: OfdmGrid,
    n_positions: int,
    seed: int,
    bs_pattern: PatternSpec = DEFAULT_BS_PATTERN,
    ue_pattern: PatternSpec = DEFAULT_UE_PATTERN,
) -> Corpus:
    """Stochastic-baseline corpus: one cluster realization per position."""
    if n_positions < 1:
        raise ValueError("n_positions must be >= 1")
    records = []
    bs = uniform_linear_array(system.n_tx, [0.0, 0.0, 10.0], [1.0, 0.0, 0.0], bs_pattern)
    for i in range(n_positions):
        rng = np.random.default_rng(seed ^ i)
        orientation_id = int(rng.integers(N_UE_ORIENTATIONS))
        position = np.array([20.0 + i, 0.0, 1.5])
        ue = uniform_linear_array(
            system.n_rx, position, azimuth_directions()[orientation_id], ue_pattern
        )
        ch = cluster_channel(cluster, grid, bs, ue, seed=seed ^ i, position_id=i)
        records.append(
            CorpusRecord(
                position=position,
                orientation_id=orientation_id,
                channel=ch,
                precoders=precoder_dataset(ch, grid, system.n_streams),
            )
        )
    header = CorpusHeader(
        scene_name="cluster",
        domain=DOMAIN_CLUSTER,
        seed=seed,
        system=system,
        grid=grid,
        creation={
            "kind": "cluster",
            "n_positions": n_positions,
            "cluster": asdict(cluster),
            "bs_pattern": _pattern_dict(bs_pattern),
            "ue_pattern": _pattern_dict(ue_pattern),
        },
    )
    return Corpus(header=header, records=records, failures=[])


def _diffuse_appender(spec: PerturbSpec, rng, grid: OfdmGrid):
    """Closure appending seeded diffuse paths to a traced path set."""

    def extend(paths: PathSet, bs, ue) -> PathSet:
        if spec.diffuse_paths == 0 or len(paths) == 0:
            return paths
        delays = np.array([p.delay_s for p in paths.paths])
        lo, hi = float(delays.min()), float(delays.max())
        window = max(hi - lo, 10e-9)
        specular_power = sum(abs(p.gain) ** 2 for p in paths.paths)
        total = specular_power * 10.0 ** (spec.diffuse_power_db / 10.0)
        amp = math.sqrt(total / spec.diffuse_paths)
        extra = []
        for k in range(spec.diffuse_paths):
            delay = rng.uniform(lo, hi + 0.5 * window)
            az_d = rng.uniform(-math.pi, math.pi)
            az_a = rng.uniform(-math.pi, math.pi)
            el_d = rng.uniform(-0.3, 0.3)
            el_a = rng.uniform(-0.3, 0.3)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            extra.append(
                Path(
                    gain=amp * np.exp(1j * phase),
                    delay_s=float(delay),
                    aod=(
                        math.cos(el_d) * math.cos(az_d),
                        math.cos(el_d) * math.sin(az_d),
                        math.sin(el_d),
                    ),
                    aoa=(
                        math.cos(el_a) * math.cos(az_a),
                        math.cos(el_a) * math.sin(az_a),
                        math.sin(el_a),
                    ),
                    order=0,
                    signature=("diffuse", k),
                )
            )
        merged = sorted(paths.paths + extra, key=lambda p: (-abs(p.gain), p.order, str(p.signature)))
        return PathSet(paths=merged, tx=paths.tx, rx=paths.rx, carrier_hz=paths.carrier_hz)

    return extend


def perturb_corpus(corpus: Corpus, spec: PerturbSpec, seed: int) -> Corpus:
    """Derive an RW-proxy corpus from a DT corpus; the input is untouched.

    Re-traces every position with swapped patterns and jittered reflection
    coefficients, appends seeded diffuse paths, optionally adds estimation
    noise, then re-extracts precoders. With all knobs zeroed the output
    precoders equal the input's exactly.
    """
    if corpus.header.domain != DOMAIN_DT:
        raise ValueError(f"perturb_corpus needs a DT corpus, got {corpus.header.domain}")
    creation = corpus.header.creation
    if creation.get("kind") != "traced":
        raise ValueError("perturb_corpus needs a traced corpus")
    preset = preset_scene(creation["preset"])
    system, grid = corpus.header.system, corpus.header.grid

    rng = np.random.default_rng(seed)
    gammas = dict(preset.scene.materials)
    if spec.gamma_jitter > 0.0:
        for mid in sorted(gammas):
            u = rng.uniform(-spec.gamma_jitter, spec.gamma_jitter)
            gammas[mid] = float(np.clip(gammas[mid] * (1.0 + u), 0.0, 1.0))
    scene = _scene_with_gammas(preset.scene, gammas)

    bs_pattern = spec.bs_pattern_swap or _pattern_from_dict(creation["bs_pattern"])
    ue_pattern = spec.ue_pattern_swap or _pattern_from_dict(creation["ue_pattern"])

    records, failures = [], []
    for rec in corpus.records:
        index = rec.channel.position_id
        pos_rng = np.random.default_rng(seed ^ index)
        extra = _diffuse_appender(spec, pos_rng, grid) if spec.diffuse_paths else None
        try:
            new = _trace_position(
                scene, preset, system, grid, bs_pattern, ue_pattern,
                creation["max_order"], creation["max_paths"], index,
                rec.position, rec.orientation_id, DOMAIN_RW_PROXY, extra=extra,
            )
            if spec.estimation_noise_snr_db is not None:
                h = new.channel.h
                snr = 10.0 ** (spec.estimation_noise_snr_db / 10.0)
                sigma2 = float(np.mean(np.abs(h) ** 2)) / snr
                noise = pos_rng.standard_normal(h.shape) + 1j * pos_rng.standard_normal(h.shape)
                h = h + np.sqrt(sigma2 / 2.0) * noise
                new.channel = ChannelTensor(h=h, position_id=index, domain=DOMAIN_RW_PROXY)
                new.precoders = precoder_dataset(new.channel, grid, system.n_streams)
            records.append(new)
        except Exception as exc:
            failures.append((index, f"{type(exc).__name__}: {exc}"))

    header = CorpusHeader(
        scene_name=corpus.header.scene_name,
        domain=DOMAIN_RW_PROXY,
        seed=seed,
        system=system,
        grid=grid,
        creation={
            **creation,
            "kind": "perturbed",
            "source_seed": corpus.header.seed,
            "bs_pattern": _pattern_dict(bs_pattern),
            "ue_pattern": _pattern_dict(ue_pattern),
            "gammas": {k: gammas[k] for k in sorted(gammas)},
            "perturb": {
                "gamma_jitter": spec.gamma_jitter,
                "diffuse_paths": spec.diffuse_paths,
                "diffuse_power_db": spec.diffuse_power_db,
                "estimation_noise_snr_db": spec.estimation_noise_snr_db,
                "bs_pattern_swap": _pattern_dict(spec.bs_pattern_swap) if spec.bs_pattern_swap else None,
                "ue_pattern_swap": _pattern_dict(spec.ue_pattern_swap) if spec.ue_pattern_swap else None,
            },
        },
    )
    return Corpus(header=header, records=records, failures=failures)


def ol_split(corpus: Corpus, fraction: float, seed: int):
    """Split by position into (online-learning corpus, evaluation corpus).

    All subband precoders of a selected position travel together; the two
    sides partition the position set. floor(fraction * n) positions go to
    the OL side.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    n = corpus.n_positions
    n_ol = int(math.floor(fraction * n))
    if n_ol == 0 or n_ol == n:
        raise ValueError(
            f"fraction {fraction} yields an empty split side for {n} positions"
        )
    perm = np.random.default_rng(seed).permutation(n)
    ol_idx = set(int(i) for i in perm[:n_ol])

    def subset(pick_ol: bool, tag: str) -> Corpus:
        recs = [r for i, r in enumerate(corpus.records) if (i in ol_idx) == pick_ol]
        header = CorpusHeader(
            scene_name=corpus.header.scene_name,
            domain=corpus.header.domain,
            seed=corpus.header.seed,
            system=corpus.header.system,
            grid=corpus.header.grid,
            creation={**corpus.header.creation,
                      "split": {"side": tag, "fraction": fraction, "seed": seed}},
        )
        return Corpus(header=header, records=recs, failures=list(corpus.failures))

    return subset(True, "ol"), subset(False, "eval")


def _write_str(fh, text: str) -> None:
    raw = text.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def save_corpus(corpus: Corpus, path) -> None:
    """Binary corpus file; see module docstring. Writes are deterministic."""
    h = corpus.header
    with open(path, "wb") as fh:
        fh.write(CORPUS_MAGIC)
        fh.write(struct.pack("<H", CORPUS_VERSION))
        _write_str(fh, h.scene_name)
        _write_str(fh, h.domain)
        fh.write(struct.pack("<q", h.seed))
        fh.write(struct.pack("<HHH", h.system.n_tx, h.system.n_rx, h.system.n_streams))
        fh.write(struct.pack("<IddI", h.grid.n_subcarriers, h.grid.subcarrier_spacing_hz,
                             h.grid.carrier_hz, h.grid.n_subbands))
        _write_str(fh, h.creation_json())
        fh.write(struct.pack("<I", len(corpus.records)))
        for rec in corpus.records:
            fh.write(struct.pack("<3d", *rec.position))
            fh.write(struct.pack("<I", rec.orientation_id))
            ch = rec.channel
            fh.write(struct.pack("<I", ch.position_id))
            n_c, n_r, n_t = ch.h.shape
            fh.write(struct.pack("<IHH", n_c, n_r, n_t))
            interleaved = np.empty((n_c, n_r, n_t, 2))
            interleaved[..., 0] = ch.h.real
            interleaved[..., 1] = ch.h.imag
            fh.write(interleaved.astype("<f8").tobytes(order="C"))
            fh.write(struct.pack("<H", len(rec.precoders)))
            for p in rec.precoders:
                fh.write(struct.pack("<H", p.subband))
                fh.write(np.asarray(p.eigenvalues, "<f8").tobytes())
                wiv = np.empty((p.w.shape[0], p.w.shape[1], 2))
                wiv[..., 0] = p.w.real
                wiv[..., 1] = p.w.imag
                fh.write(wiv.astype("<f8").tobytes(order="C"))
        fh.write(struct.pack("<I", len(corpus.failures)))
        for index, message in corpus.failures:
            fh.write(struct.pack("<I", index))
            _write_str(fh, message)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.data):
            raise CorpusFormatError(
                f"truncated corpus: needed {size} bytes at offset {self.off}, "
                f"file has {len(self.data)}"
            )
        out = struct.unpack_from(fmt, self.data, self.off)
        self.off += size
        return out

    def take_str(self) -> str:
        (n,) = self.take("<I")
        if self.off + n > len(self.data):
            raise CorpusFormatError("truncated corpus: string runs past end of file")
        raw = self.data[self.off: self.off + n]
        self.off += n
        return raw.decode("utf-8")

    def take_f64(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.off + size > len(self.data):
            raise CorpusFormatError("truncated corpus: array runs past end of file")
        out = np.frombuffer(self.data, "<f8", count=count, offset=self.off)
        self.off += size
        return out


def load_corpus(path) -> Corpus:
    """Read a corpus file; bad magic, version skew, and truncation are
    reported as distinct CorpusFormatError messages."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(CORPUS_MAGIC)] != CORPUS_MAGIC:
        raise CorpusFormatError(
            f"bad corpus magic {data[:len(CORPUS_MAGIC)]!r} (expected {CORPUS_MAGIC!r})"
        )
    r = _Reader(data)
    r.off = len(CORPUS_MAGIC)
    (version,) = r.take("<H")
    if version != CORPUS_VERSION:
        raise CorpusFormatError(
            f"corpus version {version} unsupported (this build reads {CORPUS_VERSION})"
        )
    scene_name = r.take_str()
    domain = r.take_str()
    (seed,) = r.take("<q")
    n_tx, n_rx, n_streams = r.take("<HHH")
    n_subcarriers, spacing, carrier, n_subbands = r.take("<IddI")
    creation = json.loads(r.take_str())
    header = CorpusHeader(
        scene_name=scene_name,
        domain=domain,
        seed=seed,
        system=SystemConfig(n_tx=n_tx, n_rx=n_rx, n_streams=n_streams),
        grid=OfdmGrid(n_subcarriers=n_subcarriers, subcarrier_spacing_hz=spacing,
                      carrier_hz=carrier, n_subbands=n_subbands),
        creation=creation,
    )
    (n_records,) = r.take("<I")
    records = []
    for _ in range(n_records):
        position = np.array(r.take("<3d"))
        (orientation_id,) = r.take("<I")
        (position_id,) = r.take("<I")
        n_c, n_r, n_t = r.take("<IHH")
        flat = r.take_f64(n_c * n_r * n_t * 2).reshape(n_c, n_r, n_t, 2)
        h = flat[..., 0] + 1j * flat[..., 1]
        channel = ChannelTensor(h=h, position_id=position_id, domain=domain)
        (n_precoders,) = r.take("<H")
        precoders = []
        for _ in range(n_precoders):
            (subband,) = r.take("<H")
            eig = r.take_f64(n_streams).copy()
            wf = r.take_f64(n_tx * n_streams * 2).reshape(n_tx, n_streams, 2)
            precoders.append(
                Precoder(w=wf[..., 0] + 1j * wf[..., 1], eigenvalues=eig,
                         subband=subband, position_id=position_id, domain=domain)
            )
        records.append(CorpusRecord(position=position, orientation_id=orientation_id,
                                    channel=channel, precoders=precoders))
    (n_failures,) = r.take("<I")
    failures = []
    for _ in range(n_failures):
        (index,) = r.take("<I")
        failures.append((index, r.take_str()))
    if r.off != len(data):
        raise CorpusFormatError(
            f"corpus has {len(data) - r.off} trailing bytes after the last record"
        )
    return Corpus(header=header, records=records, failures=failures)


def corpora_equal(a: Corpus, b: Corpus) -> bool:
    """Bitwise equality over headers, channel tensors, and precoders."""
    ha, hb = a.header, b.header
    if (ha.scene_name, ha.domain, ha.seed, ha.system, ha.grid, ha.creation_json()) != (
        hb.scene_name, hb.domain, hb.seed, hb.system, hb.grid, hb.creation_json()
    ):
        return False
    if len(a.records) != len(b.records) or a.failures != b.failures:
        return False
    for ra, rb in zip(a.records, b.records):
        if ra.orientation_id != rb.orientation_id:
            return False
        if not np.array_equal(ra.position, rb.position):
            return False
        if not np.array_equal(ra.channel.h, rb.channel.h):
            return False
        if len(ra.precoders) != len(rb.precoders):
            return False
        for pa, pb in zip(ra.precoders, rb.precoders):
            if pa.subband != pb.subband:
                return False
            if not np.array_equal(pa.w, pb.w):
                return False
            if not np.array_equal(pa.eigenvalues, pb.eigenvalues):
                return False
    return True


def write_failure_manifest(corpus: Corpus, path) -> None:
    """CSV of per-position build failures (empty file if none failed)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["position_index", "message"])
        for index, message in corpus.failures:
            writer.writerow([index, message])
