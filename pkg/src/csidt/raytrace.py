"""Deterministic image-source ray tracing over axis-aligned reflectors.

Specular paths up to a configurable reflection order are enumerated by
mirroring the transmitter across reflector planes and validating each
candidate: reflection points must land inside their rectangles, every leg
must be unoccluded, and the incident ray must arrive on the reflective
side. The method is exact for planar specular reflection; there is no
diffraction, transmission, or diffuse scattering here.

Path gain convention: amplitude is free-space spreading times the product
of reflection coefficients, lambda / (4 pi d) * prod(Gamma_i); the phase is
exp(-j 2 pi d / lambda) for total unfolded length d. Antenna patterns are
applied later, when a path is expanded into a MIMO gain matrix.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .scene import AntennaArray, Reflector, Scene, pattern_gain, steering_vector

SPEED_OF_LIGHT = 299_792_458.0

# Geometric tolerances: grazing hits are treated as blocked (conservative).
EDGE_EPS_M = 1e-9
SEG_EPS = 1e-12


@dataclass(frozen=True)
class Path:
    """One propagation path: complex gain, delay, and unit departure/arrival
    directions (both pointing away from their own terminal)."""

    gain: complex
    delay_s: float
    aod: tuple
    aoa: tuple
    order: int
    signature: tuple

    @property
    def aod_vec(self) -> np.ndarray:
        return np.asarray(self.aod)

    @property
    def aoa_vec(self) -> np.ndarray:
        return np.asarray(self.aoa)


@dataclass
class PathSet:
    paths: list
    tx: np.ndarray
    rx: np.ndarray
    carrier_hz: float

    def __len__(self) -> int:
        return len(self.paths)


def _mirror(point: np.ndarray, reflector: Reflector) -> np.ndarray:
    out = point.copy()
    a = reflector.axis
    out[a] = 2.0 * reflector.plane_offset - out[a]
    return out


def _inside_rect(point: np.ndarray, r: Reflector, margin: float) -> bool:
    corner = np.asarray(r.corner)
    extents = np.asarray(r.extents)
    for a in range(3):
        if a == r.axis:
            continue
        lo = min(corner[a], corner[a] + extents[a])
        hi = max(corner[a], corner[a] + extents[a])
        if not (lo - margin <= point[a] <= hi + margin):
            return False
    return True


def _plane_crossing(p0: np.ndarray, p1: np.ndarray, r: Reflector):
    """Parameter t in (0, 1) where segment p0->p1 crosses the reflector plane,
    or None if parallel / outside the open segment."""
    a = r.axis
    denom = p1[a] - p0[a]
    if abs(denom) < 1e-300:
        return None
    t = (r.plane_offset - p0[a]) / denom
    if not (SEG_EPS < t < 1.0 - SEG_EPS):
        return None
    return t


def _segment_blocked(p0: np.ndarray, p1: np.ndarray, scene: Scene, skip: tuple) -> bool:
    """True if any reflector other than the skipped ones cuts the open segment.

    A crossing point inside a rectangle (with a 1e-9 m grazing margin)
    blocks the segment.
    """
    for idx, r in enumerate(scene.reflectors):
        if idx in skip:
            continue
        t = _plane_crossing(p0, p1, r)
        if t is None:
            continue
        point = p0 + t * (p1 - p0)
        if _inside_rect(point, r, EDGE_EPS_M):
            return True
    return False


def _validate_sequence(scene: Scene, tx: np.ndarray, rx: np.ndarray, seq: tuple):
    """Back-trace a reflector sequence; return (points, total_length) or None.

    ``points`` is the vertex chain tx, q_1, ..., q_k, rx. The unfolded
    length equals |rx - image_k| when the sequence is valid.
    """
    images = [tx]
    for s in seq:
        images.append(_mirror(images[-1], scene.reflectors[s]))

    vertices = [rx]
    current = rx
    for j in range(len(seq), 0, -1):
        refl = scene.reflectors[seq[j - 1]]
        t = _plane_crossing(current, images[j], refl)
        if t is None:
            return None
        q = current + t * (images[j] - current)
        if not _inside_rect(q, refl, -EDGE_EPS_M):
            return None
        # Incident ray must arrive on the reflective (normal) side.
        normal = np.asarray(refl.normal)
        if np.dot(current - q, normal) <= 0.0:
            return None
        vertices.append(q)
        current = q
    vertices.append(tx)

    # Occlusion check per leg; a leg may touch its own bounding reflectors.
    chain = list(reversed(vertices))  # tx, q_1, ..., q_k, rx
    owners = [()] + [(s,) for s in seq] + [()]
    for i in range(len(chain) - 1):
        skip = tuple(set(owners[i]) | set(owners[i + 1]))
        if _segment_blocked(chain[i], chain[i + 1], scene, skip):
            return None

    total = float(np.linalg.norm(rx - images[-1]))
    return chain, total


def _reflection_sequences(n_reflectors: int, max_order: int):
    """All reflector index sequences up to max_order, consecutive distinct."""
    frontier = [()]
    for _ in range(max_order):
        nxt = []
        for seq in frontier:
            for s in range(n_reflectors):
                if seq and seq[-1] == s:
                    continue
                nxt.append(seq + (s,))
        yield from nxt
        frontier = nxt


def trace_paths(
    scene: Scene,
    tx,
    rx,
    max_order: int,
    carrier_hz: float,
    max_paths: int = 64,
) -> PathSet:
    """Enumerate specular paths from ``tx`` to ``rx`` up to ``max_order``.

    Returns paths sorted by descending |gain| (ties broken by order then
    signature), truncated to ``max_paths``. Materials with Gamma = 0 yield
    no reflected contribution.
    """
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    if np.array_equal(tx, rx):
        raise ValueError("tx and rx must not coincide")
    if max_order < 0 or max_order > 3:
        raise ValueError("max_order must be in 0..3")
    bounds = np.asarray(scene.bounds, dtype=float)
    if np.any(bounds <= 0):
        raise ValueError(f"degenerate scene bounds {scene.bounds}")
    for name, p in (("tx", tx), ("rx", rx)):
        if np.any(p < -EDGE_EPS_M) or np.any(p > bounds + EDGE_EPS_M):
            raise ValueError(f"{name} position {p} outside scene bounds {scene.bounds}")
    if carrier_hz <= 0:
        raise ValueError("carrier_hz must be positive")

    wavelength = SPEED_OF_LIGHT / carrier_hz
    paths = []

    if not _segment_blocked(tx, rx, scene, skip=()):
        d = float(np.linalg.norm(rx - tx))
        u = (rx - tx) / d
        amp = wavelength / (4.0 * np.pi * d)
        paths.append(
            Path(
                gain=amp * np.exp(-2j * np.pi * d / wavelength),
                delay_s=d / SPEED_OF_LIGHT,
                aod=tuple(u),
                aoa=tuple(-u),
                order=0,
                signature=(),
            )
        )

    for seq in _reflection_sequences(len(scene.reflectors), max_order):
        gamma = 1.0
        for s in seq:
            gamma *= scene.gamma(scene.reflectors[s].material)
        if gamma == 0.0:
            continue
        result = _validate_sequence(scene, tx, rx, seq)
        if result is None:
            continue
        chain, d = result
        first_leg = chain[1] - chain[0]
        last_leg = chain[-2] - chain[-1]
        amp = gamma * wavelength / (4.0 * np.pi * d)
        paths.append(
            Path(
                gain=amp * np.exp(-2j * np.pi * d / wavelength),
                delay_s=d / SPEED_OF_LIGHT,
                aod=tuple(first_leg / np.linalg.norm(first_leg)),
                aoa=tuple(last_leg / np.linalg.norm(last_leg)),
                order=len(seq),
                signature=seq,
            )
        )

    paths.sort(key=lambda p: (-abs(p.gain), p.order, p.signature))
    return PathSet(paths=paths[:max_paths], tx=tx, rx=rx, carrier_hz=carrier_hz)


def path_channel_gain(
    path: Path, bs: AntennaArray, ue: AntennaArray, wavelength: float
) -> np.ndarray:
    """Expand a path into its N_r x N_t complex gain matrix.

    G = gain * g_rx * g_tx * a_rx a_tx^H * sqrt(N_r N_t); with isotropic
    elements every entry of a single-path G has magnitude |gain|.
    """
    if bs.n_elements < 1 or ue.n_elements < 1:
        raise ValueError("arrays must have at least one element")
    g_tx = pattern_gain(bs.pattern, bs.orientation, path.aod_vec)
    g_rx = pattern_gain(ue.pattern, ue.orientation, path.aoa_vec)
    a_tx = steering_vector(bs, path.aod_vec, wavelength)
    a_rx = steering_vector(ue, path.aoa_vec, wavelength)
    scale = path.gain * g_rx * g_tx * np.sqrt(ue.n_elements * bs.n_elements)
    return scale * np.outer(a_rx, a_tx.conj())


def dump_paths_csv(pathset: PathSet, path) -> None:
    """Write a per-path CSV: order, delay, complex gain, AoD/AoA components."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["order", "delay_s", "gain_re", "gain_im",
             "aod_x", "aod_y", "aod_z", "aoa_x", "aoa_y", "aoa_z"]
        )
        for p in pathset.paths:
            writer.writerow(
                [p.order, repr(p.delay_s), repr(p.gain.real), repr(p.gain.imag)]
                + [repr(v) for v in p.aod]
                + [repr(v) for v in p.aoa]
            )
