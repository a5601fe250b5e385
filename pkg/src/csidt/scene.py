"""3-D environment and antenna descriptions.

A scene is a set of axis-aligned rectangular reflectors with scalar
reflection coefficients, plus a bounding box. Antennas are element arrays
with an analytic co-polarized element pattern (isotropic, patch, dipole)
and a boresight orientation. Two presets ship with the package: an indoor
corridor (19.7 x 5.93 x 2.8 m closed box) and an open campus square with
an elevated base station.

Scene files use a line-oriented text grammar: ``[section]`` headers,
``key = value`` pairs, and bracketed lists. Float values are written with
``repr`` so serialization round-trips bit-exactly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

UNIT_TOL = 1e-6


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero vector cannot be normalized")
    return v / n


def _check_unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must be a unit vector, got norm {np.linalg.norm(v):.6g}")
    return v


@dataclass(frozen=True)
class PatternSpec:
    """Analytic element amplitude pattern.

    family: "isotropic" (gain 1 everywhere), "patch" (max(cos psi, 0)^q),
    or "dipole" (|sin psi|), psi measured from boresight. peak_gain is a
    linear amplitude scale; isotropic ignores it and always returns 1.
    """

    family: str = "isotropic"
    q: float = 1.0
    peak_gain: float = 1.0

    def __post_init__(self):
        if self.family not in ("isotropic", "patch", "dipole"):
            raise ValueError(f"unknown pattern family {self.family!r}")
        if self.peak_gain < 0:
            raise ValueError("peak_gain must be nonnegative")


def pattern_gain(p: PatternSpec, boresight, direction) -> float:
    """Amplitude gain of pattern ``p`` toward ``direction``. Both unit vectors."""
    b = _check_unit(boresight, "boresight")
    d = _check_unit(direction, "direction")
    if p.family == "isotropic":
        return 1.0
    cos_psi = float(np.clip(np.dot(b, d), -1.0, 1.0))
    if p.family == "patch":
        return max(cos_psi, 0.0) ** p.q * p.peak_gain
    sin_psi = np.sqrt(max(0.0, 1.0 - cos_psi * cos_psi))
    return sin_psi * p.peak_gain


@dataclass(frozen=True)
class Reflector:
    """Axis-aligned rectangle: corner point, edge extents, outward unit normal.

    ``extents`` must be zero along the normal axis; the rectangle spans
    ``corner`` to ``corner + extents`` in the two tangent axes.
    """

    corner: tuple
    extents: tuple
    normal: tuple
    material: str

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        axis = int(np.argmax(np.abs(n)))
        if abs(abs(n[axis]) - 1.0) > UNIT_TOL or np.count_nonzero(np.abs(n) > UNIT_TOL) != 1:
            raise ValueError("reflector normal must be a unit +-axis vector")
        e = np.asarray(self.extents, dtype=float)
        if abs(e[axis]) > 1e-12:
            raise ValueError("extents must vanish along the normal axis")

    @property
    def axis(self) -> int:
        return int(np.argmax(np.abs(np.asarray(self.normal))))

    @property
    def plane_offset(self) -> float:
        return float(self.corner[self.axis])


@dataclass(frozen=True)
class Scene:
    reflectors: tuple
    materials: dict
    bounds: tuple
    name: str = "scene"

    def __post_init__(self):
        for mid, gamma in self.materials.items():
            if not 0.0 <= gamma <= 1.0:
                raise ValueError(f"material {mid!r} has gamma {gamma} outside [0, 1]")
        for r in self.reflectors:
            if r.material not in self.materials:
                raise ValueError(f"reflector references unknown material {r.material!r}")

    def gamma(self, material_id: str) -> float:
        return self.materials[material_id]


@dataclass(frozen=True)
class AntennaArray:
    """Element array: offsets in carrier wavelengths, shared element pattern.

    ``element_positions`` has shape (N, 3); physical offsets are obtained by
    scaling with the operating wavelength. ``orientation`` is the boresight
    of every element.
    """

    element_positions: np.ndarray
    pattern: PatternSpec
    orientation: np.ndarray
    position: np.ndarray

    @property
    def n_elements(self) -> int:
        return int(self.element_positions.shape[0])


def uniform_linear_array(
    n: int,
    position,
    boresight,
    pattern: PatternSpec = PatternSpec(),
    spacing_wl: float = 0.5,
    axis=None,
) -> AntennaArray:
    """Half-wavelength ULA by default; elements along ``axis``, first at origin.

    ``axis`` defaults to the horizontal direction perpendicular to the
    boresight (vertical stacking if the boresight is vertical).
    """
    if n < 1:
        raise ValueError("array needs at least one element")
    b = _unit(boresight)
    if axis is None:
        up = np.array([0.0, 0.0, 1.0])
        perp = np.cross(up, b)
        axis = _unit(perp) if np.linalg.norm(perp) > 1e-9 else np.array([1.0, 0.0, 0.0])
    else:
        axis = _unit(axis)
    offsets = np.arange(n)[:, None] * spacing_wl * axis[None, :]
    return AntennaArray(
        element_positions=offsets,
        pattern=pattern,
        orientation=b,
        position=np.asarray(position, dtype=float),
    )


def steering_vector(array: AntennaArray, direction, wavelength: float) -> np.ndarray:
    """Unit-norm array response: entry k = exp(+j*2*pi*<d_k, u>/lambda)/sqrt(N).

    ``d_k`` are the physical element offsets (stored positions scaled by the
    wavelength), ``u`` the unit propagation direction.
    """
    if wavelength == 0.0:
        raise ValueError("wavelength must be nonzero")
    u = _check_unit(direction, "direction")
    positions_m = array.element_positions * wavelength
    phases = 2.0 * np.pi * (positions_m @ u) / wavelength
    return np.exp(1j * phases) / np.sqrt(array.n_elements)


def azimuth_directions(n: int = 100) -> np.ndarray:
    """The fixed set of n unit boresights uniform on the azimuth circle."""
    angles = 2.0 * np.pi * np.arange(n) / n
    return np.stack([np.cos(angles), np.sin(angles), np.zeros(n)], axis=1)


N_UE_ORIENTATIONS = 100


@dataclass(frozen=True)
class ScenePreset:
    """A scene plus the default geometry of a measurement campaign."""

    scene: Scene
    bs_position: np.ndarray
    bs_boresight: np.ndarray
    ue_region: tuple  # (xmin, xmax, ymin, ymax)
    ue_height: float
    grid_pitch: float
    max_order: int
    probe_points: tuple  # 5 (x, y) anchors for path-fidelity probes

    def ue_grid(self) -> np.ndarray:
        """Floor grid of UE positions over the walkable region, row-major in y then x."""
        xmin, xmax, ymin, ymax = self.ue_region
        nx = int(np.floor((xmax - xmin) / self.grid_pitch + 1e-9)) + 1
        ny = int(np.floor((ymax - ymin) / self.grid_pitch + 1e-9)) + 1
        xs = xmin + self.grid_pitch * np.arange(nx)
        ys = ymin + self.grid_pitch * np.arange(ny)
        pts = [(x, y, self.ue_height) for y in ys for x in xs]
        return np.array(pts, dtype=float)

    def probe_indices(self) -> list:
        """Grid indices of the positions nearest each probe anchor."""
        grid = self.ue_grid()[:, :2]
        out = []
        for px, py in self.probe_points:
            d2 = (grid[:, 0] - px) ** 2 + (grid[:, 1] - py) ** 2
            out.append(int(np.argmin(d2)))
        return out


def _box_faces(lx: float, ly: float, lz: float, wall: str, floor: str, ceiling: str):
    """Six inward-facing faces of a closed box with one corner at the origin."""
    return (
        Reflector((0.0, 0.0, 0.0), (lx, ly, 0.0), (0.0, 0.0, 1.0), floor),
        Reflector((0.0, 0.0, lz), (lx, ly, 0.0), (0.0, 0.0, -1.0), ceiling),
        Reflector((0.0, 0.0, 0.0), (lx, 0.0, lz), (0.0, 1.0, 0.0), wall),
        Reflector((0.0, ly, 0.0), (lx, 0.0, lz), (0.0, -1.0, 0.0), wall),
        Reflector((0.0, 0.0, 0.0), (0.0, ly, lz), (1.0, 0.0, 0.0), wall),
        Reflector((lx, 0.0, 0.0), (0.0, ly, lz), (-1.0, 0.0, 0.0), wall),
    )


CORRIDOR_DIMS = (19.7, 5.93, 2.8)


def _corridor_preset() -> ScenePreset:
    lx, ly, lz = CORRIDOR_DIMS
    scene = Scene(
        reflectors=_box_faces(lx, ly, lz, "concrete", "concrete", "ceiling"),
        materials={"concrete": 0.7, "ceiling": 0.5},
        bounds=CORRIDOR_DIMS,
        name="corridor",
    )
    return ScenePreset(
        scene=scene,
        bs_position=np.array([0.4, ly / 2.0, 2.0]),
        bs_boresight=np.array([1.0, 0.0, 0.0]),
        ue_region=(4.0, 15.0, 2.0, 4.0),
        ue_height=1.2,
        grid_pitch=0.5,
        max_order=2,
        probe_points=((4.5, 3.0), (6.0, 2.5), (8.0, 3.5), (14.0, 2.0), (15.0, 4.0)),
    )


def _campus_preset() -> ScenePreset:
    # Open square: ground plane plus four building facades, BS 50 m up.
    ground = 60.0
    facades = (
        Reflector((8.0, 8.0, 0.0), (44.0, 0.0, 20.0), (0.0, 1.0, 0.0), "facade"),
        Reflector((8.0, 52.0, 0.0), (44.0, 0.0, 20.0), (0.0, -1.0, 0.0), "facade"),
        Reflector((8.0, 8.0, 0.0), (0.0, 44.0, 20.0), (1.0, 0.0, 0.0), "facade"),
        Reflector((52.0, 8.0, 0.0), (0.0, 44.0, 20.0), (-1.0, 0.0, 0.0), "facade"),
    )
    scene = Scene(
        reflectors=(
            Reflector((0.0, 0.0, 0.0), (ground, ground, 0.0), (0.0, 0.0, 1.0), "asphalt"),
        )
        + facades,
        materials={"asphalt": 0.6, "facade": 0.7},
        bounds=(ground, ground, 60.0),
        name="campus_square",
    )
    return ScenePreset(
        scene=scene,
        bs_position=np.array([10.0, 30.0, 50.0]),
        bs_boresight=_unit([0.6, 0.0, -0.8]),
        ue_region=(18.0, 42.0, 18.0, 42.0),
        ue_height=1.5,
        grid_pitch=2.0,
        max_order=1,
        probe_points=((20.0, 20.0), (30.0, 30.0), (40.0, 40.0), (20.0, 40.0), (40.0, 20.0)),
    )


_PRESETS = {"corridor": _corridor_preset, "campus_square": _campus_preset}


def preset_scene(name: str) -> ScenePreset:
    try:
        builder = _PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown scene preset {name!r}; known: {sorted(_PRESETS)}") from None
    return builder()


def _fmt_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(repr(float(x)) for x in np.asarray(v).ravel()) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_scene(scene: Scene) -> str:
    """Serialize a scene to the text grammar (round-trips bit-exactly)."""
    lines = ["[scene]", f"name = {scene.name}", f"bounds = {_fmt_value(scene.bounds)}", ""]
    for mid in scene.materials:
        lines += ["[material]", f"name = {mid}", f"gamma = {repr(float(scene.materials[mid]))}", ""]
    for r in scene.reflectors:
        lines += [
            "[reflector]",
            f"corner = {_fmt_value(r.corner)}",
            f"extents = {_fmt_value(r.extents)}",
            f"normal = {_fmt_value(r.normal)}",
            f"material = {r.material}",
            "",
        ]
    return "\n".join(lines)


def _parse_value(text: str):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return tuple(float(t) for t in inner.split(",")) if inner else ()
    return text


def parse_scene(text: str) -> Scene:
    """Parse the scene text grammar. Raises ConfigError on malformed input."""
    section = None
    fields: dict = {}
    name = "scene"
    bounds = None
    materials: dict = {}
    reflectors: list = []

    def close_section():
        nonlocal name, bounds
        if section == "scene":
            name = fields.get("name", "scene")
            bounds = fields.get("bounds")
        elif section == "material":
            materials[fields["name"]] = float(fields["gamma"])
        elif section == "reflector":
            reflectors.append(
                Reflector(
                    corner=fields["corner"],
                    extents=fields["extents"],
                    normal=fields["normal"],
                    material=fields["material"],
                )
            )

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            if section is not None:
                close_section()
            section = line[1:-1].strip()
            if section not in ("scene", "material", "reflector"):
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            fields = {}
        elif "=" in line:
            if section is None:
                raise ConfigError(f"line {lineno}: key outside any section")
            key, _, val = line.partition("=")
            fields[key.strip()] = _parse_value(val)
        else:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
    if section is not None:
        close_section()
    if bounds is None:
        raise ConfigError("scene file missing [scene] bounds")
    try:
        return Scene(reflectors=tuple(reflectors), materials=materials, bounds=bounds, name=name)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid scene contents: {exc}") from exc
