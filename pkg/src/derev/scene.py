"""Scene configuration and rendering.

Scenes are flat human-readable key-value files (configparser syntax) with
sections [scene], [room], [array], [source], optional [interferer],
[trajectory] (moving sources), [switch] (abrupt position change) and
[method] defaults. Shipped defaults live in the packaged ``scenes/``
directory and can be referenced by bare name.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import ConfigError
from .rir import ArrayGeometry, Room, Trajectory, image_rir, render_moving, render_static, uca
from .signals import read_wav, synthetic_speech


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


@dataclass
class SourceSpec:
    name: str
    signal: str = "synthetic"
    position: tuple[float, float, float] | None = None
    sir_db: float | None = None  # level relative to the desired source at the ref mic


@dataclass
class Scene:
    kind: str = "static"  # static | moving | switch
    duration: float = 5.0
    seed: int = 0
    room: Room = field(default_factory=Room)
    array: ArrayGeometry = field(default_factory=uca)
    sources: list[SourceSpec] = field(default_factory=list)
    trajectory: Trajectory | None = None
    rir_hop: float = 0.005
    switch_time: float | None = None
    switch_positions: tuple | None = None
    max_rir_samples: int | None = None
    method: dict = field(default_factory=dict)

    @property
    def sample_rate(self) -> int:
        return self.room.sample_rate


def scene_path(name_or_path: str) -> Path:
    """Resolve a scene argument: an existing file path, or the bare name of
    a packaged scene (e.g. ``static_default``)."""
    p = Path(name_or_path)
    if p.exists():
        return p
    packaged = resources.files("derev") / "scenes" / f"{name_or_path}.cfg"
    with resources.as_file(packaged) as fp:
        if fp.exists():
            return fp
    raise ConfigError(f"scene not found: {name_or_path}")


def load_scene(name_or_path: str, overrides: dict[str, str] | None = None) -> Scene:
    """Parse a scene file, applying ``section.key=value`` overrides."""
    parser = configparser.ConfigParser()
    path = scene_path(name_or_path)
    parser.read(path)
    for key, value in (overrides or {}).items():
        if "." not in key:
            raise ConfigError(f"override must be section.key=value: {key!r}")
        section, opt = key.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, opt, value)
    try:
        return _build_scene(parser)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _build_scene(parser: configparser.ConfigParser) -> Scene:
    sc = parser["scene"] if parser.has_section("scene") else {}
    room_sec = parser["room"] if parser.has_section("room") else {}
    room = Room(
        dimensions=_floats(room_sec.get("dimensions", "6.0 5.5 4.5")),
        rt60=float(room_sec.get("rt60", 0.6)),
        sample_rate=int(float(sc.get("sample_rate", 16000))),
    )
    arr_sec = parser["array"] if parser.has_section("array") else {}
    array = uca(
        mics=int(arr_sec.get("mics", 4)),
        radius=float(arr_sec.get("radius", 0.1)),
        center=_floats(arr_sec.get("center", "2.3 2.45 1.1")),
    )
    for pos in array.positions:
        if not room.contains(pos):
            raise ConfigError("array extends outside the room")

    scene = Scene(
        kind=sc.get("kind", "static"),
        duration=float(sc.get("duration", 5.0)),
        seed=int(sc.get("seed", 0)),
        room=room,
        array=array,
    )
    if room_sec.get("max_rir_seconds"):
        scene.max_rir_samples = int(float(room_sec["max_rir_seconds"]) * room.sample_rate)

    if parser.has_section("source"):
        src = parser["source"]
        spec = SourceSpec(name="source", signal=src.get("signal", "synthetic"))
        if src.get("position"):
            spec.position = _floats(src["position"])
        scene.sources.append(spec)
    if parser.has_section("interferer"):
        intf = parser["interferer"]
        scene.sources.append(
            SourceSpec(
                name="interferer",
                signal=intf.get("signal", "synthetic"),
                position=_floats(intf.get("position", "3.007 3.157 1.1")),
                sir_db=float(intf.get("sir_db", 0.0)),
            )
        )

    if scene.kind == "moving":
        if not parser.has_section("trajectory"):
            raise ConfigError("moving scene needs a [trajectory] section")
        tr = parser["trajectory"]
        start = np.array(_floats(tr["start"]))
        end = np.array(_floats(tr["end"]))
        scene.trajectory = Trajectory(
            times=np.array([0.0, scene.duration]), points=np.stack([start, end])
        )
        scene.rir_hop = float(tr.get("rir_hop", 0.005))
    elif scene.kind == "switch":
        if not parser.has_section("switch"):
            raise ConfigError("switch scene needs a [switch] section")
        sw = parser["switch"]
        scene.switch_time = float(sw.get("switch_time", 18.6))
        scene.switch_positions = (_floats(sw["position_a"]), _floats(sw["position_b"]))
        scene.rir_hop = float(sw.get("rir_hop", 0.005))
    elif scene.kind != "static":
        raise ConfigError(f"unknown scene kind {scene.kind!r}")

    if parser.has_section("method"):
        scene.method = dict(parser["method"])
    _validate_positions(scene)
    return scene


def _validate_positions(scene: Scene) -> None:
    for spec in scene.sources:
        if spec.position is not None and not scene.room.contains(np.asarray(spec.position)):
            raise ConfigError(f"{spec.name} position outside the room")
    if scene.trajectory is not None:
        for p in scene.trajectory.points:
            if not scene.room.contains(p):
                raise ConfigError("trajectory leaves the room")


@dataclass
class RenderedSource:
    name: str
    signal: np.ndarray          # dry source signal
    mic_signals: np.ndarray     # (samples, M) full render
    reference: np.ndarray       # direct-path render at the reference mic
    rir: np.ndarray | None      # (M, L) for static positions, None when moving


@dataclass
class Simulation:
    scene: Scene
    mixture: np.ndarray
    sources: list[RenderedSource]

    @property
    def desired(self) -> RenderedSource:
        return self.sources[0]


def _source_signal(spec: SourceSpec, scene: Scene, rng: np.random.Generator) -> np.ndarray:
    n = int(round(scene.duration * scene.sample_rate))
    if spec.signal == "synthetic":
        return synthetic_speech(scene.duration, scene.sample_rate, rng)
    rate, data = read_wav(spec.signal)
    if rate != scene.sample_rate:
        raise ConfigError(
            f"{spec.name} sample rate {rate} != scene rate {scene.sample_rate}"
        )
    if data.ndim > 1:
        data = data[:, 0]
    if len(data) < n:
        reps = int(np.ceil(n / len(data)))
        data = np.tile(data, reps)
    return data[:n]


def _switch_trajectory(scene: Scene) -> Trajectory:
    a, b = scene.switch_positions
    ts = scene.switch_time
    return Trajectory(
        times=np.array([0.0, ts, ts + 1e-9, scene.duration]),
        points=np.array([a, a, b, b]),
    )


def simulate(scene: Scene, seed: int | None = None, reference_mic: int = 0) -> Simulation:
    """Render a scene deterministically: per-source mic images, direct-path
    references, and the mixture. The interferer is scaled for its target
    SIR against the desired source at the reference mic."""
    rng = np.random.default_rng(scene.seed if seed is None else seed)
    if not scene.sources:
        raise ConfigError("scene has no sources")
    rendered: list[RenderedSource] = []
    for idx, spec in enumerate(scene.sources):
        sig = _source_signal(spec, scene, rng)
        moving = idx == 0 and scene.kind in ("moving", "switch")
        if moving:
            traj = scene.trajectory if scene.kind == "moving" else _switch_trajectory(scene)
            mic_sig = render_moving(
                scene.room, scene.array, traj, sig, scene.rir_hop, scene.max_rir_samples
            )
            ref = render_moving(
                scene.room, scene.array, traj, sig, scene.rir_hop,
                max_length=256, absorption_override=1.0,
            )[:, reference_mic]
            rir = None
        else:
            if spec.position is None:
                raise ConfigError(f"{spec.name} needs a position")
            rir = image_rir(scene.room, spec.position, scene.array.positions,
                            scene.max_rir_samples)
            mic_sig = render_static(scene.room, scene.array, [spec.position], [sig],
                                    rirs=[rir])
            direct = image_rir(scene.room, spec.position, scene.array.positions,
                               max_length=256, absorption_override=1.0)
            ref = render_static(scene.room, scene.array, [spec.position], [sig],
                                rirs=[direct])[:, reference_mic]
        rendered.append(RenderedSource(spec.name, sig, mic_sig, ref, rir))

    desired_energy = float(np.sum(rendered[0].mic_signals[:, reference_mic] ** 2))
    for spec, rend in zip(scene.sources[1:], rendered[1:]):
        if spec.sir_db is None:
            continue
        own = float(np.sum(rend.mic_signals[:, reference_mic] ** 2))
        if own <= 0.0:
            raise ConfigError(f"{spec.name} renders silent at the reference mic")
        gain = float(np.sqrt(desired_energy / (own * 10.0 ** (spec.sir_db / 10.0))))
        rend.signal = rend.signal * gain
        rend.mic_signals = rend.mic_signals * gain
        rend.reference = rend.reference * gain

    nsamp = max(r.mic_signals.shape[0] for r in rendered)
    mixture = np.zeros((nsamp, scene.array.mics))
    for rend in rendered:
        mixture[: rend.mic_signals.shape[0]] += rend.mic_signals
    return Simulation(scene=scene, mixture=mixture, sources=rendered)
