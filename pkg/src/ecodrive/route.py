"""Distance-indexed route description with traffic lights and STOP signs."""

from __future__ import annotations

import bisect
import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Optional, Union


class RouteError(ValueError):
    """Raised for malformed or invariant-violating route documents."""


class Phase(str, Enum):
    GREEN = "G"
    YELLOW = "Y"
    RED = "R"


@dataclass(frozen=True)
class TrafficLight:
    location_m: float
    phase_cycle: tuple[tuple[Phase, float], ...]
    cycle_offset_s: float = 0.0

    def __post_init__(self):
        cycle = tuple((Phase(p), float(d)) for p, d in self.phase_cycle)
        object.__setattr__(self, "phase_cycle", cycle)
        if any(d <= 0 for _, d in cycle):
            raise RouteError(f"light at {self.location_m}: phase durations must be > 0")
        phases = {p for p, _ in cycle}
        if Phase.GREEN not in phases or Phase.RED not in phases:
            raise RouteError(f"light at {self.location_m}: cycle needs a Green and a Red phase")

    @property
    def cycle_length_s(self) -> float:
        return sum(d for _, d in self.phase_cycle)

    def _locate(self, time: float) -> tuple[int, float]:
        """Index of the active phase and time remaining in it."""
        tau = math.fmod(time + self.cycle_offset_s, self.cycle_length_s)
        if tau < 0:
            tau += self.cycle_length_s
        acc = 0.0
        for i, (_, d) in enumerate(self.phase_cycle):
            acc += d
            if tau < acc:
                return i, acc - tau
        return 0, self.phase_cycle[0][1]

    def phase_at(self, time: float) -> Phase:
        return self.phase_cycle[self._locate(time)[0]][0]

    def green_windows(self, time: float, horizon_s: float) -> list[tuple[float, float]]:
        """Green intervals as (start, end) offsets from ``time`` within ``horizon_s``.

        A window already open at ``time`` starts at 0.
        """
        idx, remaining = self._locate(time)
        n = len(self.phase_cycle)
        out: list[tuple[float, float]] = []
        start = 0.0
        end = remaining
        phase = self.phase_cycle[idx][0]
        while start < horizon_s:
            if phase is Phase.GREEN:
                if out and abs(out[-1][1] - start) < 1e-12:
                    out[-1] = (out[-1][0], end)
                else:
                    out.append((start, end))
            idx = (idx + 1) % n
            phase, d = self.phase_cycle[idx]
            start, end = end, end + d
        return out


@dataclass(frozen=True)
class StopSign:
    location_m: float


@dataclass(frozen=True)
class SpatMessage:
    """SPaT broadcast for one light.

    ``light`` carries the fixed-time plan so receivers can enumerate future
    green windows beyond the current phase.
    """

    light_location_m: float
    current_phase: Phase
    time_to_change_s: float
    next_phase: Phase
    timestamp_s: float
    light: Optional[TrafficLight] = field(default=None, compare=False, repr=False)


class Infrastructure(NamedTuple):
    kind: str  # "light" | "stop"
    location_m: float
    element: Union[TrafficLight, StopSign]


@dataclass(frozen=True)
class RouteProfile:
    length_m: float
    grade_table: tuple[tuple[float, float], ...]
    speed_limit_table: tuple[tuple[float, float], ...]
    lights: tuple[TrafficLight, ...] = ()
    stop_signs: tuple[StopSign, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "grade_table", tuple((float(s), float(g)) for s, g in self.grade_table))
        object.__setattr__(self, "speed_limit_table",
                           tuple((float(s), float(v)) for s, v in self.speed_limit_table))
        object.__setattr__(self, "lights", tuple(sorted(self.lights, key=lambda l: l.location_m)))
        object.__setattr__(self, "stop_signs", tuple(sorted(self.stop_signs, key=lambda s: s.location_m)))
        if not self.length_m > 0:
            raise RouteError("length_m must be > 0")
        for name in ("grade_table", "speed_limit_table"):
            table = getattr(self, name)
            if not table:
                raise RouteError(f"{name} must not be empty")
            stations = [s for s, _ in table]
            if stations[0] != 0:
                raise RouteError(f"{name}: first station must be 0")
            if any(b <= a for a, b in zip(stations, stations[1:])):
                raise RouteError(f"{name}: stations must be strictly increasing")
            if stations[-1] > self.length_m:
                raise RouteError(f"{name}: last station beyond route length")
        if any(v <= 0 for _, v in self.speed_limit_table):
            raise RouteError("speed limits must be > 0")
        if any(abs(g) >= math.pi / 2 for _, g in self.grade_table):
            raise RouteError("grade must satisfy |grade| < pi/2")
        locs = [e.location_m for e in (*self.lights, *self.stop_signs)]
        if any(not 0 <= x <= self.length_m for x in locs):
            raise RouteError("infrastructure location outside [0, length_m]")
        if len(set(locs)) != len(locs):
            raise RouteError("two infrastructure elements share a station")
        object.__setattr__(self, "_grade_s", [s for s, _ in self.grade_table])
        object.__setattr__(self, "_limit_s", [s for s, _ in self.speed_limit_table])
        infra = [Infrastructure("light", l.location_m, l) for l in self.lights]
        infra += [Infrastructure("stop", s.location_m, s) for s in self.stop_signs]
        infra.sort(key=lambda e: e.location_m)
        object.__setattr__(self, "_infra", tuple(infra))
        object.__setattr__(self, "_infra_s", [e.location_m for e in infra])

    @property
    def infrastructure(self) -> tuple[Infrastructure, ...]:
        return self._infra

    def _check_station(self, station: float) -> None:
        if not 0 <= station <= self.length_m:
            raise RouteError(f"station {station} outside route [0, {self.length_m}]")


def grade_at(route: RouteProfile, station: float) -> float:
    """Piecewise-linear grade [rad]; held flat beyond the last table entry."""
    route._check_station(station)
    table = route.grade_table
    i = bisect.bisect_right(route._grade_s, station) - 1
    if i >= len(table) - 1:
        return table[-1][1]
    (s0, g0), (s1, g1) = table[i], table[i + 1]
    return g0 + (g1 - g0) * (station - s0) / (s1 - s0)


def speed_limit_at(route: RouteProfile, station: float) -> float:
    route._check_station(station)
    i = bisect.bisect_right(route._limit_s, station) - 1
    return route.speed_limit_table[i][1]


def spat_at(light: TrafficLight, time: float) -> SpatMessage:
    idx, remaining = light._locate(time)
    nxt = light.phase_cycle[(idx + 1) % len(light.phase_cycle)][0]
    return SpatMessage(light.location_m, light.phase_cycle[idx][0], remaining, nxt, time, light)


def next_infrastructure(route: RouteProfile, station: float) -> Optional[Infrastructure]:
    """Nearest light or STOP sign strictly ahead of ``station``."""
    route._check_station(station)
    i = bisect.bisect_right(route._infra_s, station)
    return route._infra[i] if i < len(route._infra) else None


def dump_route(route: RouteProfile) -> dict:
    return {
        "length_m": route.length_m,
        "grade_table": [list(r) for r in route.grade_table],
        "speed_limit_table": [list(r) for r in route.speed_limit_table],
        "lights": [
            {"location_m": l.location_m,
             "cycle": [[p.value, d] for p, d in l.phase_cycle],
             "offset_s": l.cycle_offset_s}
            for l in route.lights
        ],
        "stop_signs": [{"location_m": s.location_m} for s in route.stop_signs],
    }


def route_hash(route: RouteProfile) -> str:
    blob = json.dumps(dump_route(route), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_route(document: Union[dict, str, Path]) -> RouteProfile:
    """Parse and validate a route from a dict, JSON text, or a file path."""
    if isinstance(document, (str, Path)):
        text = document
        if isinstance(document, Path) or not document.lstrip().startswith("{"):
            try:
                text = Path(document).read_text()
            except OSError as exc:
                raise RouteError(f"cannot read route file: {exc}") from exc
        try:
            document = json.loads(text)
        except json.JSONDecodeError as exc:
            raise RouteError(f"parse error: {exc}") from exc
    if not isinstance(document, dict):
        raise RouteError("parse error: route document must be a JSON object")
    try:
        lights = []
        for item in document.get("lights", []):
            cycle = tuple((Phase(p), float(d)) for p, d in item["cycle"])
            lights.append(TrafficLight(float(item["location_m"]), cycle, float(item.get("offset_s", 0.0))))
        stops = [StopSign(float(item["location_m"])) for item in document.get("stop_signs", [])]
        return RouteProfile(
            length_m=float(document["length_m"]),
            grade_table=tuple(tuple(r) for r in document["grade_table"]),
            speed_limit_table=tuple(tuple(r) for r in document["speed_limit_table"]),
            lights=tuple(lights),
            stop_signs=tuple(stops),
        )
    except RouteError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise RouteError(f"parse error: {exc!r}") from exc


def bundled_route(name: str = "arlington") -> RouteProfile:
    """Load a route shipped with the package (synthetic Arlington-like layout)."""
    text = resources.files("ecodrive.data").joinpath(f"{name}.json").read_text()
    return load_route(text)
