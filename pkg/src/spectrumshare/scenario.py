"""Scenario documents: everything one simulation run needs, as strict JSON.

Unknown keys are rejected anywhere in the document so a typo cannot
silently change an experiment. Semantic errors name the offending field
(e.g. "sensing.entries[0]").

Document shape (all keys optional except duration_ms):

    {
      "duration_ms": 3000,
      "mu": 1,
      "n_prb": 106,
      "tdd": ["DL","DL","DL","DL","DL","DL","DL","SPECIAL","UL","UL"],
      "sensing": {"entries": [[8, 13]], "period_frames": 1},
      "noise": {"psd": 1.0, "seed": 1},
      "ues": [{"id": "ue0", "snr_db": 20.0}],
      "incumbents": [{"id": "radar", "center_offset_hz": 0.0,
                      "bandwidth_hz": 7.2e6, "inr_db": 20.0,
                      "timeline": [[1000.0, true], [2000.0, false]]}],
      "detector": {"margin_db": 6.0, "k_on": 1, "k_off": 3,
                   "floor": "median"},
      "transport": "inproc",
      "ran_id": 1,
      "processing_delay_symbols": 0
    }

"tdd" entries also accept the short forms "D"/"U"/"S". "floor" is either
"median" or {"mode": "ewma", "alpha": 0.1}. "transport" is "inproc" or
{"tcp": {"port": 36422}} (port 0 picks a free one).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .airspace import IncumbentProfile, NoiseModel
from .dapp import DetectorParams
from .gnb import UeContext
from .grid import (
    PrbGrid,
    SensingSchedule,
    SlotKind,
    TddPattern,
    default_sensing_schedule,
    default_tdd_pattern,
    make_grid,
)

DEFAULT_TCP_PORT = 36422

_SLOT_NAMES = {
    "D": SlotKind.DL,
    "DL": SlotKind.DL,
    "U": SlotKind.UL,
    "UL": SlotKind.UL,
    "S": SlotKind.SPECIAL,
    "SPECIAL": SlotKind.SPECIAL,
}


class ScenarioError(ValueError):
    """Invalid scenario document; the message names the offending field."""


@dataclass(frozen=True)
class TransportSpec:
    kind: str = "inproc"  # "inproc" | "tcp"
    port: int = DEFAULT_TCP_PORT


@dataclass(frozen=True)
class Scenario:
    duration_ms: float
    grid: PrbGrid
    pattern: TddPattern
    schedule: SensingSchedule
    noise: NoiseModel
    ues: tuple[UeContext, ...]
    incumbents: tuple[IncumbentProfile, ...] = ()
    detector: DetectorParams = field(default_factory=DetectorParams)
    transport: TransportSpec = field(default_factory=TransportSpec)
    ran_id: int = 1
    processing_delay_symbols: int = 0


def _fail(path: str, why: str):
    raise ScenarioError(f"{path}: {why}")


def _expect(obj, path: str, kind, what: str):
    if not isinstance(obj, kind) or isinstance(obj, bool) and kind is not bool:
        _fail(path, f"expected {what}, got {type(obj).__name__}")
    return obj


def _number(obj, path: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        _fail(path, f"expected a number, got {type(obj).__name__}")
    return float(obj)


def _integer(obj, path: str) -> int:
    if isinstance(obj, bool) or not isinstance(obj, int):
        _fail(path, f"expected an integer, got {type(obj).__name__}")
    return obj


def _check_keys(obj: dict, path: str, allowed: set[str]):
    unknown = set(obj) - allowed
    if unknown:
        _fail(path, f"unknown key(s) {sorted(unknown)} (allowed: {sorted(allowed)})")


def _parse_tdd(raw, path: str) -> TddPattern:
    _expect(raw, path, list, "a list of slot kinds")
    kinds = []
    for i, name in enumerate(raw):
        _expect(name, f"{path}[{i}]", str, "a slot kind string")
        kind = _SLOT_NAMES.get(name.upper())
        if kind is None:
            _fail(f"{path}[{i}]", f"unknown slot kind {name!r} (use DL/UL/SPECIAL)")
        kinds.append(kind)
    try:
        return TddPattern(slots=tuple(kinds))
    except ValueError as exc:
        _fail(path, str(exc))


def _parse_sensing(raw, path: str) -> SensingSchedule:
    _expect(raw, path, dict, "an object")
    _check_keys(raw, path, {"entries", "period_frames"})
    entries = []
    raw_entries = raw.get("entries", [[8, 13]])
    _expect(raw_entries, f"{path}.entries", list, "a list of [slot, symbol] pairs")
    for i, pair in enumerate(raw_entries):
        p = f"{path}.entries[{i}]"
        _expect(pair, p, list, "a [slot, symbol] pair")
        if len(pair) != 2:
            _fail(p, f"expected 2 elements, got {len(pair)}")
        entries.append((_integer(pair[0], f"{p}[0]"), _integer(pair[1], f"{p}[1]")))
    period = _integer(raw.get("period_frames", 1), f"{path}.period_frames")
    try:
        return SensingSchedule(entries=tuple(entries), period_frames=period)
    except ValueError as exc:
        _fail(path, str(exc))


def _parse_noise(raw, path: str) -> NoiseModel:
    _expect(raw, path, dict, "an object")
    _check_keys(raw, path, {"psd", "seed"})
    psd = _number(raw.get("psd", 1.0), f"{path}.psd")
    seed = _integer(raw.get("seed", 1), f"{path}.seed")
    try:
        return NoiseModel(psd_per_subcarrier=psd, seed=seed)
    except ValueError as exc:
        _fail(path, str(exc))


def _parse_ues(raw, path: str) -> tuple[UeContext, ...]:
    _expect(raw, path, list, "a list of UEs")
    if not raw:
        _fail(path, "at least one UE is required")
    ues = []
    seen = set()
    for i, entry in enumerate(raw):
        p = f"{path}[{i}]"
        _expect(entry, p, dict, "an object")
        _check_keys(entry, p, {"id", "snr_db"})
        ue_id = _expect(entry.get("id", f"ue{i}"), f"{p}.id", str, "a string")
        if ue_id in seen:
            _fail(f"{p}.id", f"duplicate UE id {ue_id!r}")
        seen.add(ue_id)
        snr = _number(entry.get("snr_db", 20.0), f"{p}.snr_db")
        try:
            ues.append(UeContext(ue_id=ue_id, snr_db=snr))
        except ValueError as exc:
            _fail(p, str(exc))
    return tuple(ues)


def _parse_incumbents(raw, path: str) -> tuple[IncumbentProfile, ...]:
    _expect(raw, path, list, "a list of incumbents")
    profiles = []
    for i, entry in enumerate(raw):
        p = f"{path}[{i}]"
        _expect(entry, p, dict, "an object")
        _check_keys(
            entry, p, {"id", "center_offset_hz", "bandwidth_hz", "inr_db", "timeline"}
        )
        timeline = []
        raw_tl = entry.get("timeline", [])
        _expect(raw_tl, f"{p}.timeline", list, "a list of [t_ms, active] pairs")
        for j, ev in enumerate(raw_tl):
            q = f"{p}.timeline[{j}]"
            _expect(ev, q, list, "a [t_ms, active] pair")
            if len(ev) != 2:
                _fail(q, f"expected 2 elements, got {len(ev)}")
            t = _number(ev[0], f"{q}[0]")
            active = ev[1]
            if not isinstance(active, bool):
                _fail(f"{q}[1]", f"expected a boolean, got {type(active).__name__}")
            timeline.append((t, active))
        try:
            profiles.append(
                IncumbentProfile(
                    id=_expect(entry.get("id", f"incumbent{i}"), f"{p}.id", str, "a string"),
                    center_offset_hz=_number(
                        entry.get("center_offset_hz", 0.0), f"{p}.center_offset_hz"
                    ),
                    bandwidth_hz=_number(entry.get("bandwidth_hz", 0.0), f"{p}.bandwidth_hz"),
                    inr_db=_number(entry.get("inr_db", 20.0), f"{p}.inr_db"),
                    timeline=tuple(timeline),
                )
            )
        except ValueError as exc:
            _fail(p, str(exc))
    return tuple(profiles)


def _parse_detector(raw, path: str) -> DetectorParams:
    _expect(raw, path, dict, "an object")
    _check_keys(raw, path, {"margin_db", "k_on", "k_off", "floor"})
    floor = raw.get("floor", "median")
    mode, alpha = "median", 0.1
    if isinstance(floor, str):
        mode = floor
    elif isinstance(floor, dict):
        _check_keys(floor, f"{path}.floor", {"mode", "alpha"})
        mode = _expect(floor.get("mode", "ewma"), f"{path}.floor.mode", str, "a string")
        alpha = _number(floor.get("alpha", 0.1), f"{path}.floor.alpha")
    else:
        _fail(f"{path}.floor", "expected \"median\" or an ewma object")
    try:
        return DetectorParams(
            margin_db=_number(raw.get("margin_db", 6.0), f"{path}.margin_db"),
            k_on=_integer(raw.get("k_on", 1), f"{path}.k_on"),
            k_off=_integer(raw.get("k_off", 3), f"{path}.k_off"),
            floor_mode=mode,
            ewma_alpha=alpha,
        )
    except ValueError as exc:
        _fail(path, str(exc))


def _parse_transport(raw, path: str) -> TransportSpec:
    if raw == "inproc":
        return TransportSpec(kind="inproc")
    if isinstance(raw, dict):
        _check_keys(raw, path, {"tcp"})
        tcp = raw.get("tcp", {})
        _expect(tcp, f"{path}.tcp", dict, "an object")
        _check_keys(tcp, f"{path}.tcp", {"port"})
        port = _integer(tcp.get("port", DEFAULT_TCP_PORT), f"{path}.tcp.port")
        if not 0 <= port <= 65535:
            _fail(f"{path}.tcp.port", f"port {port} outside 0..65535")
        return TransportSpec(kind="tcp", port=port)
    _fail(path, 'expected "inproc" or {"tcp": {"port": N}}')


_TOP_KEYS = {
    "duration_ms",
    "mu",
    "n_prb",
    "tdd",
    "sensing",
    "noise",
    "ues",
    "incumbents",
    "detector",
    "transport",
    "ran_id",
    "processing_delay_symbols",
}


def load_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            f"not valid JSON: {exc.msg} at line {exc.lineno} column {exc.colno}"
        ) from exc
    _expect(doc, "document", dict, "a JSON object")
    _check_keys(doc, "document", _TOP_KEYS)

    if "duration_ms" not in doc:
        _fail("duration_ms", "required")
    duration = _number(doc["duration_ms"], "duration_ms")
    if duration <= 0:
        _fail("duration_ms", f"must be > 0, got {duration}")

    mu = _integer(doc.get("mu", 1), "mu")
    n_prb = _integer(doc.get("n_prb", 106), "n_prb")
    try:
        grid = make_grid(mu, n_prb)
    except ValueError as exc:
        _fail("mu/n_prb", str(exc))

    pattern = (
        _parse_tdd(doc["tdd"], "tdd") if "tdd" in doc else default_tdd_pattern()
    )
    try:
        pattern.validate_for(grid.numerology)
    except ValueError as exc:
        _fail("tdd", str(exc))

    schedule = (
        _parse_sensing(doc["sensing"], "sensing")
        if "sensing" in doc
        else default_sensing_schedule()
    )
    try:
        schedule.validate_for(pattern, grid.numerology)
    except ValueError as exc:
        _fail("sensing", str(exc))

    noise = _parse_noise(doc.get("noise", {}), "noise")
    ues = _parse_ues(doc.get("ues", [{"id": "ue0", "snr_db": 20.0}]), "ues")
    incumbents = _parse_incumbents(doc.get("incumbents", []), "incumbents")
    detector = _parse_detector(doc.get("detector", {}), "detector")
    transport = _parse_transport(doc.get("transport", "inproc"), "transport")
    ran_id = _integer(doc.get("ran_id", 1), "ran_id")
    delay = _integer(doc.get("processing_delay_symbols", 0), "processing_delay_symbols")
    if delay < 0:
        _fail("processing_delay_symbols", f"must be >= 0, got {delay}")

    return Scenario(
        duration_ms=duration,
        grid=grid,
        pattern=pattern,
        schedule=schedule,
        noise=noise,
        ues=ues,
        incumbents=incumbents,
        detector=detector,
        transport=transport,
        ran_id=ran_id,
        processing_delay_symbols=delay,
    )
