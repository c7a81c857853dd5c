"""Spectrum-sensing dApp: per-PRB energy detection with hysteresis.

Pipeline per I/Q report: unitary FFT -> per-PRB mean bin energy ->
noise-floor estimate (median of the energy vector by default, robust as
long as the occupied share stays below half the PRBs) -> threshold at a
fixed dB margin above the floor -> per-PRB on/off hysteresis counters.
A control action barring the detected PRBs goes out only when the barred
set actually changes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Iterator

import numpy as np

from . import e3
from .airspace import IqSymbol
from .capture import read_capture
from .e3 import Phase, SessionState, StreamDecoder, session_step
from .grid import PrbGrid, occupied_bins

# threshold fallback for an all-zero floor (silent capture must not divide by 0)
FLOOR_EPSILON = 1e-12

FLOOR_MEDIAN = "median"
FLOOR_EWMA = "ewma"


@dataclass(frozen=True)
class DetectorParams:
    """Threshold margin, hysteresis depths and floor-tracking mode.

    k_on consecutive detections bar a PRB, k_off consecutive clears
    release it (bar fast, release slow by default). ewma_alpha only
    matters in "ewma" floor mode.
    """

    margin_db: float = 6.0
    k_on: int = 1
    k_off: int = 3
    floor_mode: str = FLOOR_MEDIAN
    ewma_alpha: float = 0.1

    def __post_init__(self):
        if self.margin_db <= 0:
            raise ValueError(f"margin_db must be > 0, got {self.margin_db}")
        if self.k_on < 1 or self.k_off < 1:
            raise ValueError("k_on and k_off must be >= 1")
        if self.floor_mode not in (FLOOR_MEDIAN, FLOOR_EWMA):
            raise ValueError(f"unknown floor mode {self.floor_mode!r}")
        if not 0.0 < self.ewma_alpha <= 1.0:
            raise ValueError(f"ewma_alpha must be in (0, 1], got {self.ewma_alpha}")


@dataclass(frozen=True, eq=False)
class DetectorState:
    """Per-PRB hysteresis counters plus the current and last-reported bars."""

    on_counts: np.ndarray
    off_counts: np.ndarray
    barred: np.ndarray
    last_reported: np.ndarray
    ewma_floor: float | None = None

    @property
    def n_prb(self) -> int:
        return int(self.barred.size)


def new_detector_state(n_prb: int) -> DetectorState:
    return DetectorState(
        on_counts=np.zeros(n_prb, dtype=np.int32),
        off_counts=np.zeros(n_prb, dtype=np.int32),
        barred=np.zeros(n_prb, dtype=bool),
        last_reported=np.zeros(n_prb, dtype=bool),
    )


def prb_energies(iq: IqSymbol | np.ndarray, grid: PrbGrid) -> np.ndarray:
    """Mean |X_k|^2 over each PRB's 12 bins (X = unitary DFT of the samples)."""
    samples = np.asarray(getattr(iq, "samples", iq), dtype=np.complex128)
    if samples.shape != (grid.fft_size,):
        raise ValueError(
            f"expected {grid.fft_size} samples, got shape {samples.shape}"
        )
    spectrum = np.fft.fft(samples, norm="ortho")
    power = np.abs(spectrum[occupied_bins(grid)]) ** 2
    return power.reshape(grid.n_prb, 12).mean(axis=1)


def lower_median(values: np.ndarray) -> float:
    """Median taking the lower of the two middle values for even lengths."""
    values = np.asarray(values)
    return float(np.partition(values, (values.size - 1) // 2)[(values.size - 1) // 2])


def estimate_floor(
    energies: np.ndarray, state: DetectorState, params: DetectorParams
) -> float:
    """Noise-floor estimate for one report.

    Median mode returns the (lower) median of the energy vector. EWMA mode
    blends the current median into the previous floor with weight alpha,
    seeding from the first median. The caller persists the EWMA value via
    DetectorState.ewma_floor.
    """
    med = lower_median(energies)
    if params.floor_mode == FLOOR_MEDIAN:
        return med
    if state.ewma_floor is None:
        return med
    return params.ewma_alpha * med + (1.0 - params.ewma_alpha) * state.ewma_floor


def detect_raw(energies: np.ndarray, floor: float, margin_db: float) -> np.ndarray:
    """Instantaneous occupancy: energy strictly above floor + margin."""
    energies = np.asarray(energies)
    if floor <= 0.0:
        return energies > FLOOR_EPSILON
    return energies > floor * 10.0 ** (margin_db / 10.0)


def hysteresis_update(
    state: DetectorState, raw: np.ndarray, params: DetectorParams
) -> tuple[DetectorState, bool, np.ndarray]:
    """Debounce one raw detection into the barred set.

    Returns (new state, changed, barred) where changed compares against
    the last *reported* set, so the caller emits a control action exactly
    when changed is true.
    """
    raw = np.asarray(raw, dtype=bool)
    if raw.shape != state.barred.shape:
        raise ValueError(
            f"raw bitset has {raw.size} bits, detector has {state.n_prb} PRBs"
        )
    cap = max(params.k_on, params.k_off)
    on = np.where(raw, np.minimum(state.on_counts + 1, cap), 0).astype(np.int32)
    off = np.where(raw, 0, np.minimum(state.off_counts + 1, cap)).astype(np.int32)
    barred = state.barred.copy()
    barred[on >= params.k_on] = True
    barred[off >= params.k_off] = False
    changed = bool(np.any(barred != state.last_reported))
    reported = barred.copy() if changed else state.last_reported
    new_state = replace(
        state, on_counts=on, off_counts=off, barred=barred, last_reported=reported
    )
    return new_state, changed, barred


def dapp_step(
    state: DetectorState,
    msg: e3.E3Message,
    params: DetectorParams,
    grid: PrbGrid,
) -> tuple[DetectorState, list[e3.E3Message]]:
    """Run the detection pipeline on one inbound message.

    Only IqReports produce work; a report whose sample count does not
    match the grid is dropped. Emits at most one ControlAction, exactly
    when the barred set changed.
    """
    if not isinstance(msg, e3.IqReport):
        return state, []
    if msg.n_samples != grid.fft_size:
        return state, []
    energies = prb_energies(msg.iq, grid)
    floor = estimate_floor(energies, state, params)
    raw = detect_raw(energies, floor, params.margin_db)
    state = replace(state, ewma_floor=floor)
    state, changed, barred = hysteresis_update(state, raw, params)
    if not changed:
        return state, []
    return state, [e3.control_action_for(msg.frame, barred)]


class Dapp:
    """The dApp as a single logical actor (client end of the wire).

    start() returns the opening SetupRequest bytes; feed() consumes
    inbound bytes and returns outbound bytes (Subscribe after an accepted
    setup, control actions after reports that change the barred set).
    """

    def __init__(
        self,
        grid: PrbGrid,
        params: DetectorParams | None = None,
        ran_id: int = 1,
        subscribe_period: int = 1,
    ):
        self.grid = grid
        self.params = params or DetectorParams()
        self.ran_id = ran_id
        self.subscribe_period = subscribe_period
        self.state = new_detector_state(grid.n_prb)
        self.session = SessionState()
        self._decoder = StreamDecoder()
        self.counters = {
            "msgs_in": 0,
            "msgs_out": 0,
            "reports_processed": 0,
            "reports_malformed": 0,
            "actions_sent": 0,
            "decode_errors": 0,
            "setup_rejected": 0,
        }

    def start(self) -> bytes:
        """Open the session: the dApp proposes the grid it expects."""
        msg = e3.SetupRequest(
            ran_id=self.ran_id,
            n_prb=self.grid.n_prb,
            fft_size=self.grid.fft_size,
            mu=self.grid.numerology.mu,
        )
        out = bytearray()
        self._send(msg, out)
        return bytes(out)

    def feed(self, data: bytes) -> bytes:
        out = bytearray()
        try:
            msgs = self._decoder.feed(data)
        except e3.DecodeError:
            self.counters["decode_errors"] += 1
            self._decoder = StreamDecoder()
            self._send(e3.ErrorMsg(e3.ERR_MALFORMED), out)
            return bytes(out)
        for msg in msgs:
            self.counters["msgs_in"] += 1
            self.session, actions = session_step(self.session, (e3.RECEIVED, msg))
            for action in actions:
                if action[0] == e3.DELIVER:
                    self._handle(msg, out)
                elif action[0] == e3.REJECT:
                    self._send(e3.ErrorMsg(action[1]), out)
        return bytes(out)

    def closed(self) -> None:
        self.session, _ = session_step(self.session, e3.TRANSPORT_CLOSED)
        self._decoder = StreamDecoder()

    @property
    def subscribed(self) -> bool:
        return self.session.phase is Phase.SUBSCRIBED

    def _send(self, msg: e3.E3Message, out: bytearray) -> None:
        self.session, _ = session_step(self.session, (e3.SENT, msg))
        out += e3.encode(msg)
        self.counters["msgs_out"] += 1

    def _handle(self, msg: e3.E3Message, out: bytearray) -> None:
        if isinstance(msg, e3.SetupResponse):
            if msg.accepted:
                self._send(
                    e3.Subscribe(
                        stream_id=e3.STREAM_SENSING_IQ,
                        period_frames=self.subscribe_period,
                    ),
                    out,
                )
            else:
                self.counters["setup_rejected"] += 1
        elif isinstance(msg, e3.IqReport):
            if msg.n_samples != self.grid.fft_size:
                self.counters["reports_malformed"] += 1
                return
            self.counters["reports_processed"] += 1
            self.state, replies = dapp_step(self.state, msg, self.params, self.grid)
            for reply in replies:
                self.counters["actions_sent"] += 1
                self._send(reply, out)
        # SubscribeAck flips the session to subscribed; Error is informational.


def detect_capture(
    path, grid: PrbGrid, params: DetectorParams | None = None
) -> Iterator[dict]:
    """Offline detection over an IQS1 capture.

    Yields one report dict per stored symbol in capture order. The file
    carries no frame coordinates, so symbols are numbered sequentially
    with the default one-per-frame sensing placement (slot 8, symbol 13).
    """
    params = params or DetectorParams()
    fft_size, symbols = read_capture(path)
    if fft_size != grid.fft_size:
        raise ValueError(
            f"capture holds {fft_size}-point symbols, grid needs {grid.fft_size}"
        )
    state = new_detector_state(grid.n_prb)
    for i, samples in enumerate(symbols):
        energies = prb_energies(samples, grid)
        floor = estimate_floor(energies, state, params)
        raw = detect_raw(energies, floor, params.margin_db)
        state = replace(state, ewma_floor=floor)
        state, _changed, barred = hysteresis_update(state, raw, params)
        yield {
            "frame": i,
            "slot": 8,
            "symbol": 13,
            "energies": [round(float(x), 6) for x in energies],
            "floor": round(float(floor), 6),
            "raw": [int(p) for p in np.nonzero(raw)[0]],
            "barred": [int(p) for p in np.nonzero(barred)[0]],
        }


def barred_sets_over(
    reports: Iterable[dict],
) -> list[set[int]]:
    """Convenience: the barred set trajectory of an offline run."""
    return [set(r["barred"]) for r in reports]
