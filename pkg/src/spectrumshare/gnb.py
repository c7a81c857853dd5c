"""Simulated gNB: TDD scheduler with a barred-PRB mask plus the embedded
publish/subscribe agent that streams sensing I/Q and applies control
actions.

Scheduling is round-robin over full-buffer UEs at PRB granularity.
Control actions never touch the slot they arrive in: the new mask is
staged and swaps in at the next slot boundary. Throughput is Shannon
capacity over the assigned PRBs, scaled by the data-symbol share of the
slot (sensing symbols carry no UEs).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from . import e3
from .airspace import IqSymbol
from .e3 import Phase, SessionState, StreamDecoder, session_step
from .grid import (
    PrbGrid,
    SensingSchedule,
    SlotKind,
    TddPattern,
    sensing_symbols_in_frame,
    slot_kind,
)


@dataclass(frozen=True)
class UeContext:
    """A full-buffer UE with a flat per-PRB SNR (no incumbent)."""

    ue_id: str
    snr_db: float
    full_buffer: bool = True

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ValueError(f"snr_db must be finite, got {self.snr_db}")


@dataclass(frozen=True, eq=False)
class SchedulerState:
    """Current barred mask, staged mask, and round-robin position."""

    barred: np.ndarray
    pending_mask: np.ndarray | None
    pending_slot: int | None
    rr_cursor: int
    ues: tuple[UeContext, ...]

    @property
    def n_prb(self) -> int:
        return int(self.barred.size)


def new_scheduler(n_prb: int, ues: Sequence[UeContext]) -> SchedulerState:
    return SchedulerState(
        barred=np.zeros(n_prb, dtype=bool),
        pending_mask=None,
        pending_slot=None,
        rr_cursor=0,
        ues=tuple(ues),
    )


@dataclass(frozen=True, eq=False)
class Allocation:
    """Per-PRB UE assignment of one slot.

    owners[p] is an index into ue_ids, or -1 for an unassigned PRB.
    The assignment applies to the n_data_symbols data symbols only;
    sensing_symbols carry no UEs.
    """

    slot: int
    kind: SlotKind
    owners: np.ndarray
    ue_ids: tuple[str, ...]
    sensing_symbols: tuple[int, ...]
    n_data_symbols: int

    def owner_of(self, prb: int) -> str | None:
        u = int(self.owners[prb])
        return None if u < 0 else self.ue_ids[u]

    def assigned_count(self) -> int:
        return int((self.owners >= 0).sum())


def apply_control_action(
    state: SchedulerState, barred_set: np.ndarray, current_slot: int
) -> SchedulerState:
    """Stage a new barred mask; it takes effect at slot current_slot + 1."""
    mask = np.asarray(barred_set, dtype=bool)
    if mask.shape != (state.n_prb,):
        raise ValueError(
            f"barred set has {mask.size} bits, scheduler has {state.n_prb} PRBs"
        )
    return replace(state, pending_mask=mask.copy(), pending_slot=current_slot + 1)


def schedule_slot(
    state: SchedulerState,
    slot: int,
    kind: SlotKind,
    sensing_symbols: Sequence[int] = (),
) -> tuple[Allocation, SchedulerState]:
    """Allocate one slot and return the advanced scheduler state.

    A staged mask whose activation slot has been reached swaps in before
    the allocation is made. DL and UL slots deal non-barred PRBs to UEs
    round-robin from the cursor; SPECIAL slots carry no data.
    """
    barred = state.barred
    pending_mask, pending_slot = state.pending_mask, state.pending_slot
    if pending_mask is not None and pending_slot is not None and slot >= pending_slot:
        barred = pending_mask
        pending_mask = None
        pending_slot = None

    n_ues = len(state.ues)
    owners = np.full(state.n_prb, -1, dtype=np.int32)
    cursor = state.rr_cursor
    if kind is not SlotKind.SPECIAL and n_ues:
        free = np.nonzero(~barred)[0]
        owners[free] = (cursor + np.arange(free.size)) % n_ues
        cursor = (cursor + free.size) % n_ues

    alloc = Allocation(
        slot=slot,
        kind=kind,
        owners=owners,
        ue_ids=tuple(ue.ue_id for ue in state.ues),
        sensing_symbols=tuple(sensing_symbols),
        n_data_symbols=14 - len(sensing_symbols),
    )
    new_state = replace(
        state,
        barred=barred,
        pending_mask=pending_mask,
        pending_slot=pending_slot,
        rr_cursor=cursor,
    )
    return alloc, new_state


def slot_throughput_bits(
    alloc: Allocation,
    grid: PrbGrid,
    snr_db_by_ue: Mapping[str, float],
    interference_linear: np.ndarray,
) -> dict[str, float]:
    """Shannon-rate bits each UE carries in this slot.

    Per assigned PRB: sinr = snr / (1 + I), and the PRB contributes
    12 * scs * log2(1 + sinr) * slot_duration, scaled by the data-symbol
    share n_data_symbols/14.
    """
    interference = np.asarray(interference_linear, dtype=float)
    if interference.shape != (grid.n_prb,):
        raise ValueError(
            f"interference vector has shape {interference.shape}, "
            f"expected ({grid.n_prb},)"
        )
    scale = (
        12.0
        * grid.scs_hz
        * grid.numerology.slot_duration_s
        * (alloc.n_data_symbols / 14.0)
    )
    bits: dict[str, float] = {}
    for u, ue_id in enumerate(alloc.ue_ids):
        prbs = alloc.owners == u
        if not prbs.any():
            bits[ue_id] = 0.0
            continue
        snr = 10.0 ** (snr_db_by_ue[ue_id] / 10.0)
        sinr = snr / (1.0 + interference[prbs])
        bits[ue_id] = float(np.log2(1.0 + sinr).sum() * scale)
    return bits


def agent_poll(session: SessionState, iq: IqSymbol) -> list[e3.E3Message]:
    """Reports due for one sensing symbol: exactly one IqReport when the
    session is subscribed and the frame matches the subscription period,
    nothing otherwise."""
    if session.phase is not Phase.SUBSCRIBED:
        return []
    period = session.period_frames or 1
    if iq.frame % period != 0:
        return []
    report = e3.IqReport(
        frame=iq.frame,
        slot=iq.slot,
        symbol=iq.symbol,
        iq=np.asarray(iq.samples, dtype=np.complex64),
    )
    return [report]


class Gnb:
    """The gNB as a single logical actor.

    Drive it with on_slot_start() per slot and on_sensing_symbol() per
    reserved symbol; feed() consumes inbound wire bytes and returns the
    outbound reply bytes. All state mutation happens on the caller's
    thread.
    """

    def __init__(
        self,
        grid: PrbGrid,
        pattern: TddPattern,
        schedule: SensingSchedule,
        ues: Sequence[UeContext],
        ran_id: int = 1,
    ):
        pattern.validate_for(grid.numerology)
        schedule.validate_for(pattern, grid.numerology)
        self.grid = grid
        self.pattern = pattern
        self.schedule = schedule
        self.ran_id = ran_id
        self.sched = new_scheduler(grid.n_prb, ues)
        self.session = SessionState()
        self.current_slot = -1
        self._decoder = StreamDecoder()
        self.counters = {
            "msgs_in": 0,
            "msgs_out": 0,
            "reports_sent": 0,
            "reports_dropped": 0,
            "actions_applied": 0,
            "actions_rejected": 0,
            "decode_errors": 0,
        }

    @property
    def snr_db_by_ue(self) -> dict[str, float]:
        return {ue.ue_id: ue.snr_db for ue in self.sched.ues}

    def on_slot_start(self, abs_slot: int) -> Allocation:
        """Activate any due mask and allocate the slot."""
        self.current_slot = abs_slot
        spf = self.grid.numerology.slots_per_frame
        frame, slot_in_frame = divmod(abs_slot, spf)
        kind = slot_kind(self.pattern, abs_slot)
        sensing = [
            sym
            for (s, sym) in sensing_symbols_in_frame(self.schedule, frame)
            if s == slot_in_frame
        ]
        alloc, self.sched = schedule_slot(self.sched, abs_slot, kind, sensing)
        return alloc

    def on_sensing_symbol(self, iq: IqSymbol) -> bytes:
        """Publish the sensing symbol if the subscription calls for it."""
        msgs = agent_poll(self.session, iq)
        if not msgs:
            self.counters["reports_dropped"] += 1
            return b""
        out = bytearray()
        for msg in msgs:
            self.session, _ = session_step(self.session, (e3.SENT, msg))
            out += e3.encode(msg)
            self.counters["msgs_out"] += 1
            self.counters["reports_sent"] += 1
        return bytes(out)

    def feed(self, data: bytes) -> bytes:
        """Consume inbound bytes; returns the replies to send back."""
        out = bytearray()
        try:
            msgs = self._decoder.feed(data)
        except e3.DecodeError:
            # framing is unrecoverable after corruption: flush and tell the peer
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

    def _send(self, msg: e3.E3Message, out: bytearray) -> None:
        self.session, _ = session_step(self.session, (e3.SENT, msg))
        out += e3.encode(msg)
        self.counters["msgs_out"] += 1

    def _handle(self, msg: e3.E3Message, out: bytearray) -> None:
        if isinstance(msg, e3.SetupRequest):
            accepted = (
                msg.n_prb == self.grid.n_prb
                and msg.fft_size == self.grid.fft_size
                and msg.mu == self.grid.numerology.mu
            )
            self._send(e3.SetupResponse(accepted=accepted), out)
        elif isinstance(msg, e3.Subscribe):
            if msg.stream_id != e3.STREAM_SENSING_IQ:
                self._send(e3.ErrorMsg(e3.ERR_UNEXPECTED), out)
            else:
                self._send(e3.SubscribeAck(stream_id=msg.stream_id), out)
        elif isinstance(msg, e3.ControlAction):
            if msg.n_prb != self.grid.n_prb:
                self.counters["actions_rejected"] += 1
                self._send(e3.ErrorMsg(e3.ERR_BAD_ACTION), out)
                return
            mask = msg.barred_mask()
            self.sched = apply_control_action(self.sched, mask, self.current_slot)
            self.counters["actions_applied"] += 1
        # SetupResponse / SubscribeAck / IqReport / Error carry nothing for
        # the gNB to act on; the session layer already tracked them.
