"""The closed-loop simulation: clock -> gNB -> wire -> dApp -> gNB.

The event loop advances at symbol granularity where it matters (sensing
symbols) and slot granularity everywhere else. In inproc mode the two
endpoints exchange encoded bytes synchronously inside the loop and a run
is bit-deterministic given the scenario. In tcp mode the dApp runs as a
separate process connected over a localhost socket; the loop grants each
report a short real-time settle window for replies, so timing (but not
correctness) may vary run to run.
"""

from __future__ import annotations

import math
import select
import socket
import subprocess
import sys
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .airspace import interference_linear_per_prb, synthesize_sensing_iq
from .dapp import Dapp
from .e3 import Phase, pack_barred
from .gnb import Gnb, slot_throughput_bits
from .grid import FRAME_MS, SlotKind, sensing_symbols_in_frame
from .scenario import Scenario

_HANDSHAKE_TIMEOUT_S = 10.0
_TCP_SETTLE_S = 0.02


class TransportError(RuntimeError):
    """TCP transport failed mid-run; carries the records logged so far."""

    def __init__(self, message: str, partial_log: "MetricsLog | None" = None):
        super().__init__(message)
        self.partial_log = partial_log


@dataclass
class MetricsRecord:
    """One slot of simulation output."""

    t_ms: float
    slot: int
    barred_count: int
    barred_bitmap_hex: str
    dl_bits: dict[str, float]
    ul_bits: dict[str, float]
    incumbent_truth: int
    detect_latency_ms: float | None
    e3_in: int
    e3_out: int


@dataclass
class MetricsLog:
    records: list[MetricsRecord]
    iq_reports: list[tuple[int, int, int]]  # (frame, slot, symbol) per report sent
    ue_ids: tuple[str, ...]
    counters: dict


class _InprocPeer:
    """Both endpoints in-process, still exchanging encoded wire bytes."""

    def __init__(self, scenario: Scenario):
        self.dapp = Dapp(
            scenario.grid, scenario.detector, ran_id=scenario.ran_id
        )

    def handshake(self, gnb: Gnb) -> None:
        to_gnb = self.dapp.start()
        while to_gnb:
            to_dapp = gnb.feed(to_gnb)
            if not to_dapp:
                break
            to_gnb = self.dapp.feed(to_dapp)
        if not self.dapp.subscribed or gnb.session.phase is not Phase.SUBSCRIBED:
            raise RuntimeError("E3 handshake did not reach the subscribed state")

    def exchange(self, data: bytes) -> bytes:
        return self.dapp.feed(data)

    def poll(self) -> bytes:
        return b""

    def counters(self) -> dict:
        return dict(self.dapp.counters)

    def close(self) -> None:
        pass


class _TcpPeer:
    """gNB side of a real socket; the dApp runs as a child process."""

    def __init__(self, scenario: Scenario):
        params = scenario.detector
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(("127.0.0.1", scenario.transport.port))
        self._listener.listen(1)
        port = self._listener.getsockname()[1]
        argv = [
            sys.executable,
            "-m",
            "spectrumshare.remote",
            "--port", str(port),
            "--n-prb", str(scenario.grid.n_prb),
            "--mu", str(scenario.grid.numerology.mu),
            "--margin-db", repr(params.margin_db),
            "--k-on", str(params.k_on),
            "--k-off", str(params.k_off),
            "--floor-mode", params.floor_mode,
            "--ewma-alpha", repr(params.ewma_alpha),
            "--ran-id", str(scenario.ran_id),
        ]
        self._proc = subprocess.Popen(argv)
        self._listener.settimeout(_HANDSHAKE_TIMEOUT_S)
        try:
            self._conn, _ = self._listener.accept()
        except socket.timeout:
            self.close()
            raise TransportError("dApp process never connected")
        self._conn.settimeout(None)

    def handshake(self, gnb: Gnb) -> None:
        deadline = time.monotonic() + _HANDSHAKE_TIMEOUT_S
        while gnb.session.phase is not Phase.SUBSCRIBED:
            if time.monotonic() > deadline:
                raise TransportError("E3 handshake timed out")
            data = self._recv(timeout=0.2)
            if data:
                replies = gnb.feed(data)
                if replies:
                    self._send(replies)

    def exchange(self, data: bytes) -> bytes:
        self._send(data)
        return self._recv(timeout=_TCP_SETTLE_S)

    def poll(self) -> bytes:
        return self._recv(timeout=0.0)

    def counters(self) -> dict:
        return {}

    def _send(self, data: bytes) -> None:
        try:
            self._conn.sendall(data)
        except OSError as exc:
            raise TransportError(f"E3 socket send failed: {exc}")

    def _recv(self, timeout: float) -> bytes:
        """Collect available bytes: wait up to ``timeout`` for the first
        chunk, then drain with a short grace period."""
        out = bytearray()
        wait = timeout
        while True:
            try:
                ready, _, _ = select.select([self._conn], [], [], wait)
            except OSError as exc:
                raise TransportError(f"E3 socket poll failed: {exc}")
            if not ready:
                break
            try:
                chunk = self._conn.recv(65536)
            except OSError as exc:
                raise TransportError(f"E3 socket recv failed: {exc}")
            if not chunk:
                raise TransportError("E3 peer closed the connection")
            out += chunk
            wait = 0.005
        return bytes(out)

    def close(self) -> None:
        for sock in ("_conn", "_listener"):
            s = getattr(self, sock, None)
            if s is not None:
                try:
                    s.close()
                except OSError:
                    pass
        proc = getattr(self, "_proc", None)
        if proc is not None:
            try:
                proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()


def _latest_toggle_at_or_before(scenario: Scenario, t_ms: float) -> float | None:
    times = [
        t
        for profile in scenario.incumbents
        for (t, _active) in profile.timeline
        if t <= t_ms
    ]
    return max(times) if times else None


def run(scenario: Scenario) -> MetricsLog:
    """Execute one scenario and return its metrics log.

    In tcp mode a transport failure raises TransportError carrying the
    partial log, so callers can flush what was recorded.
    """
    grid = scenario.grid
    num = grid.numerology
    spf = num.slots_per_frame
    slot_ms = num.slot_duration_ms
    symbol_ms = slot_ms / 14.0
    total_slots = math.ceil(scenario.duration_ms / slot_ms)

    gnb = Gnb(
        grid, scenario.pattern, scenario.schedule, scenario.ues, ran_id=scenario.ran_id
    )
    peer = _TcpPeer(scenario) if scenario.transport.kind == "tcp" else _InprocPeer(scenario)

    records: list[MetricsRecord] = []
    reports: list[tuple[int, int, int]] = []
    ue_ids = tuple(ue.ue_id for ue in scenario.ues)

    def log() -> MetricsLog:
        counters = {"gnb": dict(gnb.counters), "dapp": peer.counters()}
        return MetricsLog(
            records=records, iq_reports=reports, ue_ids=ue_ids, counters=counters
        )

    try:
        peer.handshake(gnb)
        snrs = gnb.snr_db_by_ue
        prev_barred = gnb.sched.barred.copy()
        delayed: deque[tuple[int, bytes]] = deque()

        for abs_slot in range(total_slots):
            frame, slot_in_frame = divmod(abs_slot, spf)
            t_slot = frame * FRAME_MS + slot_in_frame * slot_ms

            # control traffic that became due before this slot boundary
            while delayed and delayed[0][0] <= abs_slot * 14:
                gnb.feed(delayed.popleft()[1])
            late = peer.poll()
            if late:
                gnb.feed(late)

            alloc = gnb.on_slot_start(abs_slot)
            barred = gnb.sched.barred

            latency = None
            if not np.array_equal(barred, prev_barred):
                toggle = _latest_toggle_at_or_before(scenario, t_slot)
                if toggle is not None:
                    latency = t_slot - toggle
                prev_barred = barred.copy()

            for s_slot, s_sym in sensing_symbols_in_frame(scenario.schedule, frame):
                if s_slot != slot_in_frame:
                    continue
                abs_symbol = abs_slot * 14 + s_sym
                iq = synthesize_sensing_iq(
                    grid,
                    scenario.noise,
                    scenario.incumbents,
                    t_ms=t_slot + s_sym * symbol_ms,
                    draw_index=abs_symbol,
                    frame=frame,
                    slot=slot_in_frame,
                    symbol=s_sym,
                )
                out = gnb.on_sensing_symbol(iq)
                if not out:
                    continue
                reports.append((frame, slot_in_frame, s_sym))
                reply = peer.exchange(out)
                if reply:
                    if scenario.processing_delay_symbols:
                        due = abs_symbol + scenario.processing_delay_symbols
                        delayed.append((due, reply))
                    else:
                        gnb.feed(reply)

            interference = interference_linear_per_prb(
                scenario.incumbents, grid, t_slot
            )
            bits = slot_throughput_bits(alloc, grid, snrs, interference)
            is_dl = alloc.kind is SlotKind.DL
            is_ul = alloc.kind is SlotKind.UL
            records.append(
                MetricsRecord(
                    t_ms=t_slot,
                    slot=abs_slot,
                    barred_count=int(barred.sum()),
                    barred_bitmap_hex=pack_barred(barred).hex(),
                    dl_bits={u: (b if is_dl else 0.0) for u, b in bits.items()},
                    ul_bits={u: (b if is_ul else 0.0) for u, b in bits.items()},
                    incumbent_truth=int(np.count_nonzero(interference > 0.0)),
                    detect_latency_ms=latency,
                    e3_in=gnb.counters["msgs_in"],
                    e3_out=gnb.counters["msgs_out"],
                )
            )
    except TransportError as exc:
        exc.partial_log = log()
        raise
    finally:
        peer.close()

    return log()
