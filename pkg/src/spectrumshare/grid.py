"""NR-style numerology, TDD frame layout, and PRB geometry.

Every other part of the simulator indexes into the objects defined here:
the subcarrier-spacing numerology fixes all timing, the PRB grid maps
resource blocks to FFT bins, the TDD pattern classifies slots, and the
sensing schedule places the reserved sensing symbols inside UL slots.

Conventions (fixed so that tests can be bit-exact):
  * subcarrier 0 is the DC bin; occupied logical subcarriers run from
    -6*n_prb to +6*n_prb - 1 and negative indices wrap to high FFT bins
  * a frame is 10 ms for every numerology; slots and symbols divide it
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

SUBCARRIERS_PER_PRB = 12
SYMBOLS_PER_SLOT = 14
FRAME_MS = 10.0
BASE_SCS_HZ = 15_000


class SlotKind(Enum):
    DL = "DL"
    UL = "UL"
    SPECIAL = "SPECIAL"


@dataclass(frozen=True)
class Numerology:
    """Subcarrier-spacing index mu (0..3) and the frame timing it implies."""

    mu: int

    def __post_init__(self):
        if not isinstance(self.mu, int) or not 0 <= self.mu <= 3:
            raise ValueError(f"mu must be an integer in 0..3, got {self.mu!r}")

    @property
    def scs_hz(self) -> int:
        return BASE_SCS_HZ * 2 ** self.mu

    @property
    def slots_per_frame(self) -> int:
        return 10 * 2 ** self.mu

    @property
    def symbols_per_slot(self) -> int:
        return SYMBOLS_PER_SLOT

    @property
    def symbols_per_frame(self) -> int:
        return self.symbols_per_slot * self.slots_per_frame

    @property
    def slot_duration_ms(self) -> float:
        # 1.0 / 0.5 / 0.25 / 0.125 ms: all exactly representable in binary
        return FRAME_MS / self.slots_per_frame

    @property
    def slot_duration_s(self) -> float:
        return 0.001 / 2 ** self.mu


def symbols_per_frame(numerology: Numerology) -> int:
    """OFDM symbols in one 10 ms frame (280 for mu=1)."""
    return numerology.symbols_per_frame


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PrbGrid:
    """PRB-to-subcarrier geometry of one carrier.

    fft_size must be a power of two no smaller than the 12*n_prb occupied
    subcarriers; the remaining bins are guard bins and stay empty.
    """

    numerology: Numerology
    n_prb: int
    fft_size: int
    dc_centered: bool = True

    def __post_init__(self):
        if self.n_prb < 1:
            raise ValueError(f"n_prb must be >= 1, got {self.n_prb}")
        if not _is_power_of_two(self.fft_size):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.fft_size < SUBCARRIERS_PER_PRB * self.n_prb:
            raise ValueError(
                f"fft_size {self.fft_size} too small for "
                f"{SUBCARRIERS_PER_PRB * self.n_prb} occupied subcarriers"
            )

    @property
    def scs_hz(self) -> int:
        return self.numerology.scs_hz

    @property
    def n_subcarriers(self) -> int:
        return SUBCARRIERS_PER_PRB * self.n_prb

    @property
    def sample_rate_hz(self) -> float:
        return float(self.fft_size * self.scs_hz)


def make_grid(mu: int, n_prb: int, fft_size: int | None = None) -> PrbGrid:
    """Build a grid for numerology ``mu`` with ``n_prb`` resource blocks.

    When ``fft_size`` is omitted the smallest power of two that holds all
    occupied subcarriers is chosen.
    """
    numerology = Numerology(mu)
    if n_prb < 1:
        raise ValueError(f"n_prb must be >= 1, got {n_prb}")
    if fft_size is None:
        fft_size = 1
        while fft_size < SUBCARRIERS_PER_PRB * n_prb:
            fft_size *= 2
    return PrbGrid(numerology=numerology, n_prb=n_prb, fft_size=fft_size)


def prb_logical_subcarriers(grid: PrbGrid, prb: int) -> np.ndarray:
    """Logical (DC-relative) subcarrier indices of one PRB, ascending.

    PRB 0 holds the most negative subcarriers; PRB n_prb-1 the most
    positive. For an even n_prb the DC bin sits on a PRB boundary.
    """
    if not 0 <= prb < grid.n_prb:
        raise ValueError(f"prb {prb} out of range 0..{grid.n_prb - 1}")
    start = -6 * grid.n_prb + SUBCARRIERS_PER_PRB * prb
    return np.arange(start, start + SUBCARRIERS_PER_PRB)


def prb_to_subcarriers(grid: PrbGrid, prb: int) -> np.ndarray:
    """FFT bin indices of one PRB (logical indices taken modulo fft_size)."""
    return prb_logical_subcarriers(grid, prb) % grid.fft_size


def occupied_logical_subcarriers(grid: PrbGrid) -> np.ndarray:
    """All occupied logical subcarriers, PRB 0 first."""
    return np.arange(-6 * grid.n_prb, 6 * grid.n_prb)


def occupied_bins(grid: PrbGrid) -> np.ndarray:
    """FFT bins of all occupied subcarriers, in logical (PRB 0 first) order."""
    return occupied_logical_subcarriers(grid) % grid.fft_size


def subcarrier_frequencies_hz(grid: PrbGrid) -> np.ndarray:
    """Center frequency of each occupied subcarrier relative to the carrier
    center, in logical order."""
    return occupied_logical_subcarriers(grid) * float(grid.scs_hz)


@dataclass(frozen=True)
class TddPattern:
    """Cyclic slot-kind pattern, e.g. 7 DL + 1 SPECIAL + 2 UL."""

    slots: tuple[SlotKind, ...]

    def __post_init__(self):
        if not self.slots:
            raise ValueError("TDD pattern must contain at least one slot")
        if SlotKind.UL not in self.slots:
            raise ValueError("TDD pattern must contain at least one UL slot")

    @property
    def period_slots(self) -> int:
        return len(self.slots)

    def validate_for(self, numerology: Numerology) -> None:
        if numerology.slots_per_frame % self.period_slots != 0:
            raise ValueError(
                f"TDD period {self.period_slots} does not divide "
                f"{numerology.slots_per_frame} slots per frame"
            )


def default_tdd_pattern() -> TddPattern:
    """10-slot cycle: 7 DL, 1 SPECIAL, 2 UL (typical n77/n78 shape)."""
    return TddPattern(
        slots=(SlotKind.DL,) * 7 + (SlotKind.SPECIAL,) + (SlotKind.UL,) * 2
    )


def slot_kind(pattern: TddPattern, absolute_slot: int) -> SlotKind:
    """Kind of a slot anywhere on the absolute slot axis."""
    if absolute_slot < 0:
        raise ValueError(f"absolute_slot must be >= 0, got {absolute_slot}")
    return pattern.slots[absolute_slot % pattern.period_slots]


@dataclass(frozen=True)
class SensingSchedule:
    """Placement of reserved sensing symbols.

    entries are (slot_index_in_frame, symbol_index_in_slot) pairs that
    repeat every period_frames frames. Every entry must land in an UL
    slot of the active TDD pattern.
    """

    entries: tuple[tuple[int, int], ...] = ((8, 13),)
    period_frames: int = 1

    def __post_init__(self):
        if self.period_frames < 1:
            raise ValueError(f"period_frames must be >= 1, got {self.period_frames}")
        if not self.entries:
            raise ValueError("sensing schedule must contain at least one entry")

    def validate_for(self, pattern: TddPattern, numerology: Numerology) -> None:
        for i, (slot, symbol) in enumerate(self.entries):
            if not 0 <= slot < numerology.slots_per_frame:
                raise ValueError(
                    f"entries[{i}]: slot {slot} outside frame of "
                    f"{numerology.slots_per_frame} slots"
                )
            if not 0 <= symbol < SYMBOLS_PER_SLOT:
                raise ValueError(f"entries[{i}]: symbol {symbol} outside 0..13")
            kind = slot_kind(pattern, slot)
            if kind is not SlotKind.UL:
                raise ValueError(
                    f"entries[{i}]: slot {slot} is {kind.value} under the TDD "
                    f"pattern; sensing symbols must sit in UL slots"
                )
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("sensing entries must be distinct")

    def overhead_fraction(self, numerology: Numerology) -> Fraction:
        """Reserved share of all symbols, as an exact fraction (1/280 for
        the default one-symbol-per-frame schedule at mu=1)."""
        return Fraction(
            len(self.entries), self.period_frames * numerology.symbols_per_frame
        )


def default_sensing_schedule() -> SensingSchedule:
    """One sensing symbol per frame: last symbol of the first UL slot."""
    return SensingSchedule(entries=((8, 13),), period_frames=1)


def sensing_symbols_in_frame(
    schedule: SensingSchedule, frame: int
) -> list[tuple[int, int]]:
    """Sensing (slot, symbol) pairs of one frame; empty on off-period frames."""
    if frame % schedule.period_frames != 0:
        return []
    return list(schedule.entries)
