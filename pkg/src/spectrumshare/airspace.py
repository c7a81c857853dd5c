"""RF environment synthesis: an AWGN floor plus scripted incumbents.

Sensing symbols are built in the frequency domain: every occupied
subcarrier receives a circularly-symmetric complex Gaussian draw at the
noise PSD, subcarriers covered by an active incumbent receive an
additional independent draw scaled by the incumbent's INR, and the
time-domain samples are the unitary inverse DFT of that spectrum. Guard
bins stay zero and the cyclic prefix is not modeled (the detector
consumes exactly one FFT window).

Randomness is reproducible and parallel-safe: the stream for one symbol
is derived as PCG64(SeedSequence(seed, spawn_key=(draw_index,))), so the
same (seed, draw_index) always yields bit-identical samples and no
global RNG state exists.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .grid import PrbGrid, occupied_bins, prb_to_subcarriers, subcarrier_frequencies_hz


@dataclass(frozen=True)
class IncumbentProfile:
    """A band-limited flat-PSD transmitter toggled by a scripted timeline.

    timeline holds (t_ms, active) events sorted by strictly increasing
    time; before the first event the incumbent is inactive. inr_db is the
    incumbent PSD over the noise PSD on the subcarriers it covers.
    """

    id: str
    center_offset_hz: float
    bandwidth_hz: float
    inr_db: float
    timeline: tuple[tuple[float, bool], ...] = ()

    def __post_init__(self):
        if self.bandwidth_hz < 0:
            raise ValueError(f"bandwidth_hz must be >= 0, got {self.bandwidth_hz}")
        times = [t for t, _ in self.timeline]
        if any(b >= a for a, b in zip(times[1:], times)):
            raise ValueError(f"incumbent {self.id!r}: timeline times must be strictly increasing")


def active_at(profile: IncumbentProfile, t_ms: float) -> bool:
    """State of the latest toggle at or before t_ms; inactive before the first."""
    times = [t for t, _ in profile.timeline]
    i = bisect.bisect_right(times, t_ms)
    if i == 0:
        return False
    return profile.timeline[i - 1][1]


def footprint_mask(profile: IncumbentProfile, grid: PrbGrid) -> np.ndarray:
    """Boolean per-PRB mask of the incumbent's footprint on this grid.

    A PRB belongs to the footprint when any of its 12 subcarrier centers
    falls strictly inside the occupied band. The strict test keeps a band
    that is an exact multiple of the PRB width covering exactly that many
    PRBs (edge subcarriers sitting on the band boundary stay out) and
    makes a zero-bandwidth band cover nothing.
    """
    half = profile.bandwidth_hz / 2.0
    lo = profile.center_offset_hz - half
    hi = profile.center_offset_hz + half
    freqs = subcarrier_frequencies_hz(grid)
    inside = (freqs > lo) & (freqs < hi)
    return inside.reshape(grid.n_prb, 12).any(axis=1)


def incumbent_footprint(profile: IncumbentProfile, grid: PrbGrid) -> set[int]:
    """PRB indices covered by the incumbent band (empty for bw = 0)."""
    return set(int(p) for p in np.nonzero(footprint_mask(profile, grid))[0])


def interference_linear_per_prb(
    profiles: Iterable[IncumbentProfile], grid: PrbGrid, t_ms: float
) -> np.ndarray:
    """Per-PRB interference-over-noise (linear) from all active incumbents.

    Overlapping incumbents add in power.
    """
    total = np.zeros(grid.n_prb)
    for profile in profiles:
        if active_at(profile, t_ms):
            total += footprint_mask(profile, grid) * 10.0 ** (profile.inr_db / 10.0)
    return total


@dataclass(frozen=True)
class NoiseModel:
    """Complex AWGN floor: psd is the per-subcarrier variance sigma^2."""

    psd_per_subcarrier: float = 1.0
    seed: int = 1

    def __post_init__(self):
        if self.psd_per_subcarrier <= 0:
            raise ValueError("noise psd must be > 0")


@dataclass(frozen=True)
class IqSymbol:
    """One sensing symbol: fft_size time-domain samples plus coordinates."""

    frame: int
    slot: int
    symbol: int
    samples: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, IqSymbol):
            return NotImplemented
        return (
            (self.frame, self.slot, self.symbol)
            == (other.frame, other.slot, other.symbol)
            and np.array_equal(self.samples, other.samples)
        )


def stream_rng(seed: int, draw_index: int) -> np.random.Generator:
    """Deterministic per-symbol generator: PCG64 keyed by (seed, draw_index)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(draw_index,))
    return np.random.Generator(np.random.PCG64(ss))


def _complex_normal(rng: np.random.Generator, variance: float, n: int) -> np.ndarray:
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def synthesize_sensing_iq(
    grid: PrbGrid,
    noise: NoiseModel,
    incumbents: Sequence[IncumbentProfile],
    t_ms: float,
    draw_index: int,
    frame: int = 0,
    slot: int = 0,
    symbol: int = 0,
) -> IqSymbol:
    """Synthesize the time-domain samples of one sensing symbol.

    draw_index must be unique per synthesized symbol (the absolute symbol
    index is a natural choice); it selects the random stream, so repeated
    calls with identical arguments return bit-identical samples.
    """
    spectrum = np.zeros(grid.fft_size, dtype=np.complex128)
    rng = stream_rng(noise.seed, draw_index)
    bins = occupied_bins(grid)
    spectrum[bins] = _complex_normal(rng, noise.psd_per_subcarrier, bins.size)
    for profile in incumbents:
        if not active_at(profile, t_ms):
            continue
        mask = footprint_mask(profile, grid)
        covered = np.nonzero(mask)[0]
        if covered.size == 0:
            continue
        covered_bins = np.concatenate(
            [prb_to_subcarriers(grid, int(p)) for p in covered]
        )
        variance = noise.psd_per_subcarrier * 10.0 ** (profile.inr_db / 10.0)
        spectrum[covered_bins] += _complex_normal(rng, variance, covered_bins.size)
    samples = np.fft.ifft(spectrum, norm="ortho")
    return IqSymbol(frame=frame, slot=slot, symbol=symbol, samples=samples)
