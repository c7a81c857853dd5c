import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spectrumshare.airspace import (
    IncumbentProfile,
    NoiseModel,
    active_at,
    incumbent_footprint,
    interference_linear_per_prb,
    synthesize_sensing_iq,
)
from spectrumshare.capture import CaptureError, read_capture, write_capture
from spectrumshare.grid import make_grid, prb_to_subcarriers

from oracles import footprint_scan


def incumbent(bw_hz, offset_hz=0.0, inr_db=20.0, timeline=((0.0, True),)):
    return IncumbentProfile(
        id="inc",
        center_offset_hz=offset_hz,
        bandwidth_hz=bw_hz,
        inr_db=inr_db,
        timeline=timeline,
    )


class TestFootprint:
    def test_band_wider_than_grid_covers_everything(self):
        g = make_grid(1, 106)
        assert incumbent_footprint(incumbent(bw_hz=g.sample_rate_hz), g) == set(
            range(106)
        )

    def test_zero_bandwidth_covers_nothing(self):
        g = make_grid(1, 106)
        assert incumbent_footprint(incumbent(bw_hz=0.0), g) == set()
        # even when the center sits exactly on a subcarrier
        assert incumbent_footprint(incumbent(bw_hz=0.0, offset_hz=30e3), g) == set()

    def test_7p2mhz_band_covers_20_prbs_mid_grid(self):
        # expected set frozen from the brute-force subcarrier scan
        g = make_grid(1, 106)
        expected = footprint_scan(0.0, 7.2e6, 106, 30e3)
        got = incumbent_footprint(incumbent(bw_hz=7.2e6), g)
        assert got == expected
        assert len(got) == 20
        assert got == set(range(43, 63))

    @given(
        n_prb=st.integers(1, 64),
        offset_steps=st.integers(-40, 40),
        bw_prbs=st.floats(0.0, 30.0),
    )
    def test_matches_bruteforce_scan(self, n_prb, offset_steps, bw_prbs):
        g = make_grid(1, n_prb)
        offset = offset_steps * 0.5 * g.scs_hz
        bw = bw_prbs * 12 * g.scs_hz
        assert incumbent_footprint(incumbent(bw, offset), g) == footprint_scan(
            offset, bw, n_prb, g.scs_hz
        )

    @given(n_prb=st.integers(1, 32), bw_lo=st.floats(0, 5e6), bw_extra=st.floats(0, 5e6))
    def test_growing_band_never_shrinks_footprint(self, n_prb, bw_lo, bw_extra):
        g = make_grid(1, n_prb)
        small = incumbent_footprint(incumbent(bw_lo), g)
        large = incumbent_footprint(incumbent(bw_lo + bw_extra), g)
        assert small <= large


class TestTimeline:
    TIMELINE = ((1000.0, True), (2000.0, False))

    def test_between_toggles(self):
        assert active_at(incumbent(1.0, timeline=self.TIMELINE), 1500.0) is True

    def test_before_first_event(self):
        assert active_at(incumbent(1.0, timeline=self.TIMELINE), 500.0) is False

    def test_boundary_takes_the_event_at_exactly_t(self):
        p = incumbent(1.0, timeline=self.TIMELINE)
        assert active_at(p, 2000.0) is False
        assert active_at(p, 1000.0) is True

    def test_empty_timeline_never_active(self):
        assert active_at(incumbent(1.0, timeline=()), 1e9) is False

    def test_times_must_increase(self):
        with pytest.raises(ValueError):
            incumbent(1.0, timeline=((5.0, True), (5.0, False)))


class TestInterferenceTruth:
    def test_no_active_incumbents(self):
        g = make_grid(1, 106)
        assert np.all(interference_linear_per_prb([], g, 0.0) == 0.0)
        off = incumbent(7.2e6, timeline=((10.0, True),))
        assert np.all(interference_linear_per_prb([off], g, 5.0) == 0.0)

    def test_20db_is_linear_100(self):
        g = make_grid(1, 106)
        vec = interference_linear_per_prb([incumbent(7.2e6, inr_db=20.0)], g, 0.0)
        covered = sorted(incumbent_footprint(incumbent(7.2e6), g))
        assert np.all(vec[covered] == 100.0)
        assert np.all(np.delete(vec, covered) == 0.0)

    def test_overlapping_incumbents_add_in_power(self):
        g = make_grid(1, 106)
        a = incumbent(7.2e6, inr_db=10.0)
        b = IncumbentProfile(
            id="b", center_offset_hz=0.0, bandwidth_hz=7.2e6, inr_db=10.0,
            timeline=((0.0, True),),
        )
        vec = interference_linear_per_prb([a, b], g, 0.0)
        covered = sorted(incumbent_footprint(a, g))
        assert np.all(vec[covered] == 20.0)


class TestSynthesis:
    def test_bit_identical_given_seed_and_draw(self):
        g = make_grid(1, 12)
        noise = NoiseModel(1.0, seed=9)
        inc = incumbent(2e6)
        a = synthesize_sensing_iq(g, noise, [inc], 3.0, draw_index=5)
        b = synthesize_sensing_iq(g, noise, [inc], 3.0, draw_index=5)
        assert a == b
        c = synthesize_sensing_iq(g, noise, [inc], 3.0, draw_index=6)
        assert not np.array_equal(a.samples, c.samples)

    def test_parseval(self):
        g = make_grid(1, 20)
        noise = NoiseModel(2.5, seed=11)
        for i in range(50):
            iq = synthesize_sensing_iq(g, noise, [incumbent(3e6)], 0.0, draw_index=i)
            time_energy = float(np.sum(np.abs(iq.samples) ** 2))
            spec = np.fft.fft(iq.samples, norm="ortho")
            freq_energy = float(np.sum(np.abs(spec) ** 2))
            assert abs(time_energy - freq_energy) <= 1e-9 * freq_energy

    def test_mean_occupied_bin_energy_converges_to_psd(self):
        # Monte-Carlo oracle: occupied-bin energies are unit-mean
        # exponentials, so the pooled mean over N draws stays within 5/sqrt(N)
        g = make_grid(0, 4)
        noise = NoiseModel(1.0, seed=13)
        n_draws = 10_000
        total = 0.0
        bins = np.concatenate([prb_to_subcarriers(g, p) for p in range(4)])
        for i in range(n_draws):
            iq = synthesize_sensing_iq(g, noise, [], 0.0, draw_index=i)
            spec = np.fft.fft(iq.samples, norm="ortho")
            total += float(np.mean(np.abs(spec[bins]) ** 2))
        mean = total / n_draws
        assert abs(mean - 1.0) < 5.0 / np.sqrt(n_draws)

    def test_noiseless_limit_energy_only_in_footprint(self):
        g = make_grid(1, 16)
        noise = NoiseModel(1e-20, seed=3)
        inc = incumbent(4 * 12 * g.scs_hz, inr_db=200.0)
        covered = sorted(incumbent_footprint(inc, g))
        assert covered
        iq = synthesize_sensing_iq(g, noise, [inc], 0.0, draw_index=0)
        spec = np.fft.fft(iq.samples, norm="ortho")
        for p in range(16):
            energy = float(np.mean(np.abs(spec[prb_to_subcarriers(g, p)]) ** 2))
            if p in covered:
                assert energy > 1e-3
            else:
                assert energy < 1e-15

    def test_inactive_incumbent_adds_nothing(self):
        g = make_grid(1, 8)
        noise = NoiseModel(1.0, seed=21)
        inc = incumbent(1e6, timeline=((100.0, True),))
        a = synthesize_sensing_iq(g, noise, [inc], 50.0, draw_index=0)
        b = synthesize_sensing_iq(g, noise, [], 50.0, draw_index=0)
        assert np.array_equal(a.samples, b.samples)


class TestCaptureFormat:
    def test_round_trip(self):
        g = make_grid(1, 8)
        noise = NoiseModel(1.0, seed=2)
        syms = [
            synthesize_sensing_iq(g, noise, [], 0.0, draw_index=i).samples
            for i in range(3)
        ]
        buf = io.BytesIO()
        write_capture(buf, [np.asarray(s, np.complex64) for s in syms], g.fft_size)
        fft_size, data = read_capture(io.BytesIO(buf.getvalue()))
        assert fft_size == g.fft_size
        assert data.shape == (3, g.fft_size)
        for got, want in zip(data, syms):
            assert np.array_equal(got, np.asarray(want, np.complex64))

    def test_header_layout(self):
        buf = io.BytesIO()
        write_capture(buf, np.zeros((2, 16), np.complex64), 16)
        raw = buf.getvalue()
        assert raw[:4] == b"IQS1"
        assert int.from_bytes(raw[4:8], "little") == 16
        assert int.from_bytes(raw[8:12], "little") == 2
        assert int.from_bytes(raw[12:16], "little") == 0
        assert len(raw) == 16 + 2 * 16 * 8

    def test_bad_magic_rejected(self):
        with pytest.raises(CaptureError):
            read_capture(io.BytesIO(b"NOPE" + b"\0" * 12))

    def test_truncated_body_rejected(self):
        buf = io.BytesIO()
        write_capture(buf, np.zeros((2, 16), np.complex64), 16)
        with pytest.raises(CaptureError):
            read_capture(io.BytesIO(buf.getvalue()[:-4]))

    def test_wrong_symbol_length_rejected(self):
        with pytest.raises(CaptureError):
            write_capture(io.BytesIO(), np.zeros((2, 8), np.complex64), 16)
