"""Segmentation tests scored against the synthetic generator's ground truth."""

import numpy as np
import numpy.testing as npt
import pytest

from pcgkit.corpus import SynthConfig, synth_pcg
from pcgkit.dsp import Recording, default_filterbank, resample
from pcgkit.errors import NoCyclesError, ParameterError
from pcgkit.segmentation import (CYCLE_SAMPLES, DIASTOLE, S1, S2, SYSTOLE, SegmentationConfig,
                                 StateSequence, export_states_csv, extract_cycles, segment)


def boundary_hits(states, gt_states, gt_rate, tol=0.05):
    hits = total = 0
    for kind in ("s1_onsets", "s2_onsets"):
        gt = getattr(gt_states, kind)() / gt_rate
        det = getattr(states, kind)() / states.rate
        for g in gt:
            total += 1
            if det.size and np.min(np.abs(det - g)) <= tol:
                hits += 1
    return hits, total


def make_states(pattern, rate=1000.0):
    """Build a StateSequence from (state, n_samples) run pairs."""
    return StateSequence(np.concatenate([np.full(n, s, dtype=np.int8) for s, n in pattern]), rate)


class TestStateSequence:
    def test_cycle_order_enforced(self):
        with pytest.raises(ParameterError, match="cycle"):
            make_states([(S1, 100), (S2, 100)])

    def test_runs_and_onsets(self):
        states = make_states([(S1, 100), (SYSTOLE, 200), (S2, 80), (DIASTOLE, 300), (S1, 100)])
        assert [r[0] for r in states.runs()] == [S1, SYSTOLE, S2, DIASTOLE, S1]
        npt.assert_array_equal(states.s1_onsets(), [0, 680])
        npt.assert_array_equal(states.s2_onsets(), [300])


class TestSegment:
    def test_clean_60bpm_recovers_cycles(self):
        rec, gt, _ = synth_pcg(SynthConfig(bpm=60.0, duration=10.0, snr_db=40.0, seed=1))
        states = segment(resample(rec, 1000.0))
        n_cycles = len(states.s1_onsets()) - 1
        assert 9 <= n_cycles + 1 <= 10  # complete S1-to-S1 spans
        hits, total = boundary_hits(states, gt, rec.rate)
        assert hits == total, f"only {hits}/{total} boundaries within 50 ms"

    def test_silence_raises_or_returns_empty(self):
        silent = Recording(np.full(5000, 1e-12), 1000.0)
        with pytest.raises(NoCyclesError, match="silent"):
            segment(silent)
        states = segment(silent, SegmentationConfig(on_silence="empty"))
        assert len(states.s1_onsets()) == 0

    def test_too_short_recording(self):
        rec = Recording(np.random.default_rng(0).normal(size=200), 1000.0)
        with pytest.raises(NoCyclesError, match="shorter"):
            segment(rec)

    def test_120bpm_mean_cycle_duration(self):
        rec, _, _ = synth_pcg(SynthConfig(bpm=120.0, duration=10.0, snr_db=30.0, seed=2))
        states = segment(resample(rec, 1000.0))
        onsets = states.s1_onsets() / states.rate
        durations = np.diff(onsets)
        assert abs(durations.mean() - 0.5) <= 0.05

    def test_deterministic(self):
        rec, _, _ = synth_pcg(SynthConfig(bpm=75.0, duration=8.0, snr_db=15.0, seed=3))
        rec1k = resample(rec, 1000.0)
        a = segment(rec1k)
        b = segment(rec1k)
        npt.assert_array_equal(a.labels, b.labels)

    def test_interior_run_durations_respect_bounds(self):
        for seed in range(4):
            bpm = 50.0 + 20.0 * seed
            rec, _, _ = synth_pcg(SynthConfig(bpm=bpm, duration=10.0, snr_db=15.0, seed=seed))
            rec1k = resample(rec, 1000.0)
            states, info = segment(rec1k, return_info=True)
            fr = info["frame_rate"]
            bounds = info["duration_bounds_frames"]
            runs = states.runs()
            for state, start, end in runs[1:-1]:
                frames = round((end - start) / states.rate * fr)
                dmin, dmax = bounds[state]
                assert dmin <= frames <= dmax, (
                    f"bpm {bpm}: state {state} run of {frames} frames outside [{dmin}, {dmax}]")


class TestExtractCycles:
    def _recording(self, n=6000):
        return Recording(np.random.default_rng(4).normal(size=n), 1000.0)

    def test_zero_padding_beyond_true_cycle_end(self):
        rec = self._recording()
        states = make_states([(S1, 100), (SYSTOLE, 500), (S2, 100), (DIASTOLE, 1100),
                              (S1, 100), (SYSTOLE, 500), (S2, 100), (DIASTOLE, 3500)])
        cycles = extract_cycles(rec, states, filters=None)
        assert len(cycles) == 1
        assert cycles[0].bands.shape == (4, CYCLE_SAMPLES)
        assert cycles[0].length == 1800
        npt.assert_array_equal(cycles[0].bands[:, 1800:], 0.0)
        assert np.any(cycles[0].bands[:, :1800] != 0.0)

    def test_long_cycle_truncated(self, caplog):
        rec = self._recording()
        states = make_states([(S1, 100), (SYSTOLE, 500), (S2, 100), (DIASTOLE, 1900),
                              (S1, 100), (SYSTOLE, 500), (S2, 100), (DIASTOLE, 2700)])
        with caplog.at_level("WARNING"):
            cycles = extract_cycles(rec, states, filters=None)
        assert cycles[0].length == CYCLE_SAMPLES
        assert "truncating" in caplog.text

    def test_count_matches_complete_spans(self):
        rec, _, _ = synth_pcg(SynthConfig(bpm=80.0, duration=6.5, snr_db=30.0, seed=5))
        rec1k = resample(rec, 1000.0)
        states = segment(rec1k)
        cycles = extract_cycles(rec1k, states, filters=default_filterbank())
        assert len(cycles) == len(states.s1_onsets()) - 1

    def test_bands_are_filtered_spans(self):
        rec = self._recording(4000)
        states = make_states([(S1, 100), (SYSTOLE, 400), (S2, 100), (DIASTOLE, 900),
                              (S1, 100), (SYSTOLE, 400), (S2, 100), (DIASTOLE, 1900)])
        filters = default_filterbank()
        cycles = extract_cycles(rec, states, filters=filters)
        from pcgkit.dsp import fir_apply
        span = rec.samples[0:1500]
        for b in range(4):
            npt.assert_allclose(cycles[0].bands[b, :1500], fir_apply(filters[b], span))

    def test_raw_mode_replicates_span(self):
        rec = self._recording(4000)
        states = make_states([(S1, 100), (SYSTOLE, 400), (S2, 100), (DIASTOLE, 900),
                              (S1, 100), (SYSTOLE, 400), (S2, 100), (DIASTOLE, 1900)])
        cycles = extract_cycles(rec, states, filters=None)
        for b in range(4):
            npt.assert_array_equal(cycles[0].bands[b, :1500], rec.samples[:1500])


def test_export_states_csv(tmp_path):
    states = make_states([(S1, 3), (SYSTOLE, 2)])
    path = tmp_path / "states.csv"
    export_states_csv(states, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "sample_index,state"
    assert lines[1] == "0,S1"
    assert lines[4] == "3,systole"
    assert len(lines) == 6
