"""Streaming runtime: event ingestion, ticks, policies, protocol, and the
online/offline equivalence contract."""

import io

import numpy as np
import pytest

from gazeseq.nn import build_model
from gazeseq.preprocess import default_bins, windowize
from gazeseq.runtime import (
    StreamError,
    StreamEvent,
    StreamSession,
    replay_scenario,
    run_stream,
    scenario_as_events,
)
from gazeseq.scenario import builtin_scenario, rasterize


class ScriptedModel:
    """Eval-only stub emitting a scripted probability row per call."""

    def __init__(self, rows, n_classes=6):
        self.rows = list(rows)
        self.n_classes = n_classes
        self.calls = 0

    def forward_batch(self, X, mode="eval", rng=None):
        row = np.asarray(self.rows[min(self.calls, len(self.rows) - 1)])
        self.calls += 1
        return row


@pytest.fixture(scope="module")
def s1():
    return builtin_scenario("s1")


@pytest.fixture(scope="module")
def s1short(s1):
    """First 60 seconds of s1; keeps full-replay tests quick."""
    import copy
    spec = copy.deepcopy(s1)
    spec.duration_s = 60.0
    spec.events = [e for e in spec.events if e.end_s <= 60.0]
    return spec


@pytest.fixture(scope="module")
def lstm6():
    return build_model("lstm", 6, seed=0)


class TestIngest:
    def test_on_off_matches_rasterize(self, s1, lstm6):
        session = StreamSession(lstm6, s1)
        session.ingest_event(StreamEvent(1.0, None, "door", "on", 260.0))
        session.ingest_event(StreamEvent(2.0, None, "door", "off", 260.0))
        col = [i for i, l in enumerate(rasterize(s1).labels) if l == "nh.door"][0]
        active = [f for f in range(30) if session._frame_row(f)[col] == 1.0]
        assert active == list(range(10, 20))

    def test_unmatched_off(self, s1, lstm6):
        session = StreamSession(lstm6, s1)
        with pytest.raises(StreamError, match="unmatched off"):
            session.ingest_event(StreamEvent(1.0, None, "door", "off", 260.0))

    def test_time_regression(self, s1, lstm6):
        session = StreamSession(lstm6, s1)
        session.ingest_event(StreamEvent(2.0, None, "door", "on", 260.0))
        with pytest.raises(StreamError, match="regression"):
            session.ingest_event(StreamEvent(1.0, None, "door", "off", 260.0))

    def test_unknown_kind(self, s1, lstm6):
        session = StreamSession(lstm6, s1)
        with pytest.raises(StreamError):
            session.ingest_event(StreamEvent(0.0, None, "meteor", "on", 180.0))

    def test_interleaved_entities_same_kind(self, s1, lstm6):
        session = StreamSession(lstm6, s1)
        session.ingest_event(StreamEvent(0.0, "p1", "standing-silent", "on", 165.0))
        session.ingest_event(StreamEvent(0.5, "p2", "standing-silent", "on", 180.0))
        session.ingest_event(StreamEvent(1.0, "p1", "standing-silent", "off", 165.0))
        labels = rasterize(s1).labels
        both = {labels[i] for i in np.flatnonzero(session._frame_row(7))}
        assert both == {"p1.present", "p2.present"}
        after = {labels[i] for i in np.flatnonzero(session._frame_row(12))}
        assert after == {"p2.present"}


class TestTick:
    def test_cold_start(self, s1, lstm6):
        session = StreamSession(lstm6, s1)
        cmd = session.tick(0.0)
        assert cmd.probs.shape == (6,)
        assert abs(cmd.probs.sum() - 1.0) <= 1e-12
        assert cmd.switched is False
        assert np.all(session.window == 0.0)

    def test_off_grid_rejected(self, s1, lstm6):
        session = StreamSession(lstm6, s1)
        with pytest.raises(StreamError, match="grid"):
            session.tick(0.05)

    def test_duplicate_tick_rejected(self, s1, lstm6):
        session = StreamSession(lstm6, s1)
        session.tick(0.0)
        with pytest.raises(StreamError):
            session.tick(0.0)

    def test_no_model(self, s1):
        session = StreamSession(None, s1)
        with pytest.raises(StreamError, match="model"):
            session.tick(0.0)

    def test_yaw_is_bin_midpoint(self, s1, lstm6):
        session = StreamSession(lstm6, s1)
        cmd = session.tick(0.0)
        bins = default_bins(s1)
        assert cmd.yaw_deg == bins.center(cmd.class_index)

    def test_skipped_frames_filled(self, s1, lstm6):
        session = StreamSession(lstm6, s1)
        session.ingest_event(StreamEvent(0.0, None, "door", "on", 260.0))
        cmd = session.tick(0.5)  # frames 0..5 materialized in one tick
        labels = rasterize(s1).labels
        col = labels.index("nh.door")
        assert np.all(session.window[-6:, col] == 1.0)
        assert np.all(session.window[:-6] == 0.0)
        assert cmd.t_s == 0.5


class TestPolicies:
    def test_hysteresis_keeps_class_in_top3(self, s1):
        rows = [
            [0.1, 0.1, 0.6, 0.1, 0.05, 0.05],   # establish class 2
            [0.3, 0.05, 0.25, 0.3, 0.05, 0.05],  # 2 ranked 3rd: keep it
        ]
        model = ScriptedModel(rows)
        session = StreamSession(model, s1, policy="top3-hysteresis")
        first = session.tick(0.0)
        second = session.tick(0.1)
        assert first.class_index == 2
        assert second.class_index == 2
        assert second.switched is False

    def test_hysteresis_switches_when_dropped(self, s1):
        rows = [
            [0.1, 0.1, 0.6, 0.1, 0.05, 0.05],     # establish class 2
            [0.3, 0.25, 0.05, 0.2, 0.1, 0.1],     # 2 ranked 4th: switch to 0
        ]
        model = ScriptedModel(rows)
        session = StreamSession(model, s1, policy="top3-hysteresis")
        session.tick(0.0)
        cmd = session.tick(0.1)
        assert cmd.class_index == 0
        assert cmd.switched is True

    def test_argmax_policy(self, s1):
        rows = [
            [0.1, 0.1, 0.6, 0.1, 0.05, 0.05],
            [0.3, 0.05, 0.25, 0.25, 0.1, 0.05],
        ]
        model = ScriptedModel(rows)
        session = StreamSession(model, s1, policy="argmax")
        session.tick(0.0)
        cmd = session.tick(0.1)
        assert cmd.class_index == 0 and cmd.switched is True

    def test_unknown_policy(self, s1, lstm6):
        with pytest.raises(StreamError):
            StreamSession(lstm6, s1, policy="coin-flip")

    def test_hysteresis_switches_at_most_argmax(self, s1short, lstm6):
        arg = replay_scenario(lstm6, s1short, policy="argmax")
        hys = replay_scenario(lstm6, s1short, policy="top3-hysteresis")
        n_arg = sum(c.switched for c in arg.commands)
        n_hys = sum(c.switched for c in hys.commands)
        assert n_hys <= n_arg


class TestEquivalence:
    def test_windows_match_offline(self, s1, lstm6):
        matrix = rasterize(s1)
        feats = matrix.features().astype(np.float64)
        session = StreamSession(lstm6, s1)
        events = scenario_as_events(s1)
        idx = 0
        for frame in range(120):
            t = frame / 10.0
            while idx < len(events) and events[idx].t_s <= t + 1e-9:
                session.ingest_event(events[idx])
                idx += 1
            session.tick(round(t, 6))
            lo = max(0, frame - 29)
            expect = np.zeros((30, 24))
            expect[30 - (frame + 1 - lo):] = feats[lo : frame + 1]
            assert np.array_equal(session.window, expect), f"frame {frame}"

    def test_commands_match_batch_prediction(self, s1short, lstm6):
        session = replay_scenario(lstm6, s1short, policy="argmax")
        matrix = rasterize(s1short)
        labels = np.zeros(matrix.n_frames, dtype=int)
        samples = windowize(matrix, labels)
        X = np.stack([s.features for s in samples]).astype(float)
        batch = lstm6.forward_batch(X).argmax(axis=1)
        online = [c.class_index for c in session.commands[29:]]
        assert online == batch.tolist()

    def test_commands_are_total(self, s1short, lstm6):
        session = replay_scenario(lstm6, s1short)
        assert len(session.commands) == s1short.n_frames
        ts = [c.t_s for c in session.commands]
        assert ts == sorted(ts) and len(set(ts)) == len(ts)


class TestExportTrace:
    def test_rows(self, s1, lstm6, tmp_path):
        session = StreamSession(lstm6, s1)
        for frame in range(5):
            session.tick(round(frame / 10.0, 6))
        path = tmp_path / "commands.csv"
        header, rows = session.export_trace(path)
        assert header[:3] == ["t_s", "class", "yaw_deg"]
        assert header[-1] == "switched"
        assert len(rows) == 5
        text = path.read_text().splitlines()
        assert len(text) == 6

    def test_empty_session(self, s1, lstm6):
        session = StreamSession(lstm6, s1)
        with pytest.raises(StreamError, match="no commands"):
            session.export_trace()


class TestLineProtocol:
    def run(self, s1, lines, model=None):
        model = model or build_model("lstm", 6, seed=0)
        session = StreamSession(model, s1)
        out = io.StringIO()
        run_stream(session, io.StringIO("\n".join(lines) + "\n"), out)
        return out.getvalue().splitlines()

    def test_gaze_output(self, s1):
        out = self.run(s1, ["EVT 0.0 - door 260.0 on", "TICK 0.0", "TICK 0.1"])
        assert len(out) == 2
        for line in out:
            parts = line.split()
            assert parts[0] == "GAZE"
            assert len(parts) == 1 + 3 + 6 + 1
            probs = np.array([float(p) for p in parts[4:10]])
            assert abs(probs.sum() - 1.0) <= 1e-9

    def test_malformed_line_err_and_continue(self, s1):
        out = self.run(s1, ["EVT nonsense", "TICK 0.0"])
        assert out[0].startswith("ERR")
        assert out[1].startswith("GAZE")

    def test_unmatched_off_err(self, s1):
        out = self.run(s1, ["EVT 0.0 - door 260.0 off", "TICK 0.0"])
        assert out[0].startswith("ERR")
        assert "unmatched off" in out[0]

    def test_unknown_verb(self, s1):
        out = self.run(s1, ["JUMP 1.0"])
        assert out[0].startswith("ERR")
