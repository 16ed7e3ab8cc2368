"""Streaming gaze controller.

Ingests timestamped stimulus on/off events, maintains the rolling 3-second
feature window, and emits one gaze command per 0.1 s tick under either a
plain argmax policy or the top-3 reconsideration (hysteresis) policy that
keeps the current gaze class while it stays among the three most probable.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .preprocess import ClassBins, SEQ_LEN, default_bins
from .scenario import (
    FRAME_HZ,
    ScenarioError,
    ScenarioSpec,
    event_columns,
    kind,
    TimedEvent,
)

POLICIES = ("argmax", "top3-hysteresis")


class StreamError(ValueError):
    """Protocol-level problem: bad event, time regression, missing model."""


@dataclass(frozen=True)
class StreamEvent:
    t_s: float
    entity: str | None
    kind_name: str
    phase: str  # "on" | "off"
    source_yaw_deg: float


@dataclass
class GazeCommand:
    t_s: float
    class_index: int
    yaw_deg: float
    probs: np.ndarray
    switched: bool
    latency_s: float = 0.0


class StreamSession:
    """One single-threaded sense -> predict -> gaze loop."""

    def __init__(
        self,
        model,
        spec: ScenarioSpec,
        policy: str = "argmax",
        bins: ClassBins | None = None,
    ):
        if policy not in POLICIES:
            raise StreamError(f"unknown policy {policy!r}")
        if model is not None and model.n_classes != spec.n_classes:
            raise StreamError(
                f"model has {model.n_classes} classes, scenario {spec.n_classes}"
            )
        self.model = model
        self.spec = spec
        self.policy = policy
        self.bins = bins if bins is not None else default_bins(spec)
        self.window = np.zeros((SEQ_LEN, 24), dtype=np.float64)
        self.last_time = -np.inf
        self.last_frame = -1
        self.current_class: int | None = None
        self.commands: list[GazeCommand] = []
        # (entity, kind) -> list of [start, end or None) intervals
        self._intervals: dict = {}
        self._columns_cache: dict = {}

    def _columns_for(self, entity, kind_name) -> list[int]:
        key = (entity, kind_name)
        if key not in self._columns_cache:
            try:
                stim = kind(kind_name)
            except ScenarioError as exc:
                raise StreamError(str(exc)) from exc
            ev = TimedEvent(entity, stim, 0.0, 1.0, self.spec.convention.straight_ahead_deg)
            cols = event_columns(self.spec, ev)
            if not cols:
                raise StreamError(
                    f"kind {kind_name!r} maps to no feature column in {self.spec.id}"
                )
            self._columns_cache[key] = cols
        return self._columns_cache[key]

    def ingest_event(self, event: StreamEvent) -> None:
        if event.t_s < self.last_time:
            raise StreamError(
                f"time regression: {event.t_s} before {self.last_time}"
            )
        if event.phase not in ("on", "off"):
            raise StreamError(f"unknown phase {event.phase!r}")
        self._columns_for(event.entity, event.kind_name)  # rejects unknown kinds
        key = (event.entity, event.kind_name)
        intervals = self._intervals.setdefault(key, [])
        if event.phase == "on":
            if intervals and intervals[-1][1] is None:
                raise StreamError(f"duplicate on for {key}")
            intervals.append([event.t_s, None])
        else:
            if not intervals or intervals[-1][1] is not None:
                raise StreamError("unmatched off")
            intervals[-1][1] = event.t_s
        self.last_time = event.t_s

    def _frame_row(self, frame: int) -> np.ndarray:
        t = frame / FRAME_HZ
        row = np.zeros(24, dtype=np.float64)
        for (entity, kind_name), intervals in self._intervals.items():
            active = any(
                start <= t + 1e-9 and (end is None or t < end - 1e-9)
                for start, end in intervals
            )
            if active:
                for col in self._columns_for(entity, kind_name):
                    row[col] = 1.0
        return row

    def tick(self, t_s: float) -> GazeCommand:
        if self.model is None:
            raise StreamError("no model loaded")
        frame = int(round(t_s * FRAME_HZ))
        if abs(frame / FRAME_HZ - t_s) > 1e-6:
            raise StreamError(f"tick {t_s} not on the 0.1 s grid")
        if frame <= self.last_frame:
            raise StreamError(f"tick for frame {frame} already emitted")
        if t_s < self.last_time:
            raise StreamError(f"time regression: {t_s} before {self.last_time}")

        t0 = time.perf_counter()
        for f in range(self.last_frame + 1, frame + 1):
            self.window = np.roll(self.window, -1, axis=0)
            self.window[-1] = self._frame_row(f)
        self.last_frame = frame
        self.last_time = t_s

        probs = self.model.forward_batch(self.window, mode="eval")
        chosen = self._apply_policy(probs)
        switched = chosen != self.current_class and self.current_class is not None
        self.current_class = chosen
        cmd = GazeCommand(
            t_s=t_s,
            class_index=chosen,
            yaw_deg=self.bins.center(chosen),
            probs=probs,
            switched=bool(switched),
            latency_s=time.perf_counter() - t0,
        )
        self.commands.append(cmd)
        return cmd

    def _apply_policy(self, probs: np.ndarray) -> int:
        order = np.argsort(-probs, kind="stable")
        argmax = int(order[0])
        if self.policy == "argmax" or self.current_class is None:
            return argmax
        if self.current_class in order[:3]:
            return self.current_class
        return argmax

    def export_trace(self, path=None):
        """Command log rows; written as CSV when a path is given."""
        if not self.commands:
            raise StreamError("session has no commands")
        header = (
            ["t_s", "class", "yaw_deg"]
            + [f"p{i}" for i in range(self.spec.n_classes)]
            + ["switched"]
        )
        rows = [
            [cmd.t_s, cmd.class_index, cmd.yaw_deg]
            + [float(p) for p in cmd.probs]
            + [int(cmd.switched)]
            for cmd in self.commands
        ]
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                writer.writerows(rows)
        return header, rows


def scenario_as_events(spec: ScenarioSpec) -> list[StreamEvent]:
    """Flatten a scenario timeline into an ordered on/off event stream."""
    events = []
    for ev in spec.events:
        events.append(
            StreamEvent(ev.start_s, ev.entity, ev.kind.name, "on", ev.source_yaw_deg)
        )
        events.append(
            StreamEvent(ev.end_s, ev.entity, ev.kind.name, "off", ev.source_yaw_deg)
        )
    events.sort(key=lambda e: (e.t_s, e.phase == "on", e.kind_name, str(e.entity)))
    return events


def replay_scenario(
    model, spec: ScenarioSpec, policy: str = "argmax", bins=None
) -> StreamSession:
    """Push a scenario through a session, one tick per frame."""
    session = StreamSession(model, spec, policy=policy, bins=bins)
    events = scenario_as_events(spec)
    idx = 0
    for frame in range(spec.n_frames):
        t = frame / FRAME_HZ
        while idx < len(events) and events[idx].t_s <= t + 1e-9:
            session.ingest_event(events[idx])
            idx += 1
        session.tick(round(t, 6))
    return session


# --- Line protocol ----------------------------------------------------------

def _parse_line(line: str):
    parts = line.split()
    if not parts:
        raise StreamError("empty line")
    if parts[0] == "EVT":
        if len(parts) != 6:
            raise StreamError("EVT needs: t entity kind yaw on|off")
        t_s = float(parts[1])
        entity = None if parts[2] == "-" else parts[2]
        return StreamEvent(t_s, entity, parts[3], parts[5], float(parts[4]))
    if parts[0] == "TICK":
        if len(parts) != 2:
            raise StreamError("TICK needs: t")
        return float(parts[1])
    raise StreamError(f"unknown verb {parts[0]!r}")


def run_stream(session: StreamSession, in_fh, out_fh) -> None:
    """Serve the line protocol: EVT/TICK on input, GAZE/ERR on output.
    Malformed lines produce ERR and do not abort the session."""
    for line in in_fh:
        line = line.strip()
        if not line:
            continue
        try:
            parsed = _parse_line(line)
            if isinstance(parsed, StreamEvent):
                session.ingest_event(parsed)
            else:
                cmd = session.tick(parsed)
                probs = " ".join(repr(float(p)) for p in cmd.probs)
                out_fh.write(
                    f"GAZE {cmd.t_s:g} {cmd.class_index} {cmd.yaw_deg:g} "
                    f"{probs} {int(cmd.switched)}\n"
                )
        except (StreamError, ValueError) as exc:
            out_fh.write(f"ERR {exc}\n")
        out_fh.flush()
