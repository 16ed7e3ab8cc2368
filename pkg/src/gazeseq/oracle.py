"""Synthetic participant gaze traces.

Stands in for the unavailable VR study population: each participant is a
Persona (stimulus priorities, reaction latency, fixation dwell, head-turn
propensity, jitter, boredom) and traces are produced by deterministic
priority arbitration over the scenario's active events.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np

from .scenario import (
    FRAME_DT,
    FRAME_HZ,
    HUMAN_KINDS,
    NONHUMAN_KINDS,
    ScenarioSpec,
    require_valid,
)

# Beyond this offset from straight ahead a stimulus counts as peripheral and
# the persona may track it with the eyes only, leaving head yaw unchanged.
PERIPHERAL_DEG = 30.0

# Compound speaking behaviors outrank their silent variants.
SPEAKING_BONUS = 0.3
_SPEAKING_KINDS = frozenset(
    {"standing-speaking", "waving-speaking", "arms-crossed-speaking", "conversing"}
)


@dataclass(frozen=True)
class PersonaRanges:
    """Sampling ranges for the persona population; all overridable."""

    human_weight: tuple[float, float] = (1.0, 2.0)
    nonhuman_weight: tuple[float, float] = (0.2, 0.9)
    latency_s: tuple[float, float] = (0.2, 0.6)
    dwell_min_s: tuple[float, float] = (0.5, 1.5)
    noise_deg: tuple[float, float] = (0.0, 5.0)
    head_turn_prob: tuple[float, float] = (0.6, 1.0)
    boredom_rate: tuple[float, float] = (0.0, 0.02)

    @classmethod
    def from_dict(cls, data: dict) -> "PersonaRanges":
        return cls(**{k: tuple(v) for k, v in data.items()})


@dataclass(frozen=True)
class Persona:
    weights: dict  # stimulus name -> non-negative priority
    latency_s: float
    dwell_min_s: float
    head_turn_prob: float
    noise_deg: float
    boredom_rate: float

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("persona weights must be non-negative")
        if self.latency_s < 0 or self.noise_deg < 0:
            raise ValueError("latency and noise must be non-negative")
        if not 0.0 <= self.head_turn_prob <= 1.0:
            raise ValueError("head_turn_prob outside [0, 1]")


@dataclass
class GazeTrace:
    participant_id: int
    scenario_id: str
    yaw_deg: np.ndarray  # degrees at 10 Hz


def sample_persona(seed: int, ranges: PersonaRanges = PersonaRanges()) -> Persona:
    """Deterministically draw one persona. Human-kind weights are drawn
    strictly above the non-human range by default, so people dominate."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name in HUMAN_KINDS:
        w = rng.uniform(*ranges.human_weight)
        if name in _SPEAKING_KINDS:
            w += SPEAKING_BONUS
        weights[name] = w
    for name in NONHUMAN_KINDS:
        weights[name] = rng.uniform(*ranges.nonhuman_weight)
    return Persona(
        weights=weights,
        latency_s=rng.uniform(*ranges.latency_s),
        dwell_min_s=rng.uniform(*ranges.dwell_min_s),
        head_turn_prob=rng.uniform(*ranges.head_turn_prob),
        noise_deg=rng.uniform(*ranges.noise_deg),
        boredom_rate=rng.uniform(*ranges.boredom_rate),
    )


def sample_population(
    n: int, base_seed: int = 0, ranges: PersonaRanges = PersonaRanges()
) -> list[Persona]:
    return [sample_persona(base_seed + i, ranges) for i in range(n)]


def _active_events(spec: ScenarioSpec):
    """Per-frame list of active event indices."""
    n = spec.n_frames
    active = [[] for _ in range(n)]
    for idx, ev in enumerate(spec.events):
        t0 = int(np.ceil(ev.start_s * FRAME_HZ - 1e-9))
        t1 = min(int(np.ceil(ev.end_s * FRAME_HZ - 1e-9)), n)
        for t in range(max(t0, 0), t1):
            active[t].append(idx)
    return active


def simulate_trace_detailed(
    spec: ScenarioSpec, persona: Persona, seed: int, participant_id: int = 0
):
    """Run the arbitration model; returns (GazeTrace, target_log) where
    target_log[t] is the winning event index at frame t (or -1 if none).

    Arbitration each frame: among active events the one with the highest
    persona weight wins (ties go to the most recently started). Gaze moves
    to the winner's yaw after the persona's latency, holds at least
    dwell_min_s, and reverts to straight ahead when nothing is active or on
    a boredom coin flip. Peripheral targets may be tracked with the eyes
    only (head yaw unchanged). Gaussian jitter is added last, then clamped.
    """
    require_valid(spec)
    conv = spec.convention
    n = spec.n_frames
    active = _active_events(spec)

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(n) * persona.noise_deg
    headturn_u = rng.random(n)
    boredom_u = rng.random(n)

    latency_f = int(round(persona.latency_s * FRAME_HZ))
    dwell_f = int(round(persona.dwell_min_s * FRAME_HZ))

    straight = conv.straight_ahead_deg
    yaw = np.empty(n, dtype=np.float64)
    target_log = np.full(n, -1, dtype=np.int64)

    base = straight
    current = None  # event index currently fixated
    fixation_start = -(10**9)
    pending = None
    pending_frame = 0
    bored = set()  # event indices abandoned out of boredom, never revisited

    def weight_key(idx):
        ev = spec.events[idx]
        return (persona.weights[ev.kind.name], ev.start_s, idx)

    for t in range(n):
        candidates = [i for i in active[t] if i not in bored]
        best = max(candidates, key=weight_key) if candidates else None
        if active[t]:
            target_log[t] = max(active[t], key=weight_key)

        if best is None:
            pending = None
            if current is not None and t - fixation_start >= dwell_f:
                current = None
                base = straight
            elif current is None:
                base = straight
        elif best == current:
            pending = None
            # Boredom: chance of reverting grows with fixation time.
            if persona.boredom_rate > 0:
                elapsed_s = (t - fixation_start) * FRAME_DT
                p = min(1.0, persona.boredom_rate * elapsed_s)
                if boredom_u[t] < p:
                    bored.add(current)
                    current = None
                    fixation_start = t
                    base = straight
        else:
            if pending != best:
                pending = best
                pending_frame = t
            if (
                t - pending_frame >= latency_f
                and t - fixation_start >= dwell_f
            ):
                current = pending
                pending = None
                fixation_start = t
                target_yaw = spec.events[current].source_yaw_deg
                peripheral = abs(target_yaw - straight) > PERIPHERAL_DEG
                if not peripheral or headturn_u[t] < persona.head_turn_prob:
                    base = target_yaw
                # else: eyes only, head yaw stays where it was

        yaw[t] = min(max(base + noise[t], conv.min_deg), conv.max_deg)

    trace = GazeTrace(
        participant_id=participant_id, scenario_id=spec.id, yaw_deg=yaw
    )
    return trace, target_log


def simulate_trace(
    spec: ScenarioSpec, persona: Persona, seed: int, participant_id: int = 0
) -> GazeTrace:
    trace, _ = simulate_trace_detailed(spec, persona, seed, participant_id)
    return trace


def simulate_population(
    spec: ScenarioSpec, personas: list[Persona], base_seed: int = 0
) -> list[GazeTrace]:
    """One trace per persona; trace i uses seed base_seed + i."""
    return [
        simulate_trace(spec, persona, base_seed + i, participant_id=i)
        for i, persona in enumerate(personas)
    ]


def population_stats(traces: list[GazeTrace]) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame mean and population standard deviation of yaw."""
    if not traces:
        raise ValueError("empty population")
    lengths = {len(tr.yaw_deg) for tr in traces}
    scenarios = {tr.scenario_id for tr in traces}
    if len(lengths) != 1 or len(scenarios) != 1:
        raise ValueError("traces must share scenario and length")
    stack = np.stack([tr.yaw_deg for tr in traces])
    return stack.mean(axis=0), stack.std(axis=0)


def bayes_reference(
    spec: ScenarioSpec,
    personas: list[Persona],
    seeds: list[int],
    bins=None,
):
    """Empirical per-frame class distribution over the population, with the
    achievable top-1 / top-3 accuracy upper bounds it implies.

    Returns (dist, top1_bound, top3_bound) where dist is T x n_classes.
    """
    if not personas or not seeds or len(personas) != len(seeds):
        raise ValueError("personas and seeds must be non-empty and equal length")
    from .preprocess import default_bins, label_trace

    if bins is None:
        bins = default_bins(spec)
    n = spec.n_frames
    counts = np.zeros((n, bins.n_classes), dtype=np.float64)
    for i, (persona, seed) in enumerate(zip(personas, seeds)):
        trace = simulate_trace(spec, persona, seed, participant_id=i)
        labels = label_trace(trace, bins)
        counts[np.arange(n), labels] += 1.0
    dist = counts / len(personas)
    sorted_dist = np.sort(dist, axis=1)[:, ::-1]
    top1 = float(sorted_dist[:, 0].mean())
    top3 = float(sorted_dist[:, : min(3, bins.n_classes)].sum(axis=1).mean())
    return dist, top1, top3


# --- Trace and persona files ------------------------------------------------

def save_traces_csv(traces: list[GazeTrace], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["participant_id", "frame", "yaw_deg"])
        for tr in traces:
            for frame, yaw in enumerate(tr.yaw_deg):
                writer.writerow([tr.participant_id, frame, repr(float(yaw))])


def load_traces_csv(path, scenario_id: str = "") -> list[GazeTrace]:
    by_participant: dict[int, list[float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            by_participant.setdefault(int(row["participant_id"]), []).append(
                float(row["yaw_deg"])
            )
    return [
        GazeTrace(pid, scenario_id, np.asarray(vals))
        for pid, vals in sorted(by_participant.items())
    ]


def save_personas_json(personas: list[Persona], path, meta: dict | None = None) -> None:
    doc = {"personas": [asdict(p) for p in personas]}
    if meta:
        doc.update(meta)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_personas_json(path) -> list[Persona]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return [Persona(**entry) for entry in doc["personas"]]
