"""Scenario definitions: stimulus catalog, timed event timelines, and
rasterization into the per-frame scene-properties matrix.

A scenario is a closed catalog of human and non-human stimuli placed on a
timeline. Rasterization samples the timeline at 10 Hz into a T x 25 matrix:
column 0 is the frame index, columns 1..24 are binary stimulus indicators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

FRAME_HZ = 10
FRAME_DT = 0.1
N_FEATURES = 24

HUMAN_KINDS = (
    "standing-silent",
    "standing-speaking",
    "moving-right",
    "moving-left",
    "moving-ahead",
    "waving-silent",
    "waving-speaking",
    "arms-crossed-silent",
    "arms-crossed-speaking",
    "conversing",
    "entering",
    "exiting",
    "pointing",
)

NONHUMAN_KINDS = (
    "footsteps",
    "tv-news",
    "tv-static",
    "door",
    "phone-ring",
    "object-fall",
    "doorbell",
    "alarm",
    "knock",
    "phone-alert",
    "screen-on",
)

# Behavioral attributes each human kind activates. "present" is always on;
# the remaining flags decompose compound behaviors (e.g. waving-speaking sets
# both waving and speaking).
_HUMAN_ATTRIBUTES = {
    "standing-silent": ("present",),
    "standing-speaking": ("present", "speaking"),
    "moving-right": ("present", "moving"),
    "moving-left": ("present", "moving"),
    "moving-ahead": ("present", "moving"),
    "waving-silent": ("present", "waving"),
    "waving-speaking": ("present", "waving", "speaking"),
    "arms-crossed-silent": ("present", "arms-crossed"),
    "arms-crossed-speaking": ("present", "arms-crossed", "speaking"),
    "conversing": ("present", "speaking"),
    "entering": ("present", "moving"),
    "exiting": ("present", "moving"),
    "pointing": ("present", "pointing"),
}

# Attributes that collapse onto a generic "gesturing" flag when the scenario
# uses the compact 4-feature person encoding.
_GESTURE_ATTRIBUTES = frozenset({"waving", "arms-crossed", "pointing"})

# Non-human kinds that share a merged column when the scenario's non-human
# column set does not carry them individually.
_NONHUMAN_MERGE = {
    "tv-news": "tv",
    "tv-static": "tv",
    "doorbell": "chime",
    "alarm": "chime",
}


class ScenarioError(ValueError):
    """Raised when an operation is asked to run on an invalid scenario."""


@dataclass(frozen=True)
class StimulusKind:
    category: str  # "human" | "nonhuman"
    name: str

    def __post_init__(self):
        if self.category == "human":
            known = HUMAN_KINDS
        elif self.category == "nonhuman":
            known = NONHUMAN_KINDS
        else:
            raise ScenarioError(f"unknown stimulus category {self.category!r}")
        if self.name not in known:
            raise ScenarioError(
                f"unknown {self.category} stimulus {self.name!r}"
            )


def kind(name: str) -> StimulusKind:
    """Look up a catalog stimulus by name."""
    if name in HUMAN_KINDS:
        return StimulusKind("human", name)
    if name in NONHUMAN_KINDS:
        return StimulusKind("nonhuman", name)
    raise ScenarioError(f"unknown stimulus {name!r}")


@dataclass(frozen=True)
class AngleConvention:
    straight_ahead_deg: float
    min_deg: float
    max_deg: float
    positive_direction: str = "right"


@dataclass(frozen=True)
class TimedEvent:
    entity: str | None  # person id, or None for ambient non-human sounds
    kind: StimulusKind
    start_s: float
    end_s: float
    source_yaw_deg: float


@dataclass
class ScenarioSpec:
    id: str
    duration_s: float
    frame_hz: int
    n_classes: int
    persons: list[str]
    human_feature_names: list[str]
    nonhuman_feature_names: list[str]
    events: list[TimedEvent]
    convention: AngleConvention

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.frame_hz))


@dataclass
class FeatureMatrix:
    """T x 25 rasterization: column 0 = frame index, 1..24 binary flags."""

    values: np.ndarray
    labels: list[str] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    def features(self) -> np.ndarray:
        """The 24 stimulus columns (time column dropped)."""
        return self.values[:, 1:]


def _human_columns(spec: ScenarioSpec, event: TimedEvent) -> list[int]:
    attrs = set(_HUMAN_ATTRIBUTES[event.kind.name])
    if "gesturing" in spec.human_feature_names and attrs & _GESTURE_ATTRIBUTES:
        attrs = (attrs - _GESTURE_ATTRIBUTES) | {"gesturing"}
    person_idx = spec.persons.index(event.entity)
    base = person_idx * len(spec.human_feature_names)
    return [
        base + i
        for i, feat in enumerate(spec.human_feature_names)
        if feat in attrs
    ]


def _nonhuman_column(spec: ScenarioSpec, name: str) -> int | None:
    names = spec.nonhuman_feature_names
    if name in names:
        col = names.index(name)
    elif _NONHUMAN_MERGE.get(name) in names:
        col = names.index(_NONHUMAN_MERGE[name])
    else:
        return None
    return len(spec.persons) * len(spec.human_feature_names) + col


def event_columns(spec: ScenarioSpec, event: TimedEvent) -> list[int]:
    """Feature column indices (0..23) an event activates."""
    if event.kind.category == "human":
        return _human_columns(spec, event)
    col = _nonhuman_column(spec, event.kind.name)
    return [] if col is None else [col]


def validate_scenario(spec: ScenarioSpec) -> list[str]:
    """Check every scenario invariant; returns the list of violations
    (empty means the spec is valid). Violations are data, not exceptions."""
    out = []
    if spec.frame_hz != FRAME_HZ:
        out.append(f"frame_hz {spec.frame_hz} != {FRAME_HZ}")
    if spec.duration_s <= 0:
        out.append(f"non-positive duration {spec.duration_s}")

    conv = spec.convention
    if not (conv.min_deg < conv.straight_ahead_deg < conv.max_deg):
        out.append(
            "angle convention not ordered: "
            f"{conv.min_deg} < {conv.straight_ahead_deg} < {conv.max_deg} fails"
        )
    if conv.positive_direction not in ("right", "left"):
        out.append(f"bad positive_direction {conv.positive_direction!r}")

    n_feat = len(spec.persons) * len(spec.human_feature_names) + len(
        spec.nonhuman_feature_names
    )
    if n_feat != N_FEATURES:
        out.append(f"feature count {n_feat} != {N_FEATURES}")
    if len(spec.persons) != len(set(spec.persons)):
        out.append("duplicate person ids")
    if spec.id in ("s1", "s2") and spec.n_classes not in (6, 7):
        out.append(f"built-in n_classes {spec.n_classes} not in {{6,7}}")
    if spec.n_classes < 2:
        out.append(f"n_classes {spec.n_classes} < 2")

    for i, ev in enumerate(spec.events):
        if ev.end_s <= ev.start_s:
            out.append(f"event {i}: negative duration")
        elif ev.end_s - ev.start_s < FRAME_DT - 1e-9:
            out.append(f"event {i}: shorter than one frame")
        if ev.start_s < 0 or ev.end_s > spec.duration_s + 1e-9:
            out.append(f"event {i}: outside [0, {spec.duration_s}] s")
        if not (conv.min_deg <= ev.source_yaw_deg <= conv.max_deg):
            out.append(
                f"event {i}: yaw {ev.source_yaw_deg} outside "
                f"[{conv.min_deg}, {conv.max_deg}]"
            )
        if ev.kind.category == "human":
            if ev.entity not in spec.persons:
                out.append(f"event {i}: unknown person {ev.entity!r}")
            elif not _human_columns(spec, ev):
                out.append(
                    f"event {i}: kind {ev.kind.name!r} maps to no feature column"
                )
        else:
            if _nonhuman_column(spec, ev.kind.name) is None:
                out.append(
                    f"event {i}: kind {ev.kind.name!r} maps to no feature column"
                )
    return out


def require_valid(spec: ScenarioSpec) -> None:
    violations = validate_scenario(spec)
    if violations:
        raise ScenarioError(
            f"invalid scenario {spec.id!r}: " + "; ".join(violations)
        )


def feature_layout(spec: ScenarioSpec) -> list[str]:
    """Ordered labels of the 24 feature columns: person blocks first, then
    the non-human flags, both in roster/catalog order."""
    require_valid(spec)
    labels = [
        f"{p}.{feat}" for p in spec.persons for feat in spec.human_feature_names
    ]
    labels += [f"nh.{name}" for name in spec.nonhuman_feature_names]
    return labels


def _frame_span(start_s: float, end_s: float) -> tuple[int, int]:
    """Frames t with start <= t*0.1 < end (start-inclusive, end-exclusive)."""
    t0 = int(math.ceil(start_s * FRAME_HZ - 1e-9))
    t1 = int(math.ceil(end_s * FRAME_HZ - 1e-9))
    return max(t0, 0), t1


def rasterize(spec: ScenarioSpec) -> FeatureMatrix:
    """Sample the event timeline at 10 Hz into the T x 25 scene matrix."""
    require_valid(spec)
    n = spec.n_frames
    mat = np.zeros((n, 1 + N_FEATURES), dtype=np.int64)
    mat[:, 0] = np.arange(n)
    for ev in spec.events:
        t0, t1 = _frame_span(ev.start_s, ev.end_s)
        t1 = min(t1, n)
        for col in event_columns(spec, ev):
            mat[t0:t1, 1 + col] = 1
    return FeatureMatrix(values=mat, labels=feature_layout(spec))


# --- JSON serialization -----------------------------------------------------

_SPEC_FIELDS = {
    "id",
    "duration_s",
    "frame_hz",
    "n_classes",
    "persons",
    "human_feature_names",
    "nonhuman_feature_names",
    "events",
    "convention",
}
_EVENT_FIELDS = {"entity", "kind", "start_s", "end_s", "source_yaw_deg"}
_KIND_FIELDS = {"category", "name"}
_CONV_FIELDS = {"straight_ahead_deg", "min_deg", "max_deg", "positive_direction"}


def _check_fields(obj: dict, allowed: set, what: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ScenarioError(f"unknown {what} fields: {sorted(unknown)}")
    missing = allowed - set(obj)
    if missing:
        raise ScenarioError(f"missing {what} fields: {sorted(missing)}")


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "id": spec.id,
        "duration_s": spec.duration_s,
        "frame_hz": spec.frame_hz,
        "n_classes": spec.n_classes,
        "persons": list(spec.persons),
        "human_feature_names": list(spec.human_feature_names),
        "nonhuman_feature_names": list(spec.nonhuman_feature_names),
        "convention": {
            "straight_ahead_deg": spec.convention.straight_ahead_deg,
            "min_deg": spec.convention.min_deg,
            "max_deg": spec.convention.max_deg,
            "positive_direction": spec.convention.positive_direction,
        },
        "events": [
            {
                "entity": ev.entity,
                "kind": {"category": ev.kind.category, "name": ev.kind.name},
                "start_s": ev.start_s,
                "end_s": ev.end_s,
                "source_yaw_deg": ev.source_yaw_deg,
            }
            for ev in spec.events
        ],
    }


def scenario_from_dict(data: dict) -> ScenarioSpec:
    _check_fields(data, _SPEC_FIELDS, "scenario")
    conv = data["convention"]
    _check_fields(conv, _CONV_FIELDS, "convention")
    events = []
    for ev in data["events"]:
        _check_fields(ev, _EVENT_FIELDS, "event")
        _check_fields(ev["kind"], _KIND_FIELDS, "kind")
        k = StimulusKind(ev["kind"]["category"], ev["kind"]["name"])
        events.append(
            TimedEvent(
                entity=ev["entity"],
                kind=k,
                start_s=float(ev["start_s"]),
                end_s=float(ev["end_s"]),
                source_yaw_deg=float(ev["source_yaw_deg"]),
            )
        )
    return ScenarioSpec(
        id=str(data["id"]),
        duration_s=float(data["duration_s"]),
        frame_hz=int(data["frame_hz"]),
        n_classes=int(data["n_classes"]),
        persons=list(data["persons"]),
        human_feature_names=list(data["human_feature_names"]),
        nonhuman_feature_names=list(data["nonhuman_feature_names"]),
        events=events,
        convention=AngleConvention(
            straight_ahead_deg=float(conv["straight_ahead_deg"]),
            min_deg=float(conv["min_deg"]),
            max_deg=float(conv["max_deg"]),
            positive_direction=str(conv["positive_direction"]),
        ),
    )


def save_scenario(spec: ScenarioSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(spec), fh, indent=2)
        fh.write("\n")


def load_scenario(path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


# --- Built-in scenarios -----------------------------------------------------

S1_HUMAN_FEATURES = [
    "present",
    "speaking",
    "moving",
    "waving",
    "arms-crossed",
    "pointing",
]
S2_HUMAN_FEATURES = ["present", "speaking", "moving", "gesturing"]
S1_NONHUMAN_FEATURES = ["footsteps", "tv", "door", "phone-ring", "object-fall", "chime"]
S2_NONHUMAN_FEATURES = [
    "footsteps",
    "door",
    "phone-ring",
    "object-fall",
    "doorbell",
    "knock",
    "phone-alert",
    "screen-on",
]


def _build_s1() -> ScenarioSpec:
    """Indoor animation scene: 3 characters near the center of view,
    object/sound stimuli in the corners; 48 five-second stimulus segments."""
    persons = ["p1", "p2", "p3"]
    person_yaw = {"p1": 165.0, "p2": 180.0, "p3": 200.0}
    human_cycle = [
        "standing-speaking",
        "waving-speaking",
        "conversing",
        "moving-left",
        "arms-crossed-speaking",
        "pointing",
        "standing-silent",
        "moving-right",
        "waving-silent",
        "entering",
        "arms-crossed-silent",
        "exiting",
        "moving-ahead",
    ]
    nonhuman_cycle = [
        ("footsteps", 100.0),
        ("tv-news", 240.0),
        ("door", 260.0),
        ("phone-ring", 120.0),
        ("object-fall", 255.0),
        ("doorbell", 105.0),
        ("alarm", 245.0),
        ("tv-static", 115.0),
    ]
    events = []
    h = nh = 0
    for slot in range(48):
        t0 = slot * 5.0
        if slot % 6 == 5:
            name, yaw = nonhuman_cycle[nh % len(nonhuman_cycle)]
            # Start early so the sound overlaps the preceding human stimulus.
            events.append(
                TimedEvent(None, kind(name), max(t0 - 2.0, 0.0), t0 + 5.0, yaw)
            )
            nh += 1
        else:
            person = persons[h % 3]
            name = human_cycle[h % len(human_cycle)]
            events.append(
                TimedEvent(person, kind(name), t0, t0 + 5.0, person_yaw[person])
            )
            h += 1
    return ScenarioSpec(
        id="s1",
        duration_s=240.0,
        frame_hz=FRAME_HZ,
        n_classes=6,
        persons=persons,
        human_feature_names=list(S1_HUMAN_FEATURES),
        nonhuman_feature_names=list(S1_NONHUMAN_FEATURES),
        events=events,
        convention=AngleConvention(180.0, 90.0, 270.0, "right"),
    )


def _build_s2() -> ScenarioSpec:
    """Real-world 360-degree scene: 4 people spread across the field of view,
    ambient stimuli between and beyond them; roughly two minutes."""
    persons = ["p1", "p2", "p3", "p4"]
    # Persons sit near the centers of four interior gaze bins; ambient
    # stimuli fill the two outermost bins so every class occurs naturally.
    slots = [
        [("p2", "standing-speaking", 64.0, 0.0, 5.0)],
        [(None, "footsteps", 13.0, 0.0, 5.0)],
        [("p1", "waving-speaking", 38.0, 0.0, 5.0)],
        [
            ("p3", "conversing", 116.0, 0.0, 5.0),
            ("p4", "standing-silent", 141.0, 0.0, 5.0),
        ],
        [(None, "door", 167.0, 0.0, 5.0)],
        [("p4", "pointing", 141.0, 0.0, 5.0)],
        [(None, "phone-ring", 13.0, 0.0, 5.0)],
        [
            ("p1", "arms-crossed-speaking", 38.0, 0.0, 5.0),
            (None, "knock", 167.0, 1.0, 4.0),
        ],
        [("p3", "moving-left", 116.0, 0.0, 5.0)],
        [(None, "object-fall", 167.0, 0.0, 5.0)],
        [("p2", "waving-silent", 64.0, 0.0, 5.0)],
        [
            ("p1", "moving-right", 38.0, 0.0, 5.0),
            ("p4", "standing-speaking", 141.0, 0.0, 5.0),
        ],
        [(None, "doorbell", 13.0, 0.0, 5.0)],
        [("p4", "conversing", 141.0, 0.0, 5.0)],
        [
            ("p1", "standing-silent", 38.0, 0.0, 5.0),
            ("p3", "standing-speaking", 116.0, 0.0, 5.0),
        ],
        [(None, "screen-on", 167.0, 0.0, 5.0)],
        [("p2", "entering", 64.0, 0.0, 5.0)],
        [(None, "phone-alert", 13.0, 0.0, 5.0)],
        [
            ("p3", "pointing", 116.0, 0.0, 5.0),
            (None, "object-fall", 13.0, 1.5, 3.5),
        ],
        [("p4", "waving-speaking", 141.0, 0.0, 5.0)],
        [
            (None, "footsteps", 13.0, 0.0, 5.0),
            (None, "screen-on", 167.0, 0.0, 5.0),
        ],
        [("p1", "conversing", 38.0, 0.0, 5.0)],
        [(None, "door", 167.0, 0.0, 5.0)],
        [
            ("p2", "arms-crossed-silent", 64.0, 0.0, 5.0),
            (None, "doorbell", 13.0, 2.0, 3.0),
        ],
    ]
    events = []
    for slot_idx, entries in enumerate(slots):
        t0 = slot_idx * 5.0
        for entity, name, yaw, off, dur in entries:
            events.append(
                TimedEvent(entity, kind(name), t0 + off, t0 + off + dur, yaw)
            )
    return ScenarioSpec(
        id="s2",
        duration_s=120.0,
        frame_hz=FRAME_HZ,
        n_classes=7,
        persons=persons,
        human_feature_names=list(S2_HUMAN_FEATURES),
        nonhuman_feature_names=list(S2_NONHUMAN_FEATURES),
        events=events,
        convention=AngleConvention(90.0, 0.0, 180.0, "right"),
    )


_BUILDERS = {"s1": _build_s1, "s2": _build_s2}


def builtin_scenario(scenario_id: str) -> ScenarioSpec:
    """One of the two bundled scenarios, constructed fresh."""
    try:
        return _BUILDERS[scenario_id]()
    except KeyError:
        raise ScenarioError(f"no built-in scenario {scenario_id!r}") from None


def builtin_scenario_path(scenario_id: str):
    """Filesystem path of the bundled scenario JSON."""
    if scenario_id not in _BUILDERS:
        raise ScenarioError(f"no built-in scenario {scenario_id!r}")
    return resources.files("gazeseq.data") / f"{scenario_id}.scenario.json"


def resolve_scenario(ref: str) -> ScenarioSpec:
    """Accept a built-in id ('s1', 's2') or a path to a scenario JSON file."""
    if ref in _BUILDERS:
        return builtin_scenario(ref)
    return load_scenario(ref)
