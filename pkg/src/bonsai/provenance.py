"""Append-only provenance event DAG with replay and view construction.

Every state-changing operation across the platform appends exactly one
actor-attributed event here.  Events are immutable, ids are gapless and
strictly increasing, and causal edges always point forward in time.
Replaying a log prefix reconstructs the governed state deterministically.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field

EVENT_KINDS = {
    "issue-created", "intent-classified", "delegated", "spawned", "completed",
    "correction", "rejected", "merged", "comment", "intervention", "review",
    "service-registered", "workflow-saved", "execution-dispatched",
    "execution-terminal", "feedback-filed",
}

# Kinds rendered with the inverted-triangle glyph at zoom level 1.
_TRIANGLE_KINDS = {"correction", "rejected"}

ACTOR_KINDS = {"user", "nexus", "squad-lead", "adu"}


@dataclass(frozen=True)
class Actor:
    id: str
    kind: str  # user | nexus | squad-lead | adu
    display_name: str
    agent_type: str | None = None   # adu only
    instance: int | None = None     # adu only

    def __post_init__(self):
        if self.kind not in ACTOR_KINDS:
            raise ValueError(f"unknown actor kind {self.kind!r}")

    @property
    def lane_key(self) -> str:
        if self.kind == "user":
            return "user"
        if self.kind == "nexus":
            return "nexus"
        if self.kind == "squad-lead":
            return f"sl:{self.id}"
        return f"adu:{self.agent_type}:{self.instance}"

    @property
    def color_key(self) -> str:
        # Stable per-actor hue; identical across every view.
        digest = hashlib.sha256(self.id.encode()).hexdigest()
        hue = int(digest[:4], 16) % 360
        return f"hsl({hue},65%,50%)"


@dataclass(frozen=True)
class ProvenanceEvent:
    id: int
    timestamp: float
    actor: str
    kind: str
    summary: str
    parent_issue: str | None = None
    links: tuple[tuple[str, str], ...] = ()  # (link kind, target id)
    payload: dict | None = None

    def as_dict(self) -> dict:
        return {
            "id": self.id, "timestamp": self.timestamp, "actor": self.actor,
            "kind": self.kind, "summary": self.summary,
            "parent_issue": self.parent_issue,
            "links": [list(l) for l in self.links],
            "payload": self.payload,
        }


@dataclass(frozen=True)
class ProvenanceEdge:
    src: int
    dst: int
    kind: str  # causal | informational
    label: str = ""

    def as_dict(self) -> dict:
        return {"from": self.src, "to": self.dst, "kind": self.kind, "label": self.label}


class EventLog:
    """Single linearizable append point; snapshot reads."""

    def __init__(self, clock=None):
        import time
        self._clock = clock or time.time
        self._events: list[ProvenanceEvent] = []
        self._edges: list[ProvenanceEdge] = []
        self._actors: dict[str, Actor] = {}
        self._lock = threading.Lock()

    # -- actors ---------------------------------------------------------
    def register_actor(self, actor: Actor) -> Actor:
        with self._lock:
            self._actors.setdefault(actor.id, actor)
        return actor

    def actor(self, actor_id: str) -> Actor:
        return self._actors[actor_id]

    def actors(self) -> list[Actor]:
        return list(self._actors.values())

    # -- append ---------------------------------------------------------
    def record(self, actor: str, kind: str, summary: str, *,
               parent_issue: str | None = None,
               links: list[tuple[str, str]] | None = None,
               payload: dict | None = None,
               edges: list[tuple[int, str, str]] | None = None,
               timestamp: float | None = None) -> int:
        """Append one event; `edges` are (from event id, edge kind, label)."""
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        with self._lock:
            if actor not in self._actors:
                raise ValueError(f"unknown actor {actor!r}")
            eid = len(self._events) + 1
            for src, ekind, _ in edges or ():
                if not (1 <= src < eid):
                    raise ValueError(f"edge source {src} does not precede event {eid}")
                if ekind not in ("causal", "informational"):
                    raise ValueError(f"unknown edge kind {ekind!r}")
            ts = self._clock() if timestamp is None else timestamp
            event = ProvenanceEvent(
                id=eid, timestamp=ts, actor=actor, kind=kind, summary=summary,
                parent_issue=parent_issue, links=tuple(links or ()), payload=payload)
            self._events.append(event)
            for src, ekind, label in edges or ():
                self._edges.append(ProvenanceEdge(src, eid, ekind, label))
            return eid

    # -- reads ----------------------------------------------------------
    def events(self) -> list[ProvenanceEvent]:
        with self._lock:
            return list(self._events)

    def edges(self) -> list[ProvenanceEdge]:
        with self._lock:
            return list(self._edges)

    def __len__(self) -> int:
        return len(self._events)

    # -- export / import --------------------------------------------------
    def export_jsonl(self) -> str:
        """One event per line, then an edges section introduced by '#edges'."""
        lines = [json.dumps(e.as_dict(), sort_keys=True) for e in self.events()]
        lines.append("#edges")
        lines.extend(json.dumps(e.as_dict(), sort_keys=True) for e in self.edges())
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_jsonl(text: str) -> tuple[list[ProvenanceEvent], list[ProvenanceEdge]]:
        events: list[ProvenanceEvent] = []
        edges: list[ProvenanceEdge] = []
        in_edges = False
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line == "#edges":
                in_edges = True
                continue
            obj = json.loads(line)
            if in_edges:
                edges.append(ProvenanceEdge(obj["from"], obj["to"], obj["kind"], obj["label"]))
            else:
                events.append(ProvenanceEvent(
                    id=obj["id"], timestamp=obj["timestamp"], actor=obj["actor"],
                    kind=obj["kind"], summary=obj["summary"],
                    parent_issue=obj.get("parent_issue"),
                    links=tuple(tuple(l) for l in obj.get("links") or ()),
                    payload=obj.get("payload")))
        ids = [e.id for e in events]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("imported log is not a gapless full log")
        return events, edges


# --- replay -----------------------------------------------------------------

def replay(events: list[ProvenanceEvent]) -> dict:
    """Reconstruct the governed state snapshot from an event log prefix.

    Events carry the post-transition projection of the entity they touch
    in payload {"entity", "entity_id", "snapshot"}; replay folds these
    into per-entity maps.  Informational detail (comments without state
    effect) carries no payload and is skipped.
    """
    ids = [e.id for e in events]
    if ids != list(range(1, len(ids) + 1)):
        raise ValueError("events are not a log prefix")
    state: dict = {"services": {}, "workflows": {}, "issues": {}, "tasks": {},
                   "branches": {}, "policy": {}, "intents": {}, "executions": {}}
    for ev in events:
        p = ev.payload
        if not p or "entity" not in p:
            continue
        entity, eid, snap = p["entity"], p["entity_id"], p["snapshot"]
        if entity == "policy":
            state["policy"] = snap
        else:
            state[entity][eid] = snap
    return state


# --- compressed time scale ----------------------------------------------------

@dataclass
class TimeScale:
    """Strictly monotone piecewise-linear mapping of real time to layout x.

    Gaps larger than the threshold collapse to a fixed visual width and
    get an axis-break mark; everything inside a cluster keeps its true
    proportions (shared scale factor 1).
    """
    segments: list[tuple[float, float, float, float]] = field(default_factory=list)
    # (t_start, t_end, pos_start, rate); rate > 0 keeps the map strictly monotone
    axis_breaks: list[float] = field(default_factory=list)
    origin: float = 0.0

    def map(self, t: float) -> float:
        if not self.segments:
            return t - self.origin
        first = self.segments[0]
        if t <= first[0]:
            return first[2] + (t - first[0])
        for t0, t1, pos0, rate in self.segments:
            if t <= t1:
                return pos0 + (t - t0) * rate
        t0, t1, pos0, rate = self.segments[-1]
        return pos0 + (t1 - t0) * rate + (t - t1)

    def as_dict(self) -> dict:
        return {"segments": [list(s) for s in self.segments],
                "axis_breaks": list(self.axis_breaks)}


def compress_timescale(timestamps: list[float], gap_threshold: float = 30.0,
                       compressed_width: float = 1.0) -> TimeScale:
    if gap_threshold <= 0 or compressed_width <= 0:
        raise ValueError("gap threshold and compressed width must be positive")
    ts = sorted(timestamps)
    scale = TimeScale(origin=ts[0] if ts else 0.0)
    if len(ts) < 2:
        return scale
    pos = 0.0
    for a, b in zip(ts, ts[1:]):
        gap = b - a
        if gap > gap_threshold:
            scale.segments.append((a, b, pos, compressed_width / gap))
            scale.axis_breaks.append(pos + compressed_width / 2)
            pos += compressed_width
        else:
            scale.segments.append((a, b, pos, 1.0))
            pos += gap
    return scale


# --- semantic-zoom view construction -----------------------------------------

ZOOM_LEVELS = ("ZL0", "ZL1", "ZL2", "ZL3")
MINIMAP_BUCKETS = 200


def build_view(log: EventLog, start: float, end: float, zoom: str,
               gap_threshold: float = 30.0, compressed_width: float = 1.0) -> dict:
    """Produce the layout payload for one zoom level over a time range."""
    if zoom not in ZOOM_LEVELS:
        raise ValueError(f"unknown zoom level {zoom!r}")
    all_events = log.events()
    events = [e for e in all_events if start <= e.timestamp <= end]
    actors = {a.id: a for a in log.actors()}

    # Swimlane order: user, nexus, squad leads, then ADU groups by first
    # appearance of the agent type, subdivided by instance.
    lanes: list[str] = []
    seen = set()
    for ev in all_events:
        key = actors[ev.actor].lane_key
        if key not in seen:
            seen.add(key)
            lanes.append(key)

    appearance = {k: i for i, k in enumerate(lanes)}

    def lane_sort(key: str) -> tuple:
        if key == "user":
            return (0,)
        if key == "nexus":
            return (1,)
        if key.startswith("sl:"):
            return (2, key)
        return (3, appearance[key])

    lanes.sort(key=lane_sort)
    lane_index = {k: i for i, k in enumerate(lanes)}

    scale = compress_timescale([e.timestamp for e in events],
                               gap_threshold, compressed_width)

    # Minimap: fixed-resolution event density over the full log range.
    minimap = [0] * MINIMAP_BUCKETS
    if all_events:
        t0 = all_events[0].timestamp
        t1 = max(all_events[-1].timestamp, t0 + 1e-9)
        for e in all_events:
            b = min(int((e.timestamp - t0) / (t1 - t0) * MINIMAP_BUCKETS),
                    MINIMAP_BUCKETS - 1)
            minimap[b] += 1

    payload: dict = {
        "zoom": zoom,
        "lanes": [{"key": k, "index": i, "pinned": True} for k, i in lane_index.items()],
        "time_scale": scale.as_dict(),
        "minimap": minimap,
        "edges": [e.as_dict() for e in log.edges()
                  if any(ev.id == e.src for ev in events)
                  and any(ev.id == e.dst for ev in events)],
    }

    if zoom == "ZL0":
        groups: dict[str, dict] = {}
        for e in events:
            if e.parent_issue is None:
                continue
            g = groups.setdefault(e.parent_issue, {
                "issue": e.parent_issue, "count": 0,
                "start": e.timestamp, "end": e.timestamp})
            g["count"] += 1
            g["start"] = min(g["start"], e.timestamp)
            g["end"] = max(g["end"], e.timestamp)
        payload["nodes"] = sorted(groups.values(), key=lambda g: g["start"])
        return payload

    nodes = []
    for e in events:
        actor = actors[e.actor]
        node: dict = {
            "id": e.id,
            "lane": lane_index[actor.lane_key],
            "x": scale.map(e.timestamp),
            "color": actor.color_key,
            "glyph": "inverted-triangle" if e.kind in _TRIANGLE_KINDS else "circle",
            "kind": e.kind,
        }
        if zoom in ("ZL2", "ZL3"):
            node["card"] = {"actor_name": actor.display_name,
                            "summary": e.summary, "timestamp": e.timestamp}
        if zoom == "ZL3":
            node["pills"] = [{"kind": k, "target": t} for k, t in e.links]
        nodes.append(node)
    payload["nodes"] = nodes
    return payload
