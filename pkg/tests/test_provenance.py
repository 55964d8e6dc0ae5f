"""Event log, replay, compressed time scale, and semantic-zoom views."""

import random

import pytest
from hypothesis import given, strategies as st

from bonsai.provenance import (
    Actor, EventLog, EVENT_KINDS, MINIMAP_BUCKETS, ZOOM_LEVELS,
    build_view, compress_timescale, replay,
)
from .oracles import naive_time_positions


def make_log(clock=None):
    log = EventLog(clock=clock)
    log.register_actor(Actor("user", "user", "User"))
    log.register_actor(Actor("nexus", "nexus", "Nexus"))
    log.register_actor(Actor("sl-7", "squad-lead", "Lead 7"))
    log.register_actor(Actor("adu-backend-1", "adu", "Backend 1",
                             agent_type="backend", instance=1))
    log.register_actor(Actor("adu-frontend-1", "adu", "Frontend 1",
                             agent_type="frontend", instance=1))
    return log


class TestAppend:
    def test_ids_gapless_from_one(self, clock):
        log = make_log(clock)
        ids = [log.record("user", "comment", f"c{i}") for i in range(10)]
        assert ids == list(range(1, 11))
        assert [e.id for e in log.events()] == ids

    def test_unknown_actor_rejected(self, clock):
        log = make_log(clock)
        with pytest.raises(ValueError):
            log.record("ghost", "comment", "x")

    def test_unknown_kind_rejected(self, clock):
        log = make_log(clock)
        with pytest.raises(ValueError):
            log.record("user", "not-a-kind", "x")

    def test_kind_vocabulary_closed(self):
        assert len(EVENT_KINDS) == 16

    def test_edges_must_point_forward(self, clock):
        log = make_log(clock)
        a = log.record("user", "comment", "a")
        b = log.record("user", "comment", "b", edges=[(a, "causal", "follows")])
        assert [(e.src, e.dst) for e in log.edges()] == [(a, b)]
        with pytest.raises(ValueError):
            log.record("user", "comment", "c", edges=[(99, "causal", "")])
        with pytest.raises(ValueError):
            log.record("user", "comment", "c", edges=[(a, "sideways", "")])

    def test_actor_kind_validation(self):
        with pytest.raises(ValueError):
            Actor("x", "robot", "X")


class TestExport:
    def test_jsonl_round_trip(self, clock):
        log = make_log(clock)
        a = log.record("user", "issue-created", "open",
                       parent_issue="issue-1",
                       links=[("branch", "feature/x")],
                       payload={"entity": "issues", "entity_id": "issue-1",
                                "snapshot": {"status": "planning"}})
        log.record("nexus", "comment", "note", edges=[(a, "informational", "re")])
        text = log.export_jsonl()
        assert "#edges" in text
        events, edges = EventLog.parse_jsonl(text)
        assert [e.as_dict() for e in events] == [e.as_dict() for e in log.events()]
        assert [e.as_dict() for e in edges] == [e.as_dict() for e in log.edges()]

    def test_parse_rejects_gapped_log(self, clock):
        log = make_log(clock)
        log.record("user", "comment", "a")
        log.record("user", "comment", "b")
        lines = log.export_jsonl().splitlines()
        del lines[0]  # drop event 1
        with pytest.raises(ValueError):
            EventLog.parse_jsonl("\n".join(lines))


class TestReplay:
    def test_latest_snapshot_wins(self, clock):
        log = make_log(clock)
        log.record("nexus", "issue-created", "open",
                   payload={"entity": "issues", "entity_id": "i1",
                            "snapshot": {"status": "planning"}})
        log.record("nexus", "comment", "transition",
                   payload={"entity": "issues", "entity_id": "i1",
                            "snapshot": {"status": "queued"}})
        log.record("user", "comment", "no state effect")
        state = replay(log.events())
        assert state["issues"] == {"i1": {"status": "queued"}}

    def test_policy_is_singleton(self, clock):
        log = make_log(clock)
        log.record("user", "intervention", "policy",
                   payload={"entity": "policy", "entity_id": "policy",
                            "snapshot": {"concurrency_cap": 3}})
        assert replay(log.events())["policy"] == {"concurrency_cap": 3}

    def test_requires_prefix(self, clock):
        log = make_log(clock)
        log.record("user", "comment", "a")
        log.record("user", "comment", "b")
        with pytest.raises(ValueError):
            replay(log.events()[1:])

    def test_workspace_replay_equals_snapshot(self, ws):
        from bonsai.demo import install_uc1
        install_uc1(ws)
        assert ws.replayed() == ws.snapshot()


class TestTimeScale:
    def test_known_compression(self):
        # Two tight clusters separated by one large gap: the gap collapses
        # to the compressed width and everything else keeps true proportions.
        scale = compress_timescale([0, 1, 2, 100, 101],
                                   gap_threshold=10, compressed_width=5)
        assert [scale.map(t) for t in (0, 1, 2, 100, 101)] == [0, 1, 2, 7, 8]
        assert len(scale.axis_breaks) == 1

    def test_matches_oracle_on_random_inputs(self):
        rng = random.Random(7)
        for _ in range(50):
            ts = sorted(rng.uniform(0, 1000) for _ in range(rng.randint(2, 40)))
            gap = rng.uniform(1, 50)
            width = rng.uniform(0.5, 5)
            scale = compress_timescale(ts, gap, width)
            expected = naive_time_positions(ts, gap, width)
            for t, pos in expected.items():
                assert scale.map(t) == pytest.approx(pos)

    @given(st.lists(st.floats(min_value=0, max_value=1e6,
                              allow_nan=False, allow_infinity=False),
                    min_size=2, max_size=30, unique=True))
    def test_strictly_monotone(self, ts):
        scale = compress_timescale(ts, gap_threshold=30, compressed_width=1)
        ordered = sorted(ts)
        mapped = [scale.map(t) for t in ordered]
        assert all(a < b for a, b in zip(mapped, mapped[1:]))

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            compress_timescale([0, 1], gap_threshold=0)
        with pytest.raises(ValueError):
            compress_timescale([0, 1], compressed_width=0)

    def test_empty_and_singleton(self):
        assert compress_timescale([]).map(5) == 5
        assert compress_timescale([3.0]).map(3.0) == 0


def seeded_view_log(clock):
    log = make_log(clock)
    log.record("user", "issue-created", "open", parent_issue="i1",
               payload={"entity": "issues", "entity_id": "i1",
                        "snapshot": {"status": "planning"}})
    log.record("nexus", "delegated", "plan", parent_issue="i1")
    log.record("sl-7", "spawned", "task", parent_issue="i1")
    log.record("adu-backend-1", "comment", "work", parent_issue="i1")
    log.record("adu-backend-1", "rejected", "failed acceptance", parent_issue="i1")
    log.record("adu-frontend-1", "correction", "redo", parent_issue="i2")
    log.record("adu-backend-1", "merged", "done", parent_issue="i1")
    return log


class TestView:
    def test_zoom_vocabulary(self, clock):
        log = seeded_view_log(clock)
        with pytest.raises(ValueError):
            build_view(log, 0, 100, "ZL4")
        for z in ZOOM_LEVELS:
            assert build_view(log, 0, 100, z)["zoom"] == z

    def test_lane_order_and_pinning(self, clock):
        log = seeded_view_log(clock)
        view = build_view(log, 0, 100, "ZL1")
        keys = [l["key"] for l in sorted(view["lanes"], key=lambda l: l["index"])]
        assert keys == ["user", "nexus", "sl:sl-7",
                        "adu:backend:1", "adu:frontend:1"]
        assert all(l["pinned"] for l in view["lanes"])

    def test_zl0_groups_by_parent_issue(self, clock):
        log = seeded_view_log(clock)
        view = build_view(log, 0, 100, "ZL0")
        assert {g["issue"] for g in view["nodes"]} == {"i1", "i2"}
        by_issue = {g["issue"]: g for g in view["nodes"]}
        assert by_issue["i1"]["count"] == 6
        assert all("lane" not in g for g in view["nodes"])

    def test_zl1_has_glyphs_no_cards(self, clock):
        log = seeded_view_log(clock)
        view = build_view(log, 0, 100, "ZL1")
        glyphs = {n["kind"]: n["glyph"] for n in view["nodes"]}
        assert glyphs["rejected"] == "inverted-triangle"
        assert glyphs["correction"] == "inverted-triangle"
        assert glyphs["merged"] == "circle"
        assert all("card" not in n for n in view["nodes"])

    def test_zl2_cards_and_zl3_pills(self, clock):
        log = make_log(clock)
        log.record("user", "comment", "hello", links=[("workflow", "wf-1")])
        v2 = build_view(log, 0, 100, "ZL2")
        assert v2["nodes"][0]["card"]["summary"] == "hello"
        assert "pills" not in v2["nodes"][0]
        v3 = build_view(log, 0, 100, "ZL3")
        assert v3["nodes"][0]["pills"] == [{"kind": "workflow", "target": "wf-1"}]

    def test_minimap_resolution_and_density(self, clock):
        log = seeded_view_log(clock)
        view = build_view(log, 0, 100, "ZL1")
        assert len(view["minimap"]) == MINIMAP_BUCKETS
        assert sum(view["minimap"]) == len(log)

    def test_range_filter_and_edge_clipping(self, clock):
        log = make_log(clock)
        a = log.record("user", "comment", "a", timestamp=0.0)
        b = log.record("user", "comment", "b", timestamp=10.0,
                       edges=[(a, "causal", "")])
        log.record("user", "comment", "c", timestamp=50.0,
                   edges=[(b, "causal", "")])
        view = build_view(log, 0, 20, "ZL1")
        assert [n["id"] for n in view["nodes"]] == [a, b]
        assert [(e["from"], e["to"]) for e in view["edges"]] == [(a, b)]

    def test_actor_color_stable_across_views(self, clock):
        log = seeded_view_log(clock)
        v1 = build_view(log, 0, 100, "ZL1")
        v2 = build_view(log, 0, 100, "ZL3")
        c1 = {n["id"]: n["color"] for n in v1["nodes"]}
        c2 = {n["id"]: n["color"] for n in v2["nodes"]}
        assert c1 == c2
