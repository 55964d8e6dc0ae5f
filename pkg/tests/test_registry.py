import copy
import random

import pytest

from bonsai import ctype as ct
from bonsai.errors import (AdmissionError, ConflictError, ContractParseError,
                           InvalidTransitionError)
from bonsai.provenance import Actor, EventLog
from bonsai.registry import (AccessToken, ServiceRegistry, ServiceState,
                             TagSet, TokenStore, authorize, check_backward_compat,
                             parse_contract, validate_contract)

from .oracles import naive_semver


def good_contract(name="echo", version="1.0.0"):
    return {
        "name": name, "version": version, "health": "/health",
        "paths": {"/echo": {"post": {
            "request": {"text": {"type": "string"}},
            "responses": {"200": {"text": {"type": "string"}}},
        }}},
    }


def make_registry(clock=None):
    log = EventLog(clock=clock)
    log.register_actor(Actor("user", "user", "User"))
    log.register_actor(Actor("admin", "user", "Admin"))
    types = ct.TypeRegistry()
    reg = ServiceRegistry(types, log, clock or (lambda: 0.0),
                          health_prober=lambda base, path: True,
                          admins={"admin"})
    return reg, log


class TestTagSet:
    def test_unknown_dimension_rejected(self):
        with pytest.raises(ValueError):
            TagSet(("flavor:spicy",))

    def test_subset_and_difference(self):
        small = TagSet(("runtime:python",))
        big = TagSet(("runtime:python", "hardware:gpu"))
        assert small.issubset(big)
        assert not big.issubset(small)
        assert (big - small) == ["hardware:gpu"]

    def test_strings_round_trip_sorted(self):
        tags = TagSet(("runtime:python", "jurisdiction:eu"))
        assert tags.as_strings() == ["jurisdiction:eu", "runtime:python"]
        assert TagSet(tags.as_strings()) == tags


class TestAdmission:
    def test_conformant_contract_admitted(self):
        assert validate_contract(parse_contract(good_contract())).admitted

    def test_missing_health(self):
        doc = good_contract()
        del doc["health"]
        report = validate_contract(parse_contract(doc))
        assert report.rule_ids() == {"health-endpoint-missing"}

    def test_untyped_field(self):
        doc = good_contract()
        doc["paths"]["/echo"]["post"]["request"]["text"] = {}
        report = validate_contract(parse_contract(doc))
        assert report.rule_ids() == {"untyped-field"}

    def test_bad_semver(self):
        doc = good_contract(version="1.0")
        report = validate_contract(parse_contract(doc))
        assert report.rule_ids() == {"invalid-semver"}

    def test_non_restful_endpoint(self):
        doc = good_contract()
        doc["paths"]["bad path!"] = doc["paths"].pop("/echo")
        report = validate_contract(parse_contract(doc))
        assert "endpoint-not-restful" in report.rule_ids()

    def test_all_violations_reported_together(self):
        doc = good_contract(version="nope")
        del doc["health"]
        doc["paths"]["/echo"]["post"]["request"]["text"] = {"type": "mystery"}
        report = validate_contract(parse_contract(doc))
        assert report.rule_ids() == {
            "invalid-semver", "health-endpoint-missing", "untyped-field"}

    def test_malformed_document_location(self):
        with pytest.raises(ContractParseError) as err:
            parse_contract({"name": "x", "version": "1.0.0"})
        assert err.value.detail["location"] == "paths"

    def test_semver_matches_oracle(self):
        rng = random.Random(5)
        samples = ["1.0.0", "0.0.1", "10.20.30", "1.0", "v1.0.0", "1.0.0-rc1",
                   "a.b.c", "1..0", "", "1.2.3.4"]
        samples += [f"{rng.randint(0, 99)}.{rng.randint(0, 99)}.{rng.randint(0, 99)}"
                    for _ in range(20)]
        from bonsai.registry import parse_semver
        for s in samples:
            assert parse_semver(s) == naive_semver(s), s


class TestBackwardCompat:
    def base(self):
        return parse_contract(good_contract(version="1.1.0"))

    def test_endpoint_removed(self):
        new = good_contract(version="1.2.0")
        new["paths"] = {"/other": new["paths"]["/echo"]}
        report = check_backward_compat(self.base(), parse_contract(new))
        assert report.rule_ids() == {"endpoint-removed"}

    def test_input_narrowed_by_new_required_field(self):
        new = good_contract(version="1.2.0")
        new["paths"]["/echo"]["post"]["request"]["lang"] = {"type": "string"}
        report = check_backward_compat(self.base(), parse_contract(new))
        assert report.rule_ids() == {"input-narrowed"}

    def test_output_narrowed_by_removed_field(self):
        old = good_contract(version="1.1.0")
        old["paths"]["/echo"]["post"]["responses"]["200"]["extra"] = {"type": "float"}
        new = good_contract(version="1.2.0")
        report = check_backward_compat(parse_contract(old), parse_contract(new))
        assert report.rule_ids() == {"output-narrowed"}

    def test_version_regression(self):
        new = good_contract(version="1.0.5")
        report = check_backward_compat(self.base(), parse_contract(new))
        assert report.rule_ids() == {"version-regression"}

    def test_major_bump_skips_narrowing_checks(self):
        new = good_contract(version="2.0.0")
        new["paths"] = {"/other": new["paths"]["/echo"]}
        report = check_backward_compat(self.base(), parse_contract(new))
        assert report.admitted

    def test_compatible_minor_bump_admitted(self):
        new = good_contract(version="1.2.0")
        new["paths"]["/echo"]["post"]["responses"]["200"]["extra"] = {"type": "float"}
        report = check_backward_compat(self.base(), parse_contract(new))
        assert report.admitted


class TestLifecycle:
    def test_register_lands_in_pending_review(self):
        reg, _ = make_registry()
        rec = reg.register_service(good_contract(), "http://x", TagSet(), "user")
        assert rec.state is ServiceState.PENDING_REVIEW
        assert rec.derived_types[("/echo", "post")].input.fields

    def test_rejected_contract_never_stored(self):
        reg, _ = make_registry()
        doc = good_contract(version="bad")
        with pytest.raises(AdmissionError):
            reg.register_service(doc, "http://x", TagSet(), "user")
        assert reg.records() == []

    def test_duplicate_name_version_conflict(self):
        reg, _ = make_registry()
        reg.register_service(good_contract(), "http://x", TagSet(), "user")
        with pytest.raises(ConflictError):
            reg.register_service(good_contract(), "http://y", TagSet(), "user")

    def test_approve_requires_admin_and_sets_manager(self):
        reg, _ = make_registry()
        rec = reg.register_service(good_contract(), "http://x", TagSet(), "user")
        with pytest.raises(InvalidTransitionError):
            reg.review_service(rec.id, "approve", manager="m", actor="user")
        reg.review_service(rec.id, "approve", manager="m", actor="admin")
        assert rec.state is ServiceState.ACTIVE and rec.manager == "m"

    def test_no_transition_out_of_rejected(self):
        reg, _ = make_registry()
        rec = reg.register_service(good_contract(), "http://x", TagSet(), "user")
        reg.review_service(rec.id, "reject", manager="m", actor="admin")
        with pytest.raises(InvalidTransitionError):
            reg.review_service(rec.id, "approve", manager="m", actor="admin")
        with pytest.raises(InvalidTransitionError):
            reg.deprecate_service(rec.id, actor="admin")

    def test_only_active_discoverable(self):
        reg, _ = make_registry()
        pending = reg.register_service(good_contract("a"), "http://a", TagSet(), "user")
        active = reg.register_service(good_contract("b"), "http://b", TagSet(), "user")
        reg.review_service(active.id, "approve", manager="m", actor="admin")
        dep = reg.register_service(good_contract("c"), "http://c", TagSet(), "user")
        reg.review_service(dep.id, "approve", manager="m", actor="admin")
        reg.deprecate_service(dep.id, actor="admin")
        assert [r.id for r in reg.discover_services()] == [active.id]
        assert pending.state is ServiceState.PENDING_REVIEW

    def test_discovery_filters(self):
        reg, _ = make_registry()
        rec = reg.register_service(
            good_contract(), "http://x",
            TagSet(("runtime:python", "jurisdiction:eu")), "user")
        reg.review_service(rec.id, "approve", manager="m", actor="admin")
        assert reg.discover_services(text="echo")
        assert not reg.discover_services(text="nonexistent")
        assert reg.discover_services(required_tags=TagSet(("runtime:python",)))
        assert not reg.discover_services(required_tags=TagSet(("hardware:gpu",)))
        types = ct.TypeRegistry()
        shape = ct.CType("q", (("text", ct.PrimitiveType.STRING),))
        types.add(shape)
        assert reg.discover_services(input_shape=shape)

    def test_every_transition_emits_one_event(self):
        reg, log = make_registry()
        rec = reg.register_service(good_contract(), "http://x", TagSet(), "user")
        reg.review_service(rec.id, "approve", manager="m", actor="admin")
        reg.deprecate_service(rec.id, actor="admin")
        assert reg.transitions == 3 == len(log)

    def test_health_poll_transitions_emit_events(self):
        calls = {"n": 0}

        def prober(base, path):
            calls["n"] += 1
            return calls["n"] == 1

        log = EventLog(clock=lambda: 0.0)
        log.register_actor(Actor("user", "user", "User"))
        log.register_actor(Actor("admin", "user", "Admin"))
        reg = ServiceRegistry(ct.TypeRegistry(), log, lambda: 0.0,
                              health_prober=prober, admins={"admin"})
        rec = reg.register_service(good_contract(), "http://x", TagSet(), "user")
        reg.review_service(rec.id, "approve", manager="m", actor="admin")
        before = len(log)
        assert reg.poll_health(rec.id, actor="user") == "healthy"
        assert reg.poll_health(rec.id, actor="user") == "unhealthy"
        assert reg.poll_health(rec.id, actor="user") == "unhealthy"  # no change
        assert len(log) == before + 2


class TestAuthorize:
    def setup_method(self):
        self.store = TokenStore()
        self.store.add(AccessToken("tok", "alice", frozenset({"read"}), expiry=100.0))

    def test_allowed(self):
        d = authorize("Bearer tok", "read", self.store, now=10.0)
        assert d.allowed and d.principal == "alice"

    def test_denials(self):
        assert authorize(None, "read", self.store, 10.0).reason == "malformed"
        assert authorize("Token tok", "read", self.store, 10.0).reason == "malformed"
        assert authorize("Bearer ", "read", self.store, 10.0).reason == "malformed"
        assert authorize("Bearer nope", "read", self.store, 10.0).reason == "unknown"
        assert authorize("Bearer tok", "read", self.store, 100.0).reason == "expired"
        assert authorize("Bearer tok", "write", self.store, 10.0).reason == "forbidden"

    def test_pure_function_of_inputs(self):
        a = authorize("Bearer tok", "read", self.store, 10.0)
        b = authorize("Bearer tok", "read", self.store, 10.0)
        assert a == b
