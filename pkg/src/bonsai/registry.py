"""Service registry: admission gating, lifecycle, discovery, health, auth.

Contracts arrive as JSON in an OpenAPI-style subset:

    {"name": ..., "version": "1.2.3",
     "paths": {"/embed": {"post": {"request": {...}, "responses": {"200": {...}}}}},
     "health": "/health"}

Request/response schemas map field names to {"type": <primitive>} specs,
optionally nested via {"type": "object", "fields": {...}} and annotated
with "x-parameter": true.
"""

from __future__ import annotations

import enum
import re
import threading
from dataclasses import dataclass, field

from . import ctype as ct
from .errors import (AdmissionError, ConflictError, ContractParseError,
                     InvalidTransitionError, NotFoundError)

TAG_DIMENSIONS = ("jurisdiction", "confidentiality", "runtime", "hardware", "regulatory")

_METHODS = {"get", "post", "put", "delete", "patch"}
_PATH_RE = re.compile(r"^(/[A-Za-z0-9_\-{}.]+)+/?$")
_SEMVER_RE = re.compile(r"^(\d+)\.(\d+)\.(\d+)$")

ADMISSION_RULES = (
    "endpoint-not-restful", "untyped-field", "health-endpoint-missing",
    "invalid-semver", "endpoint-removed", "input-narrowed", "output-narrowed",
    "version-regression",
)


def parse_semver(version: str) -> tuple[int, int, int] | None:
    m = _SEMVER_RE.match(version or "")
    return (int(m.group(1)), int(m.group(2)), int(m.group(3))) if m else None


# --- tags --------------------------------------------------------------------

class TagSet:
    """Set of (dimension, value) labels; immutable, set semantics."""

    __slots__ = ("_labels",)

    def __init__(self, labels=()):
        out = set()
        for item in labels:
            if isinstance(item, str):
                dim, _, value = item.partition(":")
            else:
                dim, value = item
            if dim not in TAG_DIMENSIONS:
                raise ValueError(f"unknown tag dimension {dim!r}")
            if not value:
                raise ValueError(f"empty tag value for dimension {dim!r}")
            out.add((dim, value))
        self._labels = frozenset(out)

    @property
    def labels(self) -> frozenset:
        return self._labels

    def issubset(self, other: "TagSet") -> bool:
        return self._labels <= other._labels

    def __le__(self, other: "TagSet") -> bool:
        return self.issubset(other)

    def __sub__(self, other: "TagSet") -> list[str]:
        return sorted(f"{d}:{v}" for d, v in self._labels - other._labels)

    def __or__(self, other: "TagSet") -> "TagSet":
        return TagSet(sorted(self.as_strings() + other.as_strings()))

    def __eq__(self, other) -> bool:
        return isinstance(other, TagSet) and self._labels == other._labels

    def __hash__(self) -> int:
        return hash(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self):
        return iter(sorted(self._labels))

    def as_strings(self) -> list[str]:
        return sorted(f"{d}:{v}" for d, v in self._labels)

    def __repr__(self) -> str:
        return f"TagSet({self.as_strings()})"


# --- contract documents --------------------------------------------------------

@dataclass(frozen=True)
class EndpointSpec:
    path: str
    method: str
    request: dict
    responses: dict

    def success_response(self) -> dict | None:
        for status in sorted(self.responses):
            if str(status).startswith("2"):
                return self.responses[status]
        return None


@dataclass(frozen=True)
class ServiceContractDocument:
    name: str
    version: str
    endpoints: tuple[EndpointSpec, ...]
    health_path: str | None
    raw: dict = field(compare=False, default_factory=dict)

    def endpoint(self, path: str, method: str) -> EndpointSpec | None:
        for ep in self.endpoints:
            if ep.path == path and ep.method == method.lower():
                return ep
        return None


def parse_contract(doc: dict) -> ServiceContractDocument:
    if not isinstance(doc, dict):
        raise ContractParseError("contract must be a JSON object", detail={"location": "$"})
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise ContractParseError("missing service name", detail={"location": "name"})
    version = doc.get("version")
    if not isinstance(version, str):
        raise ContractParseError("missing version", detail={"location": "version"})
    paths = doc.get("paths")
    if not isinstance(paths, dict):
        raise ContractParseError("missing paths object", detail={"location": "paths"})
    endpoints = []
    for path in sorted(paths):
        methods = paths[path]
        if not isinstance(methods, dict):
            raise ContractParseError(f"malformed path item at {path}",
                                     detail={"location": f"paths.{path}"})
        for method in sorted(methods):
            op = methods[method]
            if not isinstance(op, dict):
                raise ContractParseError(
                    f"malformed operation at {path}.{method}",
                    detail={"location": f"paths.{path}.{method}"})
            endpoints.append(EndpointSpec(
                path=path, method=method.lower(),
                request=op.get("request") or {},
                responses=op.get("responses") or {}))
    return ServiceContractDocument(
        name=name, version=version, endpoints=tuple(endpoints),
        health_path=doc.get("health"), raw=doc)


# --- admission ---------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule: str
    message: str
    location: str

    def as_dict(self) -> dict:
        return {"rule": self.rule, "message": self.message, "location": self.location}


@dataclass
class AdmissionReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def admitted(self) -> bool:
        return not self.violations

    def rule_ids(self) -> set[str]:
        return {v.rule for v in self.violations}

    def as_dict(self) -> dict:
        return {"admitted": self.admitted,
                "violations": [v.as_dict() for v in self.violations]}


def _check_schema_typed(schema: dict, location: str, out: list[Violation]) -> None:
    if not isinstance(schema, dict):
        out.append(Violation("untyped-field", "schema is not an object", location))
        return
    for fname in sorted(schema):
        spec = schema[fname]
        floc = f"{location}.{fname}"
        if not isinstance(spec, dict) or "type" not in spec:
            out.append(Violation("untyped-field", f"field {fname!r} has no type", floc))
            continue
        tname = spec["type"]
        if tname == "object":
            fields = spec.get("fields")
            if not isinstance(fields, dict):
                out.append(Violation("untyped-field",
                                     f"object field {fname!r} has no field schema", floc))
            else:
                _check_schema_typed(fields, floc, out)
        elif ct.parse_primitive(tname) is None:
            out.append(Violation("untyped-field", f"unknown type {tname!r}", floc))


def validate_contract(doc: ServiceContractDocument) -> AdmissionReport:
    """Admission checks: RESTful endpoints, fully typed schemas, health
    endpoint, valid semver.  Every violation is reported, not just the first."""
    violations: list[Violation] = []
    for ep in doc.endpoints:
        loc = f"paths.{ep.path}.{ep.method}"
        if ep.method not in _METHODS or not _PATH_RE.match(ep.path):
            violations.append(Violation(
                "endpoint-not-restful",
                f"{ep.method.upper()} {ep.path} is not a well-formed REST endpoint", loc))
        _check_schema_typed(ep.request, f"{loc}.request", violations)
        success = ep.success_response()
        if success is not None:
            _check_schema_typed(success, f"{loc}.response", violations)
    if not doc.health_path or not _PATH_RE.match(doc.health_path):
        violations.append(Violation(
            "health-endpoint-missing", "contract declares no health endpoint", "health"))
    if parse_semver(doc.version) is None:
        violations.append(Violation(
            "invalid-semver", f"version {doc.version!r} is not major.minor.patch", "version"))
    return AdmissionReport(violations)


def check_backward_compat(old: ServiceContractDocument,
                          new: ServiceContractDocument) -> AdmissionReport:
    """Within a major version: no endpoint removed, inputs not narrowed
    (no new required fields), outputs not narrowed (no removed fields).
    Major bumps skip these checks; version regression always violates."""
    violations: list[Violation] = []
    old_v, new_v = parse_semver(old.version), parse_semver(new.version)
    if old_v is None or new_v is None or new_v < old_v:
        violations.append(Violation(
            "version-regression",
            f"version {new.version!r} does not advance {old.version!r}", "version"))
        return AdmissionReport(violations)
    if new_v[0] != old_v[0]:
        return AdmissionReport(violations)
    scratch = ct.TypeRegistry()
    for ep in old.endpoints:
        loc = f"paths.{ep.path}.{ep.method}"
        new_ep = new.endpoint(ep.path, ep.method)
        if new_ep is None:
            violations.append(Violation(
                "endpoint-removed", f"{ep.method.upper()} {ep.path} removed", loc))
            continue
        try:
            old_in, old_out, _ = ct.derive_endpoint_types(old, ep.path, ep.method, scratch)
            new_in, new_out, _ = ct.derive_endpoint_types(new, ep.path, ep.method, scratch)
        except Exception:
            continue  # typing violations are validate_contract's concern
        res = ct.check_compatible(old_in, new_in, "lenient", scratch)
        if not res.compatible:
            violations.append(Violation(
                "input-narrowed",
                f"new input requires fields old callers do not send: "
                f"{[d.path for d in res.diagnostics]}", loc))
        res = ct.check_compatible(new_out, old_out, "lenient", scratch)
        if not res.compatible:
            violations.append(Violation(
                "output-narrowed",
                f"new output drops fields old callers rely on: "
                f"{[d.path for d in res.diagnostics]}", loc))
    return AdmissionReport(violations)


# --- records and lifecycle ------------------------------------------------------

class ServiceState(enum.Enum):
    PENDING_REVIEW = "PendingReview"
    ACTIVE = "Active"
    REJECTED = "Rejected"
    DEPRECATED = "Deprecated"


_TRANSITIONS = {
    (ServiceState.PENDING_REVIEW, ServiceState.ACTIVE),
    (ServiceState.PENDING_REVIEW, ServiceState.REJECTED),
    (ServiceState.ACTIVE, ServiceState.DEPRECATED),
}


@dataclass
class EndpointTypes:
    input: ct.CType
    output: ct.CType
    parameters: list[tuple[str, ct.PrimitiveType]]


@dataclass
class ServiceRecord:
    id: str
    contract: ServiceContractDocument
    base_endpoint: str
    tags: TagSet
    state: ServiceState
    registered_at: float
    manager: str | None = None
    derived_types: dict[tuple[str, str], EndpointTypes] = field(default_factory=dict)
    health: str = "unknown"  # unknown | healthy | unhealthy

    def project(self) -> dict:
        return {
            "id": self.id, "name": self.contract.name,
            "version": self.contract.version, "state": self.state.value,
            "manager": self.manager, "tags": self.tags.as_strings(),
            "base_endpoint": self.base_endpoint, "health": self.health,
            "registered_at": self.registered_at,
        }


# --- token gateway --------------------------------------------------------------

@dataclass(frozen=True)
class AccessToken:
    token: str
    principal: str
    scopes: frozenset[str]
    expiry: float


class TokenStore:
    def __init__(self):
        self._tokens: dict[str, AccessToken] = {}
        self._lock = threading.Lock()

    def add(self, token: AccessToken) -> None:
        with self._lock:
            self._tokens[token.token] = token

    def get(self, raw: str) -> AccessToken | None:
        return self._tokens.get(raw)


@dataclass(frozen=True)
class AuthDecision:
    allowed: bool
    principal: str | None = None
    reason: str | None = None  # malformed | unknown | expired | forbidden


def authorize(header: str | None, resource: str, store: TokenStore,
              now: float) -> AuthDecision:
    """Stateless bearer-token gate: pure function of (header, store, clock)."""
    if not header or not header.startswith("Bearer ") or not header[7:].strip():
        return AuthDecision(False, reason="malformed")
    raw = header[7:].strip()
    token = store.get(raw)
    if token is None:
        return AuthDecision(False, reason="unknown")
    if now >= token.expiry:
        return AuthDecision(False, reason="expired")
    if resource not in token.scopes:
        return AuthDecision(False, reason="forbidden")
    return AuthDecision(True, principal=token.principal)


# --- the registry ----------------------------------------------------------------

class ServiceRegistry:
    """Shared registry: concurrent reads, linearizable writes.

    Every register/review/deprecate emits exactly one provenance event and
    bumps the transition counter used by the attribution audit.
    """

    def __init__(self, types: ct.TypeRegistry, provenance, clock,
                 health_prober=None, admins: set[str] | None = None):
        self._types = types
        self._provenance = provenance
        self._clock = clock
        self._records: dict[str, ServiceRecord] = {}
        self._lock = threading.Lock()
        self._seq = 0
        self._health_prober = health_prober or _http_health_probe
        self.admins = admins if admins is not None else set()
        self.transitions = 0

    # -- internals ------------------------------------------------------
    def _emit(self, actor: str, kind: str, summary: str, record: ServiceRecord,
              links=None) -> int:
        self.transitions += 1
        return self._provenance.record(
            actor, kind, summary, links=links,
            payload={"entity": "services", "entity_id": record.id,
                     "snapshot": record.project()})

    # -- operations -------------------------------------------------------
    def register_service(self, doc: dict | ServiceContractDocument,
                         base_endpoint: str, tags: TagSet, actor: str) -> ServiceRecord:
        if isinstance(doc, dict):
            doc = parse_contract(doc)
        report = validate_contract(doc)
        if not report.admitted:
            raise AdmissionError("contract failed admission",
                                 detail=report.as_dict())
        with self._lock:
            for rec in self._records.values():
                if (rec.contract.name == doc.name
                        and rec.contract.version == doc.version
                        and rec.state != ServiceState.REJECTED):
                    raise ConflictError(
                        f"service {doc.name} {doc.version} already registered",
                        detail={"id": rec.id})
            self._seq += 1
            sid = f"svc-{self._seq:04d}-{doc.name}"
            derived = {}
            for ep in doc.endpoints:
                inp, outp, params = ct.derive_endpoint_types(
                    doc, ep.path, ep.method, self._types)
                derived[(ep.path, ep.method)] = EndpointTypes(inp, outp, params)
            record = ServiceRecord(
                id=sid, contract=doc, base_endpoint=base_endpoint, tags=tags,
                state=ServiceState.PENDING_REVIEW, registered_at=self._clock(),
                derived_types=derived)
            self._records[sid] = record
        self._emit(actor, "service-registered",
                   f"registered {doc.name} {doc.version} (pending review)", record)
        return record

    def review_service(self, service_id: str, decision: str, manager: str,
                       actor: str) -> ServiceRecord:
        if actor not in self.admins:
            raise InvalidTransitionError(
                f"actor {actor!r} is not an administrator", detail={"actor": actor})
        with self._lock:
            record = self._get(service_id)
            if record.state != ServiceState.PENDING_REVIEW:
                raise InvalidTransitionError(
                    f"cannot review service in state {record.state.value}",
                    detail={"state": record.state.value})
            if decision == "approve":
                record.state = ServiceState.ACTIVE
                record.manager = manager
            elif decision == "reject":
                record.state = ServiceState.REJECTED
            else:
                raise ValueError(f"unknown review decision {decision!r}")
        self._emit(actor, "review",
                   f"{decision}d service {record.contract.name}", record)
        return record

    def deprecate_service(self, service_id: str, actor: str) -> ServiceRecord:
        with self._lock:
            record = self._get(service_id)
            if record.state != ServiceState.ACTIVE:
                raise InvalidTransitionError(
                    f"cannot deprecate service in state {record.state.value}")
            record.state = ServiceState.DEPRECATED
        self._emit(actor, "review", f"deprecated service {record.contract.name}", record)
        return record

    def _get(self, service_id: str) -> ServiceRecord:
        rec = self._records.get(service_id)
        if rec is None:
            raise NotFoundError(f"unknown service {service_id!r}")
        return rec

    def get(self, service_id: str) -> ServiceRecord:
        return self._get(service_id)

    def records(self) -> list[ServiceRecord]:
        with self._lock:
            return list(self._records.values())

    def discover_services(self, text: str | None = None,
                          required_tags: TagSet | None = None,
                          input_shape: ct.CType | None = None,
                          output_shape: ct.CType | None = None) -> list[ServiceRecord]:
        """Only Active records; tag subset match; shape filters use lenient
        compatibility against derived endpoint types; deterministic order."""
        out = []
        for rec in self.records():
            if rec.state != ServiceState.ACTIVE:
                continue
            if text:
                hay = f"{rec.contract.name} {rec.id} " + " ".join(
                    ep.path for ep in rec.contract.endpoints)
                if text.lower() not in hay.lower():
                    continue
            if required_tags is not None and not required_tags.issubset(rec.tags):
                continue
            if input_shape is not None or output_shape is not None:
                ok = False
                for types in rec.derived_types.values():
                    in_ok = input_shape is None or ct.check_compatible(
                        input_shape, types.input, "lenient", self._types).compatible
                    out_ok = output_shape is None or ct.check_compatible(
                        types.output, output_shape, "lenient", self._types).compatible
                    if in_ok and out_ok:
                        ok = True
                        break
                if not ok:
                    continue
            out.append(rec)
        out.sort(key=lambda r: (r.contract.name,
                                tuple(-v for v in parse_semver(r.contract.version) or (0, 0, 0))))
        return out

    def poll_health(self, service_id: str, actor: str) -> str:
        record = self._get(service_id)
        if record.state != ServiceState.ACTIVE:
            raise InvalidTransitionError("health polling requires an Active service")
        healthy = False
        try:
            healthy = bool(self._health_prober(
                record.base_endpoint, record.contract.health_path))
        except Exception:
            healthy = False
        status = "healthy" if healthy else "unhealthy"
        if status != record.health:
            record.health = status
            self._emit(actor, "comment",
                       f"health of {record.contract.name} changed to {status}", record)
        return status

    def snapshot(self) -> dict:
        return {rec.id: rec.project() for rec in self.records()}


def _http_health_probe(base_endpoint: str, health_path: str | None) -> bool:
    import httpx
    try:
        resp = httpx.get(base_endpoint.rstrip("/") + (health_path or "/health"),
                         timeout=2.0)
        return resp.status_code < 400
    except Exception:
        return False
