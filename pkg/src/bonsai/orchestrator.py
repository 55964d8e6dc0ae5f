"""Workflow execution: constraint matching, scheduling, recomputation.

Each run follows an ephemeral dispatch lifecycle: a transient flow
instance is created for the execution, nodes run in dependency order up
to the environment's capacity, logs and outputs are archived to the
artifact store on terminal state, and the instance is destroyed.
"""

from __future__ import annotations

import enum
import json
import secrets
import threading
from dataclasses import dataclass, field

from . import ctype as ct
from . import _expr
from . import workflow as wf
from .errors import (ExpiredTokenError, NotFoundError, TypedInputError,
                     ValidationFailedError)
from .registry import TagSet


@dataclass(frozen=True)
class EnvironmentProfile:
    id: str
    tags: TagSet
    capacity: int = 4
    executor_kind: str = "scripted-stub"  # local-process | http-call | scripted-stub

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("environment capacity must be >= 1")


@dataclass(frozen=True)
class ConstraintDiagnostic:
    unmet: tuple[str, ...]       # required tags the closest environment lacks
    closest_environment: str | None

    def as_dict(self) -> dict:
        return {"unmet": list(self.unmet),
                "closest_environment": self.closest_environment}


def match_constraints(required: TagSet, environments: list[EnvironmentProfile]):
    """Pick an environment whose tags cover the requirement.

    Deterministic tie-break on lexicographic id.  If none qualifies the
    result is a blocking diagnostic naming every unmet tag (relative to
    the closest environment); execution never silently falls back.
    """
    candidates = sorted(environments, key=lambda e: e.id)
    for env in candidates:
        if required.issubset(env.tags):
            return env, None
    best: EnvironmentProfile | None = None
    best_missing: list[str] | None = None
    for env in candidates:
        missing = required - env.tags
        if best_missing is None or len(missing) < len(best_missing):
            best, best_missing = env, missing
    return None, ConstraintDiagnostic(
        unmet=tuple(best_missing or required.as_strings()),
        closest_environment=best.id if best else None)


# --- artifacts ---------------------------------------------------------------

@dataclass(frozen=True)
class ArtifactRef:
    object_id: str
    size: int
    media_type: str
    fetch_token: str
    token_expiry: float

    def as_dict(self) -> dict:
        return {"object_id": self.object_id, "size": self.size,
                "media_type": self.media_type, "fetch_token": self.fetch_token,
                "token_expiry": self.token_expiry}


class ArtifactStore:
    """Immutable object store with expiring fetch tokens."""

    def __init__(self, clock, token_lifetime: float = 900.0):
        self._clock = clock
        self._token_lifetime = token_lifetime
        self._objects: dict[str, tuple[bytes, str]] = {}
        self._tokens: dict[str, tuple[str, float]] = {}
        self._lock = threading.Lock()

    def put(self, content: bytes, media_type: str = "application/octet-stream") -> ArtifactRef:
        with self._lock:
            object_id = secrets.token_hex(16)
            token = secrets.token_hex(16)
            expiry = self._clock() + self._token_lifetime
            self._objects[object_id] = (content, media_type)
            self._tokens[token] = (object_id, expiry)
            return ArtifactRef(object_id, len(content), media_type, token, expiry)

    def fetch(self, object_id: str, token: str) -> bytes:
        with self._lock:
            if object_id not in self._objects:
                raise NotFoundError(f"unknown object {object_id!r}")
            entry = self._tokens.get(token)
            if entry is None or entry[0] != object_id:
                raise ExpiredTokenError("fetch token not valid for this object")
            if self._clock() >= entry[1]:
                raise ExpiredTokenError("fetch token expired")
            return self._objects[object_id][0]


# --- progress feed ----------------------------------------------------------------

PROGRESS_KINDS = ("node-started", "node-succeeded", "node-failed", "execution-terminal")


@dataclass(frozen=True)
class ProgressEvent:
    execution_id: str
    sequence: int
    kind: str
    node: str | None
    timestamp: float
    detail: object = None

    def as_dict(self) -> dict:
        return {"execution_id": self.execution_id, "sequence": self.sequence,
                "kind": self.kind, "node": self.node,
                "timestamp": self.timestamp, "detail": self.detail}


class EventFeed:
    """Single-producer, many-consumer ordered per-execution stream."""

    def __init__(self, execution_id: str, clock):
        self._execution_id = execution_id
        self._clock = clock
        self._events: list[ProgressEvent] = []
        self._cond = threading.Condition()
        self._terminal = False

    def append(self, kind: str, node: str | None = None, detail=None) -> ProgressEvent:
        with self._cond:
            if self._terminal:
                raise ValueError("feed already terminal")
            ev = ProgressEvent(self._execution_id, len(self._events) + 1, kind,
                               node, self._clock(), detail)
            self._events.append(ev)
            if kind == "execution-terminal":
                self._terminal = True
            self._cond.notify_all()
            return ev

    def events(self) -> list[ProgressEvent]:
        with self._cond:
            return list(self._events)

    def subscribe(self, from_sequence: int = 0, timeout: float = 30.0):
        """Yield all events with sequence > from_sequence, then live events
        until the terminal event; reconnecting loses nothing."""
        cursor = from_sequence
        while True:
            with self._cond:
                while len(self._events) <= cursor and not self._terminal:
                    if not self._cond.wait(timeout):
                        return
                batch = self._events[cursor:]
                cursor = len(self._events)
                terminal = self._terminal
            for ev in batch:
                yield ev
            if terminal and cursor >= len(self._events):
                return


# --- execution records ----------------------------------------------------

class ExecStatus(enum.Enum):
    QUEUED = "Queued"
    RUNNING = "Running"
    SUCCEEDED = "Succeeded"
    FAILED = "Failed"
    BLOCKED = "Blocked"

    @property
    def terminal(self) -> bool:
        return self in (ExecStatus.SUCCEEDED, ExecStatus.FAILED, ExecStatus.BLOCKED)


@dataclass
class ExecutionRecord:
    id: str
    workflow_id: str
    revision: int
    status: ExecStatus
    environment: str | None
    inputs: dict
    node_states: dict[str, str] = field(default_factory=dict)
    node_outputs: dict[str, object] = field(default_factory=dict)
    outputs: dict[str, ArtifactRef] = field(default_factory=dict)
    logs: dict[str, str] = field(default_factory=dict)
    launch_order: list[str] = field(default_factory=list)
    node_windows: dict[str, tuple[float, float]] = field(default_factory=dict)
    started_at: float | None = None
    ended_at: float | None = None
    constraint_diagnostic: ConstraintDiagnostic | None = None
    base_execution: str | None = None

    def project(self) -> dict:
        return {"id": self.id, "workflow": self.workflow_id,
                "revision": self.revision, "status": self.status.value}

    def as_dict(self) -> dict:
        return {
            "id": self.id, "workflow": self.workflow_id, "revision": self.revision,
            "status": self.status.value, "environment": self.environment,
            "node_states": dict(self.node_states),
            "outputs": {k: v.as_dict() for k, v in self.outputs.items()},
            "logs": dict(self.logs),
            "started_at": self.started_at, "ended_at": self.ended_at,
            "constraint_diagnostic": (self.constraint_diagnostic.as_dict()
                                      if self.constraint_diagnostic else None),
            "base_execution": self.base_execution,
        }


def check_scalar(prim: ct.PrimitiveType, value) -> bool:
    if prim is ct.PrimitiveType.INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    if prim is ct.PrimitiveType.FLOAT:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if prim is ct.PrimitiveType.STRING:
        return isinstance(value, str)
    if prim is ct.PrimitiveType.BOOLEAN:
        return isinstance(value, bool)
    if prim is ct.PrimitiveType.JSON:
        return True
    if prim is ct.PrimitiveType.FILE_REF:
        return isinstance(value, (str, ArtifactRef))
    return False


class _FlowInstance:
    """Transient per-execution runtime instance (destroyed at terminal)."""

    def __init__(self, execution_id: str):
        self.execution_id = execution_id


class Orchestrator:
    def __init__(self, types: ct.TypeRegistry, registry, environments,
                 artifact_store: ArtifactStore, provenance, clock,
                 default_provider=None):
        self._types = types
        self._registry = registry
        self.environments = list(environments)
        self._store = artifact_store
        self._provenance = provenance
        self._clock = clock
        self._default_provider = default_provider
        self._executions: dict[str, ExecutionRecord] = {}
        self._feeds: dict[str, EventFeed] = {}
        self._threads: dict[str, threading.Thread] = {}
        self._live: dict[str, _FlowInstance] = {}
        self._env_sems = {env.id: threading.Semaphore(env.capacity)
                          for env in self.environments}
        self._lock = threading.Lock()
        self._seq = 0
        # (service id, path, method) -> callable(inputs, params) -> output dict
        self.stub_handlers: dict[tuple[str, str, str], object] = {}
        self.node_timeout = 60.0
        self.transitions = 0

    # -- plumbing -----------------------------------------------------------
    def _emit(self, actor: str, kind: str, summary: str, record: ExecutionRecord):
        self.transitions += 1
        self._provenance.record(
            actor, kind, summary,
            payload={"entity": "executions", "entity_id": record.id,
                     "snapshot": record.project()})

    def _new_id(self) -> str:
        with self._lock:
            self._seq += 1
            return f"exec-{self._seq:04d}"

    def get(self, execution_id: str) -> ExecutionRecord:
        rec = self._executions.get(execution_id)
        if rec is None:
            raise NotFoundError(f"unknown execution {execution_id!r}")
        return rec

    def feed(self, execution_id: str) -> EventFeed:
        feed = self._feeds.get(execution_id)
        if feed is None:
            raise NotFoundError(f"unknown execution {execution_id!r}")
        return feed

    def stream_events(self, execution_id: str, from_sequence: int = 0):
        return self.feed(execution_id).subscribe(from_sequence)

    def live_instance_count(self) -> int:
        return len(self._live)

    def executions(self) -> list[ExecutionRecord]:
        with self._lock:
            return list(self._executions.values())

    def snapshot(self) -> dict:
        return {rec.id: rec.project() for rec in self.executions()}

    # -- dispatch -------------------------------------------------------------
    def dispatch(self, w: wf.WorkflowDef, inputs: dict, files: dict | None = None,
                 actor: str = "user", wait: bool = False) -> str:
        report = wf.validate(w, self._types, self._registry)
        if not report.valid:
            raise ValidationFailedError("workflow failed validation",
                                        detail=report.as_dict())
        all_inputs = dict(inputs)
        for name, ref in (files or {}).items():
            all_inputs[name] = ref
        for name, prim in w.inputs:
            if name not in all_inputs:
                raise TypedInputError(f"missing workflow input {name!r}",
                                      detail={"field": name})
            if not check_scalar(prim, all_inputs[name]):
                raise TypedInputError(
                    f"input {name!r} is not a {prim.value}",
                    detail={"field": name, "expected": prim.value})

        execution_id = self._new_id()
        env, diagnostic = match_constraints(w.required_tags, self.environments)
        record = ExecutionRecord(
            id=execution_id, workflow_id=w.id, revision=w.revision,
            status=ExecStatus.QUEUED, environment=env.id if env else None,
            inputs=all_inputs,
            node_states={n.id: "pending" for n in w.nodes})
        feed = EventFeed(execution_id, self._clock)
        with self._lock:
            self._executions[execution_id] = record
            self._feeds[execution_id] = feed
        self._emit(actor, "execution-dispatched",
                   f"dispatched workflow {w.id} r{w.revision}", record)

        if env is None:
            record.status = ExecStatus.BLOCKED
            record.constraint_diagnostic = diagnostic
            record.ended_at = self._clock()
            feed.append("execution-terminal", detail=diagnostic.as_dict())
            self._emit(actor, "execution-terminal",
                       f"execution {execution_id} blocked: unmet {list(diagnostic.unmet)}",
                       record)
            return execution_id

        instance = _FlowInstance(execution_id)
        self._live[execution_id] = instance
        thread = threading.Thread(
            target=self._run, args=(w, record, feed, env, actor, {}),
            name=f"bonsai-{execution_id}", daemon=True)
        self._threads[execution_id] = thread
        thread.start()
        if wait:
            thread.join()
        return execution_id

    def wait(self, execution_id: str, timeout: float = 30.0) -> ExecutionRecord:
        thread = self._threads.get(execution_id)
        if thread is not None:
            thread.join(timeout)
        return self.get(execution_id)

    # -- recompute --------------------------------------------------------------
    def recompute(self, base_execution_id: str, changed: dict[str, dict],
                  workflow: wf.WorkflowDef, actor: str = "user",
                  wait: bool = False) -> str:
        """Re-execute only changed nodes and their DAG descendants; every
        other node is marked cached with outputs reused by reference from
        the base execution."""
        base = self.get(base_execution_id)
        if base.status != ExecStatus.SUCCEEDED:
            raise ValidationFailedError(
                f"base execution is {base.status.value}, not Succeeded")
        node_ids = {n.id for n in workflow.nodes}
        for nid in changed:
            if nid not in node_ids:
                raise NotFoundError(f"changed node {nid!r} not in workflow")

        dirty = wf.descendants(workflow, set(changed)) if changed else set()
        execution_id = self._new_id()
        env, diagnostic = match_constraints(workflow.required_tags, self.environments)
        record = ExecutionRecord(
            id=execution_id, workflow_id=workflow.id, revision=workflow.revision,
            status=ExecStatus.QUEUED, environment=env.id if env else None,
            inputs=dict(base.inputs),
            node_states={n.id: ("pending" if n.id in dirty else "cached")
                         for n in workflow.nodes},
            base_execution=base_execution_id)
        for nid in node_ids - dirty:
            record.node_outputs[nid] = base.node_outputs.get(nid)  # by reference
        feed = EventFeed(execution_id, self._clock)
        with self._lock:
            self._executions[execution_id] = record
            self._feeds[execution_id] = feed
        self._emit(actor, "execution-dispatched",
                   f"recompute of {base_execution_id}: dirty {sorted(dirty)}", record)
        if env is None:
            record.status = ExecStatus.BLOCKED
            record.constraint_diagnostic = diagnostic
            record.ended_at = self._clock()
            feed.append("execution-terminal", detail=diagnostic.as_dict())
            self._emit(actor, "execution-terminal",
                       f"execution {execution_id} blocked", record)
            return execution_id

        overrides = {nid: dict(params) for nid, params in changed.items()}
        self._live[execution_id] = _FlowInstance(execution_id)
        thread = threading.Thread(
            target=self._run, args=(workflow, record, feed, env, actor, overrides),
            name=f"bonsai-{execution_id}", daemon=True)
        self._threads[execution_id] = thread
        thread.start()
        if wait:
            thread.join()
        return execution_id

    # -- outputs -----------------------------------------------------------------
    def get_outputs(self, execution_id: str) -> dict[str, ArtifactRef]:
        record = self.get(execution_id)
        if record.status != ExecStatus.SUCCEEDED:
            raise ValidationFailedError(
                f"execution is {record.status.value}, not Succeeded")
        return dict(record.outputs)

    def fetch_artifact(self, object_id: str, token: str) -> bytes:
        return self._store.fetch(object_id, token)

    # -- the scheduler --------------------------------------------------------------
    def _run(self, w: wf.WorkflowDef, record: ExecutionRecord, feed: EventFeed,
             env: EnvironmentProfile, actor: str, overrides: dict[str, dict]) -> None:
        record.status = ExecStatus.RUNNING
        record.started_at = self._clock()
        try:
            self._schedule(w, record, feed, env, overrides)
        except Exception as exc:  # defensive: scheduler bugs must still settle
            record.logs["__scheduler__"] = repr(exc)
            record.status = ExecStatus.FAILED
        finally:
            record.ended_at = self._clock()
            # archive logs and outputs, then destroy the transient instance
            if record.status == ExecStatus.SUCCEEDED:
                for node_id, path, exposed in w.outputs:
                    value = self._project(record.node_outputs.get(node_id), path)
                    content = json.dumps(value, sort_keys=True, default=_json_default)
                    record.outputs[exposed] = self._store.put(
                        content.encode(), "application/json")
            log_text = "\n".join(f"[{nid}] {txt}" for nid, txt in
                                 sorted(record.logs.items()))
            self._store.put(log_text.encode(), "text/plain")
            self._live.pop(record.id, None)
            feed.append("execution-terminal", detail=record.status.value)
            self._emit(actor, "execution-terminal",
                       f"execution {record.id} {record.status.value.lower()}", record)

    def _schedule(self, w: wf.WorkflowDef, record: ExecutionRecord,
                  feed: EventFeed, env: EnvironmentProfile,
                  overrides: dict[str, dict]) -> None:
        """Launch nodes in dependency order, concurrently up to capacity."""
        inbound: dict[str, list[wf.Edge]] = {n.id: [] for n in w.nodes}
        for e in w.edges:
            if e.to_node in inbound:
                inbound[e.to_node].append(e)
        cond = threading.Condition()
        states = record.node_states  # pending/running/succeeded/failed/skipped/cached
        untaken: set[tuple[str, str]] = set()  # (node, out port) not taken

        def upstream_settled(nid: str) -> bool:
            return all(e.from_node == wf.INPUTS_NODE
                       or states[e.from_node] in ("succeeded", "cached")
                       for e in inbound[nid])

        def should_skip(nid: str) -> bool:
            for e in inbound[nid]:
                if e.from_node == wf.INPUTS_NODE:
                    continue
                if states[e.from_node] == "skipped":
                    return True
                if (e.from_node, e.from_port) in untaken:
                    return True
            return False

        def run_node(node: wf.Node):
            with self._env_sems[env.id]:
                start = self._clock()
                feed.append("node-started", node.id)
                try:
                    output = self._invoke(w, node, record, env, overrides)
                    with cond:
                        record.node_outputs[node.id] = output
                        if node.kind == "conditional-branch":
                            taken = record.logs.pop(f"__branch__{node.id}", "true")
                            untaken.add((node.id, "false" if taken == "true" else "true"))
                        states[node.id] = "succeeded"
                        record.node_windows[node.id] = (start, self._clock())
                        cond.notify_all()
                    feed.append("node-succeeded", node.id)
                except Exception as exc:
                    with cond:
                        states[node.id] = "failed"
                        record.logs[node.id] = f"failed: {exc}"
                        record.node_windows[node.id] = (start, self._clock())
                        cond.notify_all()
                    feed.append("node-failed", node.id, detail=str(exc))

        threads: list[threading.Thread] = []
        while True:
            with cond:
                progressed = True
                while progressed:
                    progressed = False
                    for n in w.nodes:
                        if states[n.id] == "pending" and upstream_settled(n.id) \
                                and should_skip(n.id):
                            states[n.id] = "skipped"
                            progressed = True
                launchable = [n for n in w.nodes
                              if states[n.id] == "pending" and upstream_settled(n.id)
                              and not should_skip(n.id)]
                failed = any(s == "failed" for s in states.values())
                if failed:
                    # fail-stop: never launch downstream of a failure
                    launchable = []
                running = [nid for nid, s in states.items() if s == "running"]
                if not launchable and not running:
                    break
                if not launchable:
                    cond.wait(self.node_timeout)
                    continue
                for n in launchable:
                    states[n.id] = "running"
                    record.launch_order.append(n.id)
            for n in launchable:
                t = threading.Thread(target=run_node, args=(n,), daemon=True)
                threads.append(t)
                t.start()
        for t in threads:
            t.join(self.node_timeout)

        if any(s == "failed" for s in states.values()):
            record.status = ExecStatus.FAILED
        else:
            record.status = ExecStatus.SUCCEEDED

    # -- node invocation --------------------------------------------------------
    def _port_value(self, record: ExecutionRecord, w: wf.WorkflowDef,
                    edge: wf.Edge):
        if edge.from_node == wf.INPUTS_NODE:
            return record.inputs.get(edge.from_port)
        output = record.node_outputs.get(edge.from_node)
        src = w.node(edge.from_node)
        if src.kind == "conditional-branch":
            return output  # pass-through on either branch port
        if edge.from_port == "out":
            return output
        if isinstance(output, dict):
            return output.get(edge.from_port)
        return output

    @staticmethod
    def _project(value, path: str):
        if path in ("", "out"):
            return value
        cur = value
        for part in path.split("."):
            if part == "out":
                continue
            if isinstance(cur, dict) and part in cur:
                cur = cur[part]
            else:
                return None
        return cur

    def _resolve_params(self, node: wf.Node, record: ExecutionRecord,
                        overrides: dict[str, dict]) -> dict:
        params: dict = {}
        for pname, binding in node.params:
            if binding[0] == "literal":
                params[pname] = binding[1]
            elif binding[0] == "input":
                params[pname] = record.inputs.get(binding[1])
            else:  # deferred
                if pname in record.inputs:
                    params[pname] = record.inputs[pname]
                elif self._default_provider is not None:
                    params[pname] = self._default_provider(node, pname)
                else:
                    raise TypedInputError(
                        f"deferred parameter {pname!r} was not supplied",
                        detail={"field": pname})
        params.update(overrides.get(node.id, {}))
        return params

    def _invoke(self, w: wf.WorkflowDef, node: wf.Node, record: ExecutionRecord,
                env: EnvironmentProfile, overrides: dict[str, dict]):
        values: dict[str, object] = {}
        for e in w.edges:
            if e.to_node == node.id:
                values[e.to_port] = self._port_value(record, w, e)

        if node.kind == "service-call":
            params = self._resolve_params(node, record, overrides)
            payload = {k: v for k, v in values.items()}
            path, method = node.endpoint
            if env.executor_kind == "http-call":
                import httpx
                rec = self._registry.get(node.service)
                url = rec.base_endpoint.rstrip("/") + path
                resp = httpx.request(method.upper(), url,
                                     json={**payload, **params},
                                     timeout=self.node_timeout)
                resp.raise_for_status()
                return resp.json()
            handler = self.stub_handlers.get((node.service, path, method.lower()))
            if handler is None:
                raise NotFoundError(
                    f"no executor bound for {node.service} {method.upper()} {path}")
            return handler(payload, params)

        if node.kind == "conditional-branch":
            value = values.get("in")
            fieldval = value.get(node.predicate_field) if isinstance(value, dict) else None
            taken = bool(_expr.evaluate(node.predicate or "value", {"value": fieldval}))
            record.logs[f"__branch__{node.id}"] = "true" if taken else "false"
            return value

        if node.kind == "parallel-block":
            return values.get("in")

        if node.kind == "adapter":
            src = values.get("in")
            return {target: self._project(src, source_path)
                    for target, source_path in node.mapping}

        if node.kind == "inline-snippet":
            return _expr.evaluate(node.expression or "None", dict(values))

        raise ValueError(f"unknown node kind {node.kind!r}")


def _json_default(obj):
    if isinstance(obj, ArtifactRef):
        return obj.as_dict()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
