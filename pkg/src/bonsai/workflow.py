"""Workflow model: typed DAGs, design-time validation, canonical YAML.

A workflow is an immutable value after parse/validate.  The pseudo-node
``$inputs`` exposes the declared workflow inputs as output ports so that
node wiring is uniform.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

import yaml

from . import ctype as ct
from . import _expr
from .errors import (MappingError, NotFoundError, RevisionConflictError,
                     ValidationFailedError, WorkflowParseError)
from .registry import ServiceRegistry, ServiceState, TagSet

INPUTS_NODE = "$inputs"

NODE_KINDS = ("service-call", "conditional-branch", "parallel-block",
              "adapter", "inline-snippet")

# Parameter binding: ("literal", value) | ("input", name) | ("deferred",)
Binding = tuple


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    service: str | None = None
    endpoint: tuple[str, str] | None = None          # (path, method)
    predicate_field: str | None = None               # conditional-branch
    predicate: str | None = None                     # expression over `value`
    children: tuple[str, ...] = ()                   # parallel-block
    mapping: tuple[tuple[str, str], ...] = ()        # adapter: (target field, source path)
    target_type: str | None = None                   # adapter output CType name
    expression: str | None = None                    # inline-snippet
    snippet_inputs: tuple[tuple[str, str], ...] = () # (port, type descriptor)
    snippet_output: str | None = None                # type descriptor
    params: tuple[tuple[str, Binding], ...] = ()

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if self.id == INPUTS_NODE:
            raise ValueError(f"{INPUTS_NODE} is a reserved node id")

    def param_map(self) -> dict[str, Binding]:
        return dict(self.params)


@dataclass(frozen=True)
class Edge:
    from_node: str
    from_port: str
    to_node: str
    to_port: str

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise ValueError(f"self-loop on node {self.from_node!r}")

    @property
    def location(self) -> str:
        return f"{self.from_node}.{self.from_port}->{self.to_node}.{self.to_port}"


@dataclass(frozen=True)
class WorkflowDef:
    id: str
    name: str
    revision: int
    inputs: tuple[tuple[str, ct.PrimitiveType], ...]
    required_tags: TagSet
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    outputs: tuple[tuple[str, str, str], ...]  # (node id, output path, exposed name)
    validation_mode: str = "exact"

    def __post_init__(self):
        if self.validation_mode not in ("exact", "lenient"):
            raise ValueError(f"unknown validation mode {self.validation_mode!r}")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        known = set(ids) | {INPUTS_NODE}
        inbound: set[tuple[str, str]] = set()
        for e in self.edges:
            if e.from_node not in known or e.to_node not in known:
                raise ValueError(f"edge {e.location} references an unknown node")
            if (e.to_node, e.to_port) in inbound:
                raise ValueError(
                    f"input port {e.to_node}.{e.to_port} has multiple inbound edges")
            inbound.add((e.to_node, e.to_port))
        # canonical internal order
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(sorted(
            self.edges, key=lambda e: (e.from_node, e.from_port, e.to_node, e.to_port))))
        object.__setattr__(self, "inputs", tuple(sorted(self.inputs)))
        object.__setattr__(self, "outputs", tuple(sorted(self.outputs)))

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise NotFoundError(f"unknown node {node_id!r}")

    def input_map(self) -> dict[str, ct.PrimitiveType]:
        return dict(self.inputs)


@dataclass(frozen=True)
class ValidationError:
    kind: str      # cycle | type-mismatch | unbound-input | unknown-service
                   # | unbound-parameter | tag-undeclared
    location: str  # node or edge id
    detail: object = None

    def as_dict(self) -> dict:
        detail = self.detail
        if isinstance(detail, ct.CompatibilityResult):
            detail = detail.as_dict()
        return {"kind": self.kind, "location": self.location, "detail": detail}


@dataclass
class ValidationReport:
    errors: list[ValidationError] = field(default_factory=list)
    warnings: list[ValidationError] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.errors

    def as_dict(self) -> dict:
        return {"valid": self.valid,
                "errors": [e.as_dict() for e in self.errors],
                "warnings": [w.as_dict() for w in self.warnings]}


# --- graph helpers ------------------------------------------------------------

def topo_order(w: WorkflowDef) -> list[str] | None:
    """Topological order over real nodes, or None if the edge set is cyclic."""
    nodes = [n.id for n in w.nodes]
    succ: dict[str, list[str]] = {n: [] for n in nodes}
    indeg = {n: 0 for n in nodes}
    for e in w.edges:
        if e.from_node == INPUTS_NODE:
            continue
        succ[e.from_node].append(e.to_node)
        indeg[e.to_node] += 1
    ready = sorted(n for n in nodes if indeg[n] == 0)
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for m in sorted(set(succ[n])):
            indeg[m] -= len([x for x in succ[n] if x == m])
            succ[n] = [x for x in succ[n] if x != m]
            if indeg[m] == 0:
                ready.append(m)
        ready.sort()
    return order if len(order) == len(nodes) else None


def descendants(w: WorkflowDef, roots: set[str]) -> set[str]:
    succ: dict[str, set[str]] = {}
    for e in w.edges:
        succ.setdefault(e.from_node, set()).add(e.to_node)
    out = set(roots)
    frontier = list(roots)
    while frontier:
        n = frontier.pop()
        for m in succ.get(n, ()):
            if m not in out:
                out.add(m)
                frontier.append(m)
    return out


# --- port typing ----------------------------------------------------------------

def _descriptor_tree(desc: str, types: ct.TypeRegistry):
    prim = ct.parse_primitive(desc)
    if prim is not None:
        return prim
    return ct.expand(types.get(desc), types)


def resolve_ports(w: WorkflowDef, types: ct.TypeRegistry, registry: ServiceRegistry):
    """Resolve in/out port types for every node.

    Returns (in_ports, out_ports, problems): port maps node id -> port ->
    expanded tree or primitive (None where unresolvable); problems is a
    list of ValidationError for unknown services/ports.  Pass-through
    nodes take their output type from their resolved input.
    """
    in_ports: dict[str, dict] = {INPUTS_NODE: {}}
    out_ports: dict[str, dict] = {
        INPUTS_NODE: {name: prim for name, prim in w.inputs}}
    problems: list[ValidationError] = []
    incoming: dict[str, dict[str, Edge]] = {}
    for e in w.edges:
        incoming.setdefault(e.to_node, {})[e.to_port] = e

    order = topo_order(w)
    node_ids = order if order is not None else [n.id for n in w.nodes]

    for nid in node_ids:
        node = w.node(nid)
        ins: dict[str, object] = {}
        outs: dict[str, object] = {}
        if node.kind == "service-call":
            rec = None
            try:
                rec = registry.get(node.service)
            except NotFoundError:
                pass
            if rec is None or rec.state != ServiceState.ACTIVE:
                problems.append(ValidationError(
                    "unknown-service", nid,
                    f"service {node.service!r} is not an Active registry service"))
            else:
                et = rec.derived_types.get((node.endpoint[0], node.endpoint[1].lower()))
                if et is None:
                    problems.append(ValidationError(
                        "unknown-service", nid,
                        f"service {node.service!r} has no endpoint "
                        f"{node.endpoint[1].upper()} {node.endpoint[0]}"))
                else:
                    for fname, ftype in et.input.fields:
                        ins[fname] = ct.expand(ftype, types)
                    out_tree = ct.expand(et.output, types)
                    outs["out"] = out_tree
                    if isinstance(out_tree, dict):
                        for fname, sub in out_tree.items():
                            outs[fname] = sub
        elif node.kind in ("conditional-branch", "parallel-block", "adapter"):
            src_type = None
            edge = incoming.get(nid, {}).get("in")
            if edge is not None:
                src_type = out_ports.get(edge.from_node, {}).get(edge.from_port)
            ins["in"] = src_type
            if node.kind == "conditional-branch":
                outs["true"] = src_type
                outs["false"] = src_type
            elif node.kind == "parallel-block":
                outs["out"] = src_type
            else:  # adapter: output is the captured target type
                try:
                    outs["out"] = _descriptor_tree(node.target_type, types) \
                        if node.target_type else None
                except Exception:
                    outs["out"] = None
        elif node.kind == "inline-snippet":
            for port, desc in node.snippet_inputs:
                try:
                    ins[port] = _descriptor_tree(desc, types)
                except Exception:
                    ins[port] = None
            try:
                outs["out"] = _descriptor_tree(node.snippet_output, types) \
                    if node.snippet_output else None
            except Exception:
                outs["out"] = None
        in_ports[nid] = ins
        out_ports[nid] = outs
    return in_ports, out_ports, problems


# --- validation -----------------------------------------------------------------

def _lookup_path(tree, path: str):
    cur = tree
    for part in path.split("."):
        if part == "out":
            continue
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def validate(w: WorkflowDef, types: ct.TypeRegistry,
             registry: ServiceRegistry) -> ValidationReport:
    """Design-time validation; reports every problem, not just the first."""
    report = ValidationReport()

    if topo_order(w) is None:
        report.errors.append(ValidationError("cycle", w.id, "workflow graph is cyclic"))

    in_ports, out_ports, problems = resolve_ports(w, types, registry)
    report.errors.extend(problems)

    incoming: dict[tuple[str, str], Edge] = {}
    for e in w.edges:
        incoming[(e.to_node, e.to_port)] = e

    for e in w.edges:
        src_ports = out_ports.get(e.from_node, {})
        if e.from_port not in src_ports:
            report.errors.append(ValidationError(
                "type-mismatch", e.location,
                f"source node has no output port {e.from_port!r}"))
            continue
        dst_ports = in_ports.get(e.to_node, {})
        if e.to_port not in dst_ports:
            report.errors.append(ValidationError(
                "type-mismatch", e.location,
                f"target node has no input port {e.to_port!r}"))
            continue
        src_t, dst_t = src_ports[e.from_port], dst_ports[e.to_port]
        if src_t is None or dst_t is None:
            continue  # unresolvable upstream; already reported
        to_node = w.node(e.to_node)
        if to_node.kind == "adapter":
            # mapping sources must exist in the incoming type with the
            # exact type the target field expects
            target_tree = out_ports[e.to_node].get("out")
            if target_tree is None:
                continue
            for target_field, source_path in to_node.mapping:
                want = _lookup_path(target_tree, target_field)
                got = _lookup_path(src_t, source_path)
                if got is None:
                    report.errors.append(ValidationError(
                        "type-mismatch", e.location,
                        f"adapter source path {source_path!r} not found upstream"))
                elif ct.compare_trees(got, want, "exact").diagnostics:
                    report.errors.append(ValidationError(
                        "type-mismatch", e.location,
                        ct.compare_trees(got, want, "exact")))
            continue
        if to_node.kind == "conditional-branch":
            if not isinstance(src_t, dict) or to_node.predicate_field not in src_t:
                report.errors.append(ValidationError(
                    "type-mismatch", e.location,
                    f"predicate field {to_node.predicate_field!r} missing upstream"))
            continue
        result = ct.compare_trees(src_t, dst_t, w.validation_mode)
        if not result.compatible:
            report.errors.append(ValidationError("type-mismatch", e.location, result))

    # every non-parameter input port wired
    for node in w.nodes:
        for port in in_ports.get(node.id, {}):
            if (node.id, port) not in incoming:
                report.errors.append(ValidationError(
                    "unbound-input", node.id, f"input port {port!r} is not wired"))
        # redundant adapter warning
        if node.kind == "adapter":
            edge = incoming.get((node.id, "in"))
            if edge is not None:
                src_t = out_ports.get(edge.from_node, {}).get(edge.from_port)
                tgt_t = out_ports.get(node.id, {}).get("out")
                if src_t is not None and tgt_t is not None \
                        and ct.compare_trees(src_t, tgt_t, "exact").compatible:
                    report.warnings.append(ValidationError(
                        "redundant-adapter", node.id,
                        "adapter input and output types already match"))

    # parameters bound
    input_names = {name for name, _ in w.inputs}
    for node in w.nodes:
        if node.kind != "service-call":
            continue
        try:
            rec = registry.get(node.service)
            et = rec.derived_types.get((node.endpoint[0], node.endpoint[1].lower()))
        except NotFoundError:
            et = None
        if et is None:
            continue
        bound = node.param_map()
        for pname, _ptype in et.parameters:
            binding = bound.get(pname)
            if binding is None:
                report.errors.append(ValidationError(
                    "unbound-parameter", node.id,
                    f"parameter {pname!r} has no binding"))
            elif binding[0] == "input" and binding[1] not in input_names:
                report.errors.append(ValidationError(
                    "unbound-parameter", node.id,
                    f"parameter {pname!r} bound to unknown workflow input {binding[1]!r}"))
        # tag declarations
        if not rec.tags.issubset(w.required_tags):
            report.errors.append(ValidationError(
                "tag-undeclared", node.id,
                f"service tags not declared by workflow: {rec.tags - w.required_tags}"))
    return report


# --- adapter insertion --------------------------------------------------------------

def ctype_from_tree(name: str, tree, types: ct.TypeRegistry) -> ct.CType:
    """Materialize CType definitions for an expanded tree."""
    fields = []
    for fname in sorted(tree):
        sub = tree[fname]
        if isinstance(sub, dict):
            child = ctype_from_tree(f"{name}__{fname}", sub, types)
            fields.append((fname, child.name))
        else:
            fields.append((fname, sub))
    out = ct.CType(name, tuple(fields))
    types.add(out)
    return out


def insert_adapter(w: WorkflowDef, edge: Edge, mapping: dict[str, str],
                   types: ct.TypeRegistry, registry: ServiceRegistry) -> WorkflowDef:
    """Replace `edge` with source -> adapter -> target using `mapping`
    (target field -> source path).  The mapping must cover every target
    field; the new edges then validate by construction."""
    if edge not in w.edges:
        raise NotFoundError(f"edge {edge.location} not in workflow")
    _, out_ports, _ = resolve_ports(w, types, registry)
    in_ports, _, _ = resolve_ports(w, types, registry)
    target_tree = in_ports[edge.to_node].get(edge.to_port)
    if not isinstance(target_tree, dict):
        raise MappingError("target port is not a structured type",
                           detail={"port": edge.to_port})
    missing = sorted(set(target_tree) - set(mapping))
    if missing:
        raise MappingError("mapping does not cover every target field",
                           detail={"uncovered": missing})
    adapter_id = f"adapter-{edge.to_node}-{edge.to_port}"
    taken = {n.id for n in w.nodes}
    suffix = 2
    while adapter_id in taken:
        adapter_id = f"adapter-{edge.to_node}-{edge.to_port}-{suffix}"
        suffix += 1
    type_name = f"{w.id}__{adapter_id}"
    ctype_from_tree(type_name, target_tree, types)
    adapter = Node(id=adapter_id, kind="adapter",
                   mapping=tuple(sorted(mapping.items())), target_type=type_name)
    new_edges = [e for e in w.edges if e != edge]
    new_edges.append(Edge(edge.from_node, edge.from_port, adapter_id, "in"))
    new_edges.append(Edge(adapter_id, "out", edge.to_node, edge.to_port))
    # Revision is untouched: it marks the base the edit applies to and the
    # store assigns the next number on save.
    return replace(w, nodes=w.nodes + (adapter,), edges=tuple(new_edges))


# --- canonical serialization -----------------------------------------------------

_BINDING_KINDS = ("literal", "input", "deferred")
_WF_KEYS = {"id", "name", "revision", "inputs", "required_tags", "nodes",
            "edges", "outputs", "validation_mode"}
_NODE_KEYS = {"id", "kind", "service", "endpoint", "predicate_field", "predicate",
              "children", "mapping", "target_type", "expression",
              "snippet_inputs", "snippet_output", "params"}


def _binding_to_obj(binding: Binding) -> dict:
    if binding[0] == "deferred":
        return {"kind": "deferred"}
    return {"kind": binding[0], "value": binding[1]}


def _binding_from_obj(obj: dict, where: str) -> Binding:
    kind = obj.get("kind")
    if kind == "deferred":
        return ("deferred",)
    if kind in ("literal", "input") and "value" in obj:
        return (kind, obj["value"])
    raise WorkflowParseError(f"malformed parameter binding at {where}")


def serialize(w: WorkflowDef) -> str:
    """Canonical YAML: sorted keys, sorted nodes/edges, explicit defaults."""
    doc = {
        "id": w.id,
        "name": w.name,
        "revision": w.revision,
        "validation_mode": w.validation_mode,
        "inputs": [{"name": n, "type": t.value} for n, t in w.inputs],
        "required_tags": w.required_tags.as_strings(),
        "nodes": [],
        "edges": [{"from": f"{e.from_node}.{e.from_port}",
                   "to": f"{e.to_node}.{e.to_port}"} for e in w.edges],
        "outputs": [{"node": n, "path": p, "name": x} for n, p, x in w.outputs],
    }
    for node in w.nodes:
        nd = {
            "id": node.id, "kind": node.kind,
            "service": node.service,
            "endpoint": list(node.endpoint) if node.endpoint else None,
            "predicate_field": node.predicate_field,
            "predicate": node.predicate,
            "children": list(node.children),
            "mapping": {t: s for t, s in node.mapping},
            "target_type": node.target_type,
            "expression": node.expression,
            "snippet_inputs": {p: d for p, d in node.snippet_inputs},
            "snippet_output": node.snippet_output,
            "params": {name: _binding_to_obj(b) for name, b in node.params},
        }
        doc["nodes"].append(nd)
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=False)


def parse(text: str) -> WorkflowDef:
    """Parse canonical workflow YAML; rejects unknown keys."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise WorkflowParseError(
            f"syntax error: {exc}",
            detail={"line": mark.line + 1 if mark else None,
                    "column": mark.column + 1 if mark else None})
    if not isinstance(doc, dict):
        raise WorkflowParseError("workflow document must be a mapping")
    unknown = set(doc) - _WF_KEYS
    if unknown:
        raise WorkflowParseError(f"unknown keys: {sorted(unknown)}",
                                 detail={"path": sorted(unknown)})
    try:
        inputs = tuple((i["name"], ct.parse_primitive(i["type"]))
                       for i in doc.get("inputs") or ())
        if any(t is None for _, t in inputs):
            raise WorkflowParseError("unknown primitive type in workflow inputs")
        nodes = []
        for nd in doc.get("nodes") or ():
            bad = set(nd) - _NODE_KEYS
            if bad:
                raise WorkflowParseError(
                    f"unknown node keys: {sorted(bad)}",
                    detail={"path": f"nodes.{nd.get('id')}"})
            if nd.get("kind") not in NODE_KINDS:
                raise WorkflowParseError(
                    f"unknown node kind {nd.get('kind')!r}",
                    detail={"path": f"nodes.{nd.get('id')}.kind"})
            nodes.append(Node(
                id=nd["id"], kind=nd["kind"],
                service=nd.get("service"),
                endpoint=tuple(nd["endpoint"]) if nd.get("endpoint") else None,
                predicate_field=nd.get("predicate_field"),
                predicate=nd.get("predicate"),
                children=tuple(nd.get("children") or ()),
                mapping=tuple(sorted((nd.get("mapping") or {}).items())),
                target_type=nd.get("target_type"),
                expression=nd.get("expression"),
                snippet_inputs=tuple(sorted((nd.get("snippet_inputs") or {}).items())),
                snippet_output=nd.get("snippet_output"),
                params=tuple(sorted(
                    (name, _binding_from_obj(obj, f"nodes.{nd['id']}.params.{name}"))
                    for name, obj in (nd.get("params") or {}).items())),
            ))
        edges = []
        for ed in doc.get("edges") or ():
            src, dst = ed["from"], ed["to"]
            fn, _, fp = src.rpartition(".")
            tn, _, tp = dst.rpartition(".")
            if not fn or not tn:
                raise WorkflowParseError(f"malformed edge endpoint {src!r} -> {dst!r}")
            edges.append(Edge(fn, fp, tn, tp))
        outputs = tuple((o["node"], o["path"], o["name"])
                        for o in doc.get("outputs") or ())
        return WorkflowDef(
            id=doc["id"], name=doc["name"], revision=int(doc.get("revision", 0)),
            inputs=inputs, required_tags=TagSet(doc.get("required_tags") or ()),
            nodes=tuple(nodes), edges=tuple(edges), outputs=outputs,
            validation_mode=doc.get("validation_mode", "exact"))
    except WorkflowParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise WorkflowParseError(f"malformed workflow document: {exc}")


# --- revision store ---------------------------------------------------------------

class WorkflowStore:
    """Immutable revision store; writes serialized per workflow id."""

    def __init__(self, types: ct.TypeRegistry, registry: ServiceRegistry, provenance):
        self._types = types
        self._registry = registry
        self._provenance = provenance
        self._revisions: dict[str, list[WorkflowDef]] = {}
        self._lock = threading.Lock()
        self.transitions = 0

    def store_revision(self, w: WorkflowDef, actor: str, draft: bool = False) -> int:
        if not draft:
            report = validate(w, self._types, self._registry)
            if not report.valid:
                raise ValidationFailedError("workflow failed validation",
                                            detail=report.as_dict())
        with self._lock:
            revisions = self._revisions.setdefault(w.id, [])
            head = revisions[-1].revision if revisions else 0
            if w.revision != head:
                raise RevisionConflictError(
                    f"save based on revision {w.revision} but head is {head}; rebase",
                    detail={"base": w.revision, "head": head})
            stored = replace(w, revision=head + 1)
            revisions.append(stored)
            self.transitions += 1
        self._provenance.record(
            actor, "workflow-saved", f"saved workflow {w.id} revision {stored.revision}",
            payload={"entity": "workflows", "entity_id": w.id,
                     "snapshot": {"id": w.id, "name": w.name,
                                  "head_revision": stored.revision}})
        return stored.revision

    def get(self, workflow_id: str, revision: int | None = None) -> WorkflowDef:
        revisions = self._revisions.get(workflow_id)
        if not revisions:
            raise NotFoundError(f"unknown workflow {workflow_id!r}")
        if revision is None:
            return revisions[-1]
        for w in revisions:
            if w.revision == revision:
                return w
        raise NotFoundError(f"workflow {workflow_id!r} has no revision {revision}")

    def list(self) -> list[WorkflowDef]:
        with self._lock:
            return [revs[-1] for revs in self._revisions.values()]

    def snapshot(self) -> dict:
        with self._lock:
            return {wid: {"id": wid, "name": revs[-1].name,
                          "head_revision": revs[-1].revision}
                    for wid, revs in self._revisions.items()}
