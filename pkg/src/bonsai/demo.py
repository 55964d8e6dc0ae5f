"""Scripted demo scenarios over deterministic stub services.

Two scenarios ship with the workspace:

* a four-stage text-to-colors pipeline (keyword extraction, embedding,
  projection, colormap) whose embedding -> projection edge has a
  field-level mismatch that an adapter resolves, and
* a seven-capability build-out that exercises the governed
  decompose/spawn/merge loop starting from an empty registry.

Every handler is a pure function, so executions are reproducible.
"""

from __future__ import annotations

from . import ctype as ct
from .governance import ChildSpec
from .registry import TagSet
from .workflow import Edge, Node, WorkflowDef

DEMO_TAGS = ("confidentiality:internal", "jurisdiction:eu", "runtime:python")


def _contract(name: str, version: str, path: str, request: dict,
              response: dict) -> dict:
    return {
        "name": name,
        "version": version,
        "health": "/health",
        "paths": {path: {"post": {"request": request,
                                  "responses": {"200": response}}}},
    }


def uc1_contracts() -> dict[str, dict]:
    return {
        "keyword-extraction": _contract(
            "keyword-extraction", "1.0.0", "/keywords",
            request={"text": {"type": "string"},
                     "max_keywords": {"type": "integer", "x-parameter": True}},
            response={"keywords": {"type": "json"}}),
        "embedding": _contract(
            "embedding", "1.2.0", "/embed",
            request={"keywords": {"type": "json"}},
            response={"vectors": {"type": "json"},
                      "dims": {"type": "integer"}}),
        "projection": _contract(
            "projection", "2.0.1", "/project",
            request={"matrix": {"type": "object",
                                "fields": {"values": {"type": "json"},
                                           "dims": {"type": "integer"}}},
                     "n_components": {"type": "integer", "x-parameter": True}},
            response={"coords": {"type": "json"}}),
        "colormap": _contract(
            "colormap", "1.0.3", "/colorize",
            request={"coords": {"type": "json"}},
            response={"colors": {"type": "json"}}),
    }


# -- stub behaviors ------------------------------------------------------------

def _extract(inputs: dict, params: dict) -> dict:
    words = [w.strip(".,;:!?").lower() for w in str(inputs.get("text", "")).split()]
    words = [w for w in words if w]
    counts: dict[str, int] = {}
    for w in words:
        counts[w] = counts.get(w, 0) + 1
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    return {"keywords": ranked[: int(params.get("max_keywords", 10))]}


def _embed(inputs: dict, params: dict) -> dict:
    vectors = [[len(w), sum(ord(c) for c in w) % 97]
               for w in inputs.get("keywords") or []]
    return {"vectors": vectors, "dims": 2}


def _project(inputs: dict, params: dict) -> dict:
    matrix = inputs.get("matrix") or {}
    n = int(params.get("n_components", 2))
    coords = [[round(v / 100.0, 4) for v in row[:n]]
              for row in matrix.get("values") or []]
    return {"coords": coords}


def _colorize(inputs: dict, params: dict) -> dict:
    colors = []
    for row in inputs.get("coords") or []:
        r = int(abs(row[0]) * 2550) % 256 if row else 0
        g = int(abs(row[1]) * 2550) % 256 if len(row) > 1 else 0
        colors.append(f"#{r:02x}{g:02x}80")
    return {"colors": colors}


UC1_HANDLERS = {
    ("keyword-extraction", "/keywords"): _extract,
    ("embedding", "/embed"): _embed,
    ("projection", "/project"): _project,
    ("colormap", "/colorize"): _colorize,
}


def install_uc1(ws, actor: str = "user", reviewer: str = "admin") -> dict[str, str]:
    """Register, approve, and bind stubs for the four pipeline services.

    Returns contract name -> service id."""
    ids: dict[str, str] = {}
    tags = TagSet(DEMO_TAGS)
    for name, doc in uc1_contracts().items():
        rec = ws.registry.register_service(
            doc, base_endpoint=f"http://stub/{name}", tags=tags, actor=actor)
        ws.registry.review_service(rec.id, "approve", manager=reviewer,
                                   actor=reviewer)
        ids[name] = rec.id
        path = next(iter(doc["paths"]))
        ws.orchestrator.stub_handlers[(rec.id, path, "post")] = \
            UC1_HANDLERS[(name, path)]
    return ids


def build_uc1_workflow(ids: dict[str, str], revision: int = 0) -> WorkflowDef:
    """The pipeline as first composed: the embedding output feeds the
    projection input directly, which does not type-check until an adapter
    renames `vectors` to `values`."""
    nodes = (
        Node(id="extract", kind="service-call", service=ids["keyword-extraction"],
             endpoint=("/keywords", "post"),
             params=(("max_keywords", ("literal", 12)),)),
        Node(id="embed", kind="service-call", service=ids["embedding"],
             endpoint=("/embed", "post")),
        Node(id="project", kind="service-call", service=ids["projection"],
             endpoint=("/project", "post"),
             params=(("n_components", ("literal", 2)),)),
        Node(id="colorize", kind="service-call", service=ids["colormap"],
             endpoint=("/colorize", "post")),
    )
    edges = (
        Edge("$inputs", "text", "extract", "text"),
        Edge("extract", "keywords", "embed", "keywords"),
        Edge("embed", "out", "project", "matrix"),
        Edge("project", "coords", "colorize", "coords"),
    )
    return WorkflowDef(
        id="uc1-pipeline", name="Keyword color pipeline", revision=revision,
        inputs=(("text", ct.PrimitiveType.STRING),),
        required_tags=TagSet(DEMO_TAGS),
        nodes=nodes, edges=edges,
        outputs=(("colorize", "colors", "colors"),))


UC1_ADAPTER_EDGE = Edge("embed", "out", "project", "matrix")
UC1_ADAPTER_MAPPING = {"values": "vectors", "dims": "dims"}


# -- the seven-capability build-out -----------------------------------------------

UC2_STAGES = ("ingest", "clean", "tokenize", "embed", "cluster", "label", "render")


def uc2_requirements() -> list[dict]:
    return [{"text": f"{stage} capability for the corpus pipeline",
             "tags": DEMO_TAGS} for stage in UC2_STAGES]


def uc2_contract(stage: str) -> dict:
    """A minimal admissible contract per capability; outputs chain into
    the next stage's input so the composed workflow needs no adapters."""
    i = UC2_STAGES.index(stage)
    request = ({"text": {"type": "string"}} if i == 0
               else {f"data_{i}": {"type": "json"}})
    response = {f"data_{i + 1}": {"type": "json"}}
    return _contract(f"{stage}-service", "0.1.0", f"/{stage}", request, response)


def _uc2_handler(stage: str):
    i = UC2_STAGES.index(stage)

    def handler(inputs: dict, params: dict) -> dict:
        upstream = inputs.get("text") if i == 0 else inputs.get(f"data_{i}")
        return {f"data_{i + 1}": {"stage": stage, "carried": upstream}}

    return handler


def uc2_planner(parent) -> list[ChildSpec]:
    """One child per capability; each depends on its predecessor so the
    merge order mirrors the pipeline order."""
    specs = []
    for i, stage in enumerate(UC2_STAGES):
        specs.append(ChildSpec(
            title=f"build {stage} service",
            agent_type="backend",
            description=f"implement the {stage} capability",
            acceptance_criteria=[f"service:{stage}"],
            dependencies=[i] if i > 0 else [],
            files={f"services/{stage}.py", f"contracts/{stage}.json"}))
    return specs


def install_uc2_service(ws, stage: str, actor: str = "user",
                        reviewer: str = "admin") -> str:
    doc = uc2_contract(stage)
    rec = ws.registry.register_service(
        doc, base_endpoint=f"http://stub/{stage}", tags=TagSet(DEMO_TAGS),
        actor=actor)
    ws.registry.review_service(rec.id, "approve", manager=reviewer, actor=reviewer)
    ws.orchestrator.stub_handlers[(rec.id, f"/{stage}", "post")] = _uc2_handler(stage)
    return rec.id


def build_uc2_workflow(ids: dict[str, str], revision: int = 0) -> WorkflowDef:
    nodes = []
    edges = [Edge("$inputs", "text", UC2_STAGES[0], "text")]
    for i, stage in enumerate(UC2_STAGES):
        nodes.append(Node(id=stage, kind="service-call", service=ids[stage],
                          endpoint=(f"/{stage}", "post")))
        if i > 0:
            edges.append(Edge(UC2_STAGES[i - 1], f"data_{i}", stage, f"data_{i}"))
    last = UC2_STAGES[-1]
    return WorkflowDef(
        id="uc2-pipeline", name="Corpus pipeline", revision=revision,
        inputs=(("text", ct.PrimitiveType.STRING),),
        required_tags=TagSet(DEMO_TAGS),
        nodes=tuple(nodes), edges=tuple(edges),
        outputs=((last, f"data_{len(UC2_STAGES)}", "result"),))
