"""REST + SSE + tool surface.

Every REST handler and every tool delegates to the same `_op_*` function,
so agents calling the tool surface get bit-identical behavior to humans
calling REST.  Failures always serialize as {code, message, detail}.
"""

from __future__ import annotations

import json
import secrets
import uuid

from fastapi import Depends, FastAPI, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse

from .. import ctype as ct
from .. import workflow as wf
from ..core import Workspace
from ..errors import (BonsaiError, FeatureDisabledError, NotFoundError,
                      ValidationFailedError)
from ..governance import ChildSpec, IssueStatus, PolicyConfig, ScriptedExecutor
from ..provenance import build_view
from ..registry import AccessToken, TagSet, authorize

_STATUS_BY_CODE = {
    "not-found": 404,
    "conflict": 409,
    "revision-conflict": 409,
    "invalid-transition": 409,
    "admission-rejected": 422,
    "validation-failed": 422,
    "typed-input-error": 422,
    "workflow-parse-error": 422,
    "contract-parse-error": 422,
    "derivation-error": 422,
    "incomplete-mapping": 422,
    "unresolved-type": 422,
    "type-cycle": 422,
    "expired": 410,
    "feature-disabled": 403,
    "planner-error": 422,
}

_AUTH_STATUS = {"malformed": 401, "unknown": 401, "expired": 401, "forbidden": 403}

DEFAULT_PAGE = 100


def issue_token(ws: Workspace, principal: str, scopes: set[str],
                ttl: float = 3600.0) -> str:
    raw = secrets.token_hex(16)
    ws.tokens.add(AccessToken(token=raw, principal=principal,
                              scopes=frozenset(scopes), expiry=ws.clock() + ttl))
    return raw


class AuthError(Exception):
    def __init__(self, reason: str):
        self.reason = reason


def _require(ws: Workspace, request: Request, resource: str) -> str:
    decision = authorize(request.headers.get("authorization"), resource,
                         ws.tokens, ws.clock())
    if not decision.allowed:
        raise AuthError(decision.reason)
    return decision.principal


def _page(items: list, cursor: str | None, limit: int | None) -> dict:
    start = int(cursor) if cursor else 0
    size = limit or DEFAULT_PAGE
    chunk = items[start:start + size]
    nxt = str(start + size) if start + size < len(items) else None
    return {"items": chunk, "next_cursor": nxt}


# --- shared operations (REST and tools both call these) ---------------------------

def _op_discover_services(ws: Workspace, args: dict) -> list[dict]:
    shape = None
    if args.get("input_shape"):
        shape = ct.CType("query__input", tuple(
            (k, ct.parse_primitive(v)) for k, v in
            sorted(args["input_shape"].items())))
    out_shape = None
    if args.get("output_shape"):
        out_shape = ct.CType("query__output", tuple(
            (k, ct.parse_primitive(v)) for k, v in
            sorted(args["output_shape"].items())))
    records = ws.registry.discover_services(
        text=args.get("text"),
        required_tags=TagSet(args.get("tags") or ()),
        input_shape=shape, output_shape=out_shape)
    return [r.project() for r in records]


def _op_validate_workflow(ws: Workspace, args: dict) -> dict:
    w = wf.parse(args["yaml"])
    return wf.validate(w, ws.types, ws.registry).as_dict()


def _op_compose_workflow(ws: Workspace, args: dict, principal: str) -> dict:
    w = wf.parse(args["yaml"])
    revision = ws.workflows.store_revision(w, actor=principal,
                                           draft=bool(args.get("draft")))
    return {"id": w.id, "revision": revision}


def _op_insert_adapter(ws: Workspace, args: dict) -> dict:
    w = wf.parse(args["yaml"])
    edge = wf.Edge(*args["edge"])
    new = wf.insert_adapter(w, edge, dict(args["mapping"]), ws.types, ws.registry)
    return {"yaml": wf.serialize(new)}


def _op_dispatch_execution(ws: Workspace, args: dict, principal: str) -> dict:
    w = ws.workflows.get(args["workflow_id"], args.get("revision"))
    execution_id = ws.orchestrator.dispatch(
        w, args.get("inputs") or {}, files=args.get("files"),
        actor=principal, wait=bool(args.get("wait")))
    return {"execution_id": execution_id}


def _op_mine_services(ws: Workspace, args: dict, principal: str) -> dict:
    plan = ws.governance.mine_services(args.get("requirements") or [],
                                       actor=principal)
    return {"reuse": plan["reuse"],
            "build": [i.project() for i in plan["build"]]}


def _op_file_issue(ws: Workspace, args: dict, principal: str) -> dict:
    if args.get("feedback"):
        issue = ws.governance.file_feedback_issue(
            args["title"], actor=principal,
            source_view=args.get("source_view", ""),
            screenshot=args.get("screenshot"))
    else:
        issue = ws.governance.create_issue(
            title=args["title"], actor=principal,
            description=args.get("description", ""),
            acceptance_criteria=args.get("acceptance_criteria"),
            attachments=args.get("attachments"))
    return issue.project()


TOOLS = {
    "discover_services": {
        "description": "Find Active services by text, tags, or shape.",
        "maps_to": "GET /services",
        "write": False,
    },
    "validate_workflow": {
        "description": "Validate a workflow document without saving it.",
        "maps_to": "POST /workflows/{id}/validate",
        "write": False,
    },
    "compose_workflow": {
        "description": "Save a workflow revision after validation.",
        "maps_to": "POST /workflows/{id}/revisions",
        "write": True,
    },
    "insert_adapter": {
        "description": "Insert a field-mapping adapter on a mismatched edge.",
        "maps_to": "POST /workflows/{id}/adapter",
        "write": False,
    },
    "dispatch_execution": {
        "description": "Dispatch a stored workflow revision with typed inputs.",
        "maps_to": "POST /hooks/workflows/{id}",
        "write": True,
    },
    "mine_services": {
        "description": "Reuse-or-build plan for capability requirements.",
        "maps_to": "POST /services/mine",
        "write": True,
    },
    "file_issue": {
        "description": "File an issue (optionally as review feedback).",
        "maps_to": "POST /issues",
        "write": True,
    },
}


def _run_tool(ws: Workspace, name: str, args: dict, principal: str):
    if name == "discover_services":
        return _op_discover_services(ws, args)
    if name == "validate_workflow":
        return _op_validate_workflow(ws, args)
    if name == "compose_workflow":
        return _op_compose_workflow(ws, args, principal)
    if name == "insert_adapter":
        return _op_insert_adapter(ws, args)
    if name == "dispatch_execution":
        return _op_dispatch_execution(ws, args, principal)
    if name == "mine_services":
        return _op_mine_services(ws, args, principal)
    if name == "file_issue":
        return _op_file_issue(ws, args, principal)
    raise NotFoundError(f"unknown tool {name!r}")


# --- the app -------------------------------------------------------------------

def create_app(ws: Workspace | None = None, preview_manager=None) -> FastAPI:
    ws = ws or Workspace()
    app = FastAPI(title="bonsai", version="0.1.0")
    app.state.workspace = ws
    app.state.preview = preview_manager

    @app.middleware("http")
    async def request_id_mw(request: Request, call_next):
        response = await call_next(request)
        response.headers["x-request-id"] = uuid.uuid4().hex
        return response

    @app.exception_handler(BonsaiError)
    async def bonsai_error(_request, exc: BonsaiError):
        return JSONResponse(status_code=_STATUS_BY_CODE.get(exc.code, 400),
                            content=exc.envelope())

    @app.exception_handler(AuthError)
    async def auth_error(_request, exc: AuthError):
        return JSONResponse(
            status_code=_AUTH_STATUS.get(exc.reason, 401),
            content={"code": "unauthorized", "message": f"token {exc.reason}",
                     "detail": {"reason": exc.reason}})

    @app.exception_handler(ValueError)
    async def value_error(_request, exc: ValueError):
        return JSONResponse(status_code=422,
                            content={"code": "invalid-request",
                                     "message": str(exc), "detail": None})

    def reader(request: Request) -> str:
        return _require(ws, request, "read")

    def writer(request: Request) -> str:
        return _require(ws, request, "write")

    def admin(request: Request) -> str:
        return _require(ws, request, "admin")

    # -- services ---------------------------------------------------------
    @app.get("/services")
    def list_services(request: Request, text: str | None = None,
                      cursor: str | None = None, limit: int | None = None,
                      _p: str = Depends(reader)):
        tags = request.query_params.getlist("tag")
        items = _op_discover_services(ws, {"text": text, "tags": tags})
        return _page(items, cursor, limit)

    @app.post("/services", status_code=201)
    async def register_service(request: Request, principal: str = Depends(writer)):
        body = await request.json()
        record = ws.registry.register_service(
            body["contract"], base_endpoint=body.get("base_endpoint", ""),
            tags=TagSet(body.get("tags") or ()), actor=principal)
        return record.project()

    @app.post("/services/{service_id}/review")
    async def review_service(service_id: str, request: Request,
                             principal: str = Depends(admin)):
        body = await request.json()
        record = ws.registry.review_service(
            service_id, body["decision"],
            manager=body.get("manager", principal), actor=principal)
        return record.project()

    @app.get("/services/{service_id}/health")
    def service_health(service_id: str, principal: str = Depends(reader)):
        return {"id": service_id,
                "health": ws.registry.poll_health(service_id, actor=principal)}

    @app.post("/services/mine")
    async def mine(request: Request, principal: str = Depends(writer)):
        return _op_mine_services(ws, await request.json(), principal)

    # -- workflows -----------------------------------------------------------
    @app.get("/workflows")
    def list_workflows(cursor: str | None = None, limit: int | None = None,
                       _p: str = Depends(reader)):
        items = [{"id": w.id, "name": w.name, "head_revision": w.revision}
                 for w in sorted(ws.workflows.list(), key=lambda w: w.id)]
        return _page(items, cursor, limit)

    @app.get("/workflows/{workflow_id}")
    def get_workflow(workflow_id: str, revision: int | None = None,
                     _p: str = Depends(reader)):
        w = ws.workflows.get(workflow_id, revision)
        return {"id": w.id, "revision": w.revision, "yaml": wf.serialize(w)}

    @app.post("/workflows", status_code=201)
    @app.post("/workflows/{workflow_id}/revisions", status_code=201)
    async def save_workflow(request: Request, workflow_id: str | None = None,
                            principal: str = Depends(writer)):
        body = await request.json()
        out = _op_compose_workflow(ws, body, principal)
        if workflow_id is not None and out["id"] != workflow_id:
            raise ValidationFailedError(
                f"document id {out['id']!r} does not match path {workflow_id!r}")
        return out

    @app.post("/workflows/{workflow_id}/validate")
    async def validate_workflow(workflow_id: str, request: Request,
                                _p: str = Depends(reader)):
        body = await request.json()
        if "yaml" not in body:
            body = {"yaml": wf.serialize(ws.workflows.get(workflow_id))}
        return _op_validate_workflow(ws, body)

    @app.post("/workflows/{workflow_id}/adapter")
    async def adapter(workflow_id: str, request: Request,
                      _p: str = Depends(reader)):
        body = await request.json()
        if "yaml" not in body:
            body["yaml"] = wf.serialize(ws.workflows.get(workflow_id))
        return _op_insert_adapter(ws, body)

    # -- executions ------------------------------------------------------------
    @app.post("/hooks/workflows/{workflow_id}")
    async def webhook(workflow_id: str, request: Request,
                      principal: str = Depends(writer)):
        body = await request.json()
        return _op_dispatch_execution(ws, {**body, "workflow_id": workflow_id},
                                      principal)

    @app.get("/executions/{execution_id}")
    def get_execution(execution_id: str, _p: str = Depends(reader)):
        return ws.orchestrator.get(execution_id).as_dict()

    @app.get("/executions/{execution_id}/events")
    def execution_events(execution_id: str, from_sequence: int = 0,
                         _p: str = Depends(reader)):
        feed = ws.orchestrator.feed(execution_id)

        def stream():
            for event in feed.subscribe(from_sequence):
                yield (f"event: {event.kind}\n"
                       f"data: {json.dumps(event.as_dict(), sort_keys=True)}\n\n")

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.post("/executions/{execution_id}/recompute")
    async def recompute(execution_id: str, request: Request,
                        principal: str = Depends(writer)):
        body = await request.json()
        base = ws.orchestrator.get(execution_id)
        w = ws.workflows.get(body.get("workflow_id") or base.workflow_id,
                             body.get("revision") or base.revision)
        new_id = ws.orchestrator.recompute(
            execution_id, body.get("changed") or {}, w, actor=principal,
            wait=bool(body.get("wait")))
        return {"execution_id": new_id}

    @app.get("/executions/{execution_id}/outputs")
    def outputs(execution_id: str, _p: str = Depends(reader)):
        refs = ws.orchestrator.get_outputs(execution_id)
        return {name: ref.as_dict() for name, ref in refs.items()}

    @app.get("/artifacts/{object_id}")
    def artifact(object_id: str, token: str):
        # the token itself is the capability; no bearer auth here
        content = ws.orchestrator.fetch_artifact(object_id, token)
        return Response(content=content, media_type="application/octet-stream")

    # -- issues and tasks ------------------------------------------------------------
    @app.get("/issues")
    def list_issues(cursor: str | None = None, limit: int | None = None,
                    _p: str = Depends(reader)):
        items = [i.project() for i in
                 sorted(ws.governance.issues.values(), key=lambda i: i.id)]
        return _page(items, cursor, limit)

    @app.post("/issues", status_code=201)
    async def create_issue(request: Request, principal: str = Depends(writer)):
        return _op_file_issue(ws, await request.json(), principal)

    @app.post("/issues/{issue_id}/transition")
    async def transition_issue(issue_id: str, request: Request,
                               principal: str = Depends(writer)):
        body = await request.json()
        action = body.get("action")
        if action == "decompose":
            specs = [ChildSpec(
                title=c["title"], agent_type=c.get("agent_type", "backend"),
                acceptance_criteria=c.get("acceptance_criteria") or [],
                dependencies=c.get("dependencies") or [],
                files=set(c.get("files") or ()),
                description=c.get("description", ""))
                for c in body.get("children") or []]
            children = ws.governance.decompose(issue_id, lambda _p: specs,
                                               actor=principal)
            return {"children": [c.project() for c in children]}
        if action == "spawn":
            executor = ScriptedExecutor(
                files=set(body.get("files") or ()),
                change_set=body.get("change_set") or {},
                claims=body.get("claims"),
                fail_times=int(body.get("fail_times", 0)))
            out = ws.governance.spawn_adu(issue_id, executor, actor=principal)
            if "task" in out:
                return {"task": out["task"].project()}
            return out
        if action == "approve-review":
            ws.governance.approve_review(issue_id, actor=principal)
            return ws.governance.get_issue(issue_id).project()
        if action == "merge-parent":
            result = ws.governance.merge_parent(issue_id, actor=principal)
            return {"merged": result.merged, "conflicts": result.conflicts}
        raise ValueError(f"unknown issue action {action!r}")

    @app.get("/tasks")
    def list_tasks(cursor: str | None = None, limit: int | None = None,
                   _p: str = Depends(reader)):
        items = [t.project() for t in
                 sorted(ws.governance.tasks.values(), key=lambda t: t.id)]
        return _page(items, cursor, limit)

    @app.post("/tasks/{task_id}/step")
    def step_task(task_id: str, _p: str = Depends(writer)):
        return {"state": ws.governance.step_task(task_id)}

    @app.post("/tasks/{task_id}/intervene")
    async def intervene(task_id: str, request: Request,
                        principal: str = Depends(writer)):
        body = await request.json()
        task = ws.governance.intervene(task_id, body["action"],
                                       actor=principal,
                                       text=body.get("text", ""))
        return task.project()

    # -- provenance ------------------------------------------------------------
    @app.get("/provenance/view")
    def provenance_view(start: float | None = None, end: float | None = None,
                        zoom: str = "ZL1", _p: str = Depends(reader)):
        events = ws.provenance.events()
        if start is None:
            start = events[0].timestamp if events else 0.0
        if end is None:
            end = events[-1].timestamp if events else 0.0
        return build_view(ws.provenance, start=start, end=end, zoom=zoom)

    @app.get("/provenance/export")
    def provenance_export(_p: str = Depends(reader)):
        return Response(content=ws.provenance.export_jsonl(),
                        media_type="application/x-ndjson")

    # -- policy ----------------------------------------------------------------
    @app.get("/policy")
    def get_policy(_p: str = Depends(reader)):
        return ws.governance.policy.as_dict()

    @app.put("/policy")
    async def put_policy(request: Request, principal: str = Depends(admin)):
        body = await request.json()
        merged = {**ws.governance.policy.as_dict(), **body}
        ws.governance.set_policy(PolicyConfig.from_dict(merged), actor=principal)
        return ws.governance.policy.as_dict()

    # -- preview -----------------------------------------------------------------
    @app.post("/preview")
    def launch_preview(principal: str = Depends(writer)):
        if app.state.preview is None:
            raise FeatureDisabledError("preview is not enabled")
        return app.state.preview.launch()

    @app.get("/preview")
    def preview_status(_p: str = Depends(reader)):
        if app.state.preview is None:
            raise FeatureDisabledError("preview is not enabled")
        return app.state.preview.status()

    # -- tools -------------------------------------------------------------------
    @app.get("/tools")
    def list_tools(_p: str = Depends(reader)):
        return {name: {"name": name, **meta} for name, meta in TOOLS.items()}

    @app.post("/tools/{name}")
    async def call_tool(name: str, request: Request):
        meta = TOOLS.get(name)
        if meta is None:
            raise NotFoundError(f"unknown tool {name!r}")
        principal = _require(ws, request, "write" if meta["write"] else "read")
        body = await request.json()
        return {"result": _run_tool(ws, name, body, principal)}

    return app
