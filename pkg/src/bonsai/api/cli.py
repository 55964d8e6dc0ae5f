"""Command-line client for the workspace API.

Every subcommand except `workflow validate --offline` talks to a running
server; the offline path runs the validator locally against a registry
snapshot file so YAML-first editing works without any network.
"""

from __future__ import annotations

import json
import os
import sys

import click
import httpx
import yaml

from .. import workflow as wf
from ..core import Workspace
from ..registry import TagSet


def _base_url() -> str:
    url = os.environ.get("BONSAI_URL")
    if url:
        return url.rstrip("/")
    port = os.environ.get("BONSAI_PORT", "8700")
    return f"http://127.0.0.1:{port}"


def _client() -> httpx.Client:
    headers = {}
    token = os.environ.get("BONSAI_TOKEN")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return httpx.Client(base_url=_base_url(), headers=headers, timeout=30.0)


def _fail(payload) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True), err=True)
    sys.exit(1)


def _check(resp: httpx.Response):
    if resp.status_code >= 400:
        try:
            _fail(resp.json())
        except ValueError:
            _fail({"code": "http-error", "message": resp.text,
                   "detail": {"status": resp.status_code}})
    return resp.json()


@click.group()
def main():
    """Typed workflow workspace client."""


# -- services ------------------------------------------------------------------

@main.group()
def services():
    """Service registry operations."""


@services.command("ls")
@click.option("--text", default=None, help="Substring filter.")
def services_ls(text):
    with _client() as c:
        data = _check(c.get("/services", params={"text": text} if text else {}))
    for item in data["items"]:
        click.echo(f"{item['id']}  {item['name']} {item['version']}  "
                   f"[{item['state']}]  {','.join(item['tags'])}")


@services.command("register")
@click.argument("contract_file", type=click.Path(exists=True))
@click.option("--base-endpoint", default="")
@click.option("--tag", "tags", multiple=True)
def services_register(contract_file, base_endpoint, tags):
    with open(contract_file) as fh:
        contract = json.load(fh)
    with _client() as c:
        data = _check(c.post("/services", json={
            "contract": contract, "base_endpoint": base_endpoint,
            "tags": list(tags)}))
    click.echo(data["id"])


@services.command("review")
@click.argument("service_id")
@click.argument("decision", type=click.Choice(["approve", "reject"]))
@click.option("--manager", default=None)
def services_review(service_id, decision, manager):
    with _client() as c:
        body = {"decision": decision}
        if manager:
            body["manager"] = manager
        data = _check(c.post(f"/services/{service_id}/review", json=body))
    click.echo(f"{data['id']} -> {data['state']}")


# -- workflows --------------------------------------------------------------------

@main.group()
def workflow():
    """Workflow composition operations."""


def _offline_validate(yaml_text: str, registry_snapshot: str | None) -> dict:
    ws = Workspace(clock=lambda: 0.0)
    if registry_snapshot:
        with open(registry_snapshot) as fh:
            entries = json.load(fh)
        for entry in entries:
            rec = ws.registry.register_service(
                entry["contract"], base_endpoint=entry.get("base_endpoint", ""),
                tags=TagSet(entry.get("tags") or ()), actor="user")
            ws.registry.review_service(rec.id, "approve", manager="admin",
                                       actor="admin")
    w = wf.parse(yaml_text)
    return wf.validate(w, ws.types, ws.registry).as_dict()


@workflow.command("validate")
@click.argument("workflow_file", type=click.Path(exists=True))
@click.option("--offline", is_flag=True, help="Validate locally.")
@click.option("--registry-snapshot", type=click.Path(exists=True), default=None,
              help="Service snapshot for offline validation.")
def workflow_validate(workflow_file, offline, registry_snapshot):
    with open(workflow_file) as fh:
        text = fh.read()
    if offline:
        report = _offline_validate(text, registry_snapshot)
    else:
        doc = yaml.safe_load(text)
        with _client() as c:
            report = _check(c.post(f"/workflows/{doc['id']}/validate",
                                   json={"yaml": text}))
    click.echo(json.dumps(report, indent=2, sort_keys=True))
    sys.exit(0 if report["valid"] else 1)


@workflow.command("save")
@click.argument("workflow_file", type=click.Path(exists=True))
@click.option("--draft", is_flag=True)
def workflow_save(workflow_file, draft):
    with open(workflow_file) as fh:
        text = fh.read()
    with _client() as c:
        data = _check(c.post("/workflows", json={"yaml": text, "draft": draft}))
    click.echo(f"{data['id']} r{data['revision']}")


@workflow.command("run")
@click.argument("workflow_id")
@click.option("--input", "inputs", multiple=True, help="name=json-value")
@click.option("--wait", is_flag=True)
def workflow_run(workflow_id, inputs, wait):
    parsed = {}
    for item in inputs:
        name, _, raw = item.partition("=")
        try:
            parsed[name] = json.loads(raw)
        except ValueError:
            parsed[name] = raw
    with _client() as c:
        data = _check(c.post(f"/hooks/workflows/{workflow_id}",
                             json={"inputs": parsed, "wait": wait}))
    click.echo(data["execution_id"])


# -- executions --------------------------------------------------------------------

@main.group(name="exec")
def exec_group():
    """Execution monitoring."""


@exec_group.command("watch")
@click.argument("execution_id")
def exec_watch(execution_id):
    with _client() as c:
        with c.stream("GET", f"/executions/{execution_id}/events",
                      timeout=60.0) as resp:
            if resp.status_code >= 400:
                resp.read()
                _check(resp)
            for line in resp.iter_lines():
                if line:
                    click.echo(line)


@exec_group.command("outputs")
@click.argument("execution_id")
def exec_outputs(execution_id):
    with _client() as c:
        refs = _check(c.get(f"/executions/{execution_id}/outputs"))
        for name, ref in sorted(refs.items()):
            body = c.get(f"/artifacts/{ref['object_id']}",
                         params={"token": ref["fetch_token"]})
            click.echo(f"{name}: {body.text}")


# -- issues -----------------------------------------------------------------------

@main.group()
def issues():
    """Issue board operations."""


@issues.command("ls")
def issues_ls():
    with _client() as c:
        data = _check(c.get("/issues"))
    for item in data["items"]:
        click.echo(f"{item['id']}  [{item['status']}]  {item['title']}")


@issues.command("file")
@click.argument("title")
@click.option("--description", default="")
@click.option("--feedback", is_flag=True)
def issues_file(title, description, feedback):
    with _client() as c:
        data = _check(c.post("/issues", json={
            "title": title, "description": description, "feedback": feedback}))
    click.echo(data["id"])


# -- provenance ----------------------------------------------------------------------

@main.group()
def provenance():
    """Provenance log operations."""


@provenance.command("export")
@click.option("--out", type=click.Path(), default=None)
def provenance_export(out):
    with _client() as c:
        resp = c.get("/provenance/export")
        if resp.status_code >= 400:
            _check(resp)
        if out:
            with open(out, "w") as fh:
                fh.write(resp.text)
            click.echo(out)
        else:
            click.echo(resp.text, nl=False)


# -- policy ----------------------------------------------------------------------------

@main.group()
def policy():
    """Governance policy configuration."""


@policy.command("show")
def policy_show():
    with _client() as c:
        data = _check(c.get("/policy"))
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@policy.command("set")
@click.argument("assignments", nargs=-1, required=True)
def policy_set(assignments):
    body = {}
    for item in assignments:
        name, _, raw = item.partition("=")
        try:
            body[name] = json.loads(raw)
        except ValueError:
            body[name] = raw
    with _client() as c:
        data = _check(c.put("/policy", json=body))
    click.echo(json.dumps(data, indent=2, sort_keys=True))


# -- server -----------------------------------------------------------------------------

@main.command("serve")
@click.option("--port", type=int, default=None)
@click.option("--demo", is_flag=True, help="Seed the demo pipeline and print a token.")
def serve(port, demo):
    import uvicorn

    from .app import create_app, issue_token

    ws = Workspace()
    policy_file = os.environ.get("BONSAI_POLICY_FILE")
    if policy_file and os.path.exists(policy_file):
        from ..governance import PolicyConfig
        with open(policy_file) as fh:
            ws.governance.set_policy(
                PolicyConfig.from_dict(yaml.safe_load(fh) or {}), actor="user")
    if demo:
        from ..demo import install_uc1
        install_uc1(ws)
        token = issue_token(ws, "user", {"read", "write", "admin"})
        click.echo(f"BONSAI_TOKEN={token}")
    app = create_app(ws)
    uvicorn.run(app, host="127.0.0.1",
                port=port or int(os.environ.get("BONSAI_PORT", "8700")))


if __name__ == "__main__":
    main()
