"""Capture REST responses from a seeded backend as console test fixtures.

Every fixture file is the verbatim JSON body of one API response, so the
console tests exercise exactly the payloads a live session would see.
Run from the repository root:

    python frontend/scripts/make_fixtures.py
"""

import itertools
import json
import pathlib
import sys

from fastapi.testclient import TestClient

from bonsai import workflow as wf
from bonsai.api.app import create_app, issue_token
from bonsai.core import Workspace
from bonsai.demo import (
    UC1_ADAPTER_EDGE, UC1_ADAPTER_MAPPING, build_uc1_workflow, install_uc1,
)
from bonsai.governance import ChildSpec, PolicyConfig, ScriptedExecutor

OUT = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


class SteppingClock:
    def __init__(self, start: float = 0.0, step: float = 1.0):
        self._counter = itertools.count()
        self._start = start
        self._step = step

    def __call__(self) -> float:
        return self._start + next(self._counter) * self._step


class GivesUp(ScriptedExecutor):
    def implement(self, package):
        raise RuntimeError("cannot resolve")


def dump(name: str, payload) -> None:
    path = OUT / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path.relative_to(OUT.parent)}")


def main() -> int:
    ws = Workspace(clock=SteppingClock())
    client = TestClient(create_app(ws), raise_server_exceptions=False)
    write = {"Authorization": f"Bearer {issue_token(ws, 'user', {'read', 'write'})}"}

    # -- canvas: the classic composition with one field-level mismatch --------
    ids = install_uc1(ws)
    broken_yaml = wf.serialize(build_uc1_workflow(ids))
    r = client.post("/workflows", json={"yaml": broken_yaml, "draft": True},
                    headers=write)
    assert r.status_code == 201, r.text
    workflow_id = r.json()["id"]

    r = client.post(f"/workflows/{workflow_id}/validate",
                    json={"yaml": broken_yaml}, headers=write)
    assert r.status_code == 200, r.text
    dump("canvas/report-broken.json", r.json())
    dump("canvas/workflow-broken.json", {"id": workflow_id, "yaml": broken_yaml})

    r = client.post(f"/workflows/{workflow_id}/adapter",
                    json={"yaml": broken_yaml,
                          "edge": [UC1_ADAPTER_EDGE.from_node,
                                   UC1_ADAPTER_EDGE.from_port,
                                   UC1_ADAPTER_EDGE.to_node,
                                   UC1_ADAPTER_EDGE.to_port],
                          "mapping": UC1_ADAPTER_MAPPING},
                    headers=write)
    assert r.status_code == 200, r.text
    fixed_yaml = r.json()["yaml"]
    r = client.post(f"/workflows/{workflow_id}/validate",
                    json={"yaml": fixed_yaml}, headers=write)
    assert r.status_code == 200, r.text
    dump("canvas/report-fixed.json", r.json())
    dump("canvas/workflow-fixed.json", {"id": workflow_id, "yaml": fixed_yaml})

    # -- governance scenario rich enough for the timeline and agent map -------
    # Two children touch the same path; the second merge conflicts and the
    # resolver gives up, which puts a correction event on the timeline.
    g = ws.governance
    g.set_policy(PolicyConfig(concurrency_cap=5), "user")
    parent = g.create_issue("clustering pipeline feature", "user")
    kids = g.decompose(parent.id, lambda _p: [
        ChildSpec("write the loader", "backend", files={"src/load.py"}),
        ChildSpec("write the renderer", "frontend", files={"src/render.py"}),
    ])
    t1 = g.spawn_adu(kids[0].id,
                     ScriptedExecutor(change_set={"src/shared.py": "one"}))["task"]
    t2 = g.spawn_adu(kids[1].id,
                     ScriptedExecutor(change_set={"src/shared.py": "two"}))["task"]
    g.run_task_to_completion(t1.id)
    g.run_task_to_completion(t2.id)
    g.spawn_merge_adu(t2.id, GivesUp())

    # a third issue stays queued so the map shows mixed statuses
    g.create_issue("polish the docs", "user")

    for zoom in ("ZL0", "ZL1", "ZL2", "ZL3"):
        r = client.get("/provenance/view", params={"zoom": zoom}, headers=write)
        assert r.status_code == 200, r.text
        dump(f"provenance/view-{zoom.lower()}.json", r.json())

    r = client.get("/issues", headers=write)
    dump("board/issues.json", r.json())
    r = client.get("/tasks", headers=write)
    dump("board/tasks.json", r.json())
    return 0


if __name__ == "__main__":
    sys.exit(main())
