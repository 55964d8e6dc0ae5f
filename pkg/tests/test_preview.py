"""Preview port allocation and process lifecycle."""

import socket
import sys
import time

import pytest

from bonsai.api.preview import (
    NoFreePortError, PreviewManager, find_free_port, parse_range,
)

SLEEPER = [sys.executable, "-c", "import time; time.sleep(60)"]


class TestPortRange:
    def test_default_range(self):
        assert parse_range(None) == (3000, 3999)
        assert parse_range("") == (3000, 3999)

    def test_explicit_range_and_single_port(self):
        assert parse_range("4100-4200") == (4100, 4200)
        assert parse_range("4100") == (4100, 4100)

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("BONSAI_PREVIEW_RANGE", "4300-4310")
        port = find_free_port()
        assert 4300 <= port <= 4310

    def test_skips_occupied_ports(self):
        lo = find_free_port((4400, 4410))
        with socket.socket() as sock:
            sock.bind(("127.0.0.1", lo))
            sock.listen(1)
            nxt = find_free_port((4400, 4410))
            assert nxt != lo

    def test_distinct_via_skip_set(self):
        a = find_free_port((4500, 4510))
        b = find_free_port((4500, 4510), skip={a})
        assert a != b

    def test_exhausted_range_raises(self):
        lo = find_free_port((4600, 4600))
        with socket.socket() as sock:
            sock.bind(("127.0.0.1", lo))
            sock.listen(1)
            with pytest.raises(NoFreePortError) as err:
                find_free_port((lo, lo))
            assert err.value.code == "no-free-port"
            assert err.value.detail == {"range": [lo, lo]}


class TestPreviewManager:
    def test_launch_status_stop(self):
        manager = PreviewManager(SLEEPER, port_range=(4700, 4750))
        try:
            status = manager.launch()
            assert status["running"] and status["restarts"] == 0
            assert status["url"] == f"http://127.0.0.1:{status['port']}"
            # second launch is idempotent while the process lives
            assert manager.launch()["port"] == status["port"]
        finally:
            manager.stop()
        assert not manager.status()["running"]

    def test_reload_restarts_on_same_port(self):
        manager = PreviewManager(SLEEPER, port_range=(4700, 4750))
        try:
            before = manager.launch()
            first_pid = manager.process.pid
            manager.reload()
            after = manager.status()
            assert after["restarts"] == 1
            assert after["port"] == before["port"]
            assert after["running"]
            assert manager.process.pid != first_pid
        finally:
            manager.stop()

    def test_reload_before_launch_is_a_no_op(self):
        manager = PreviewManager(SLEEPER)
        manager.reload()
        assert manager.status() == {"url": None, "port": None,
                                    "running": False, "restarts": 0}

    def test_command_port_substitution(self):
        manager = PreviewManager(
            [sys.executable, "-c",
             "import sys, time; assert sys.argv[1].isdigit(); time.sleep(60)",
             "{port}"],
            port_range=(4760, 4790))
        try:
            status = manager.launch()
            time.sleep(0.3)
            assert manager.process.poll() is None  # assertion inside held
            assert status["running"]
        finally:
            manager.stop()

    def test_governance_hook_integration(self, ws):
        manager = PreviewManager(SLEEPER, port_range=(4800, 4850))
        ws.governance.reload_hooks.append(manager.reload)
        try:
            manager.launch()
            from bonsai.governance import ChildSpec, ScriptedExecutor
            g = ws.governance
            parent = g.create_issue("feature", "user")
            kids = g.decompose(parent.id,
                               lambda _i: [ChildSpec("c", "backend")])
            task = g.spawn_adu(kids[0].id, ScriptedExecutor())["task"]
            g.run_task_to_completion(task.id)
            g.approve_review(parent.id, "user")
            g.merge_parent(parent.id, "user")
            assert manager.status()["restarts"] == 1
        finally:
            manager.stop()
