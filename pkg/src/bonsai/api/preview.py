"""Live-preview process manager.

Scans a configured port range for a free port, runs the preview command
bound to it, and restarts the process when an integration branch lands on
main (the governance engine invokes the registered reload hook).
"""

from __future__ import annotations

import os
import socket
import subprocess
import threading

from ..errors import BonsaiError

DEFAULT_RANGE = (3000, 3999)


class NoFreePortError(BonsaiError):
    code = "no-free-port"


def parse_range(text: str | None) -> tuple[int, int]:
    if not text:
        return DEFAULT_RANGE
    lo, _, hi = text.partition("-")
    return int(lo), int(hi or lo)


def find_free_port(port_range: tuple[int, int] | None = None,
                   host: str = "127.0.0.1",
                   skip: set[int] | None = None) -> int:
    lo, hi = port_range or parse_range(os.environ.get("BONSAI_PREVIEW_RANGE"))
    for port in range(lo, hi + 1):
        if skip and port in skip:
            continue
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
            try:
                sock.bind((host, port))
            except OSError:
                continue
            return port
    raise NoFreePortError(f"no free port in {lo}-{hi}",
                          detail={"range": [lo, hi]})


class PreviewManager:
    """Owns one preview process; `reload` restarts it on the same port so
    embedded frames keep working across restarts."""

    def __init__(self, command: list[str], port_range: tuple[int, int] | None = None,
                 host: str = "127.0.0.1"):
        self.command = list(command)
        self.port_range = port_range
        self.host = host
        self.port: int | None = None
        self.process: subprocess.Popen | None = None
        self.restarts = 0
        self._lock = threading.Lock()

    def _spawn(self) -> None:
        env = dict(os.environ, PORT=str(self.port))
        self.process = subprocess.Popen(
            [arg.replace("{port}", str(self.port)) for arg in self.command],
            env=env, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)

    def launch(self) -> dict:
        with self._lock:
            if self.process is not None and self.process.poll() is None:
                return self.status()
            self.port = find_free_port(self.port_range, self.host)
            self._spawn()
            return self.status()

    def reload(self) -> None:
        """Registered as a governance reload hook: fires on merges to main."""
        with self._lock:
            if self.process is None:
                return
            self.process.terminate()
            try:
                self.process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.process.kill()
            self._spawn()
            self.restarts += 1

    def status(self) -> dict:
        alive = self.process is not None and self.process.poll() is None
        return {"url": f"http://{self.host}:{self.port}" if self.port else None,
                "port": self.port, "running": alive, "restarts": self.restarts}

    def stop(self) -> None:
        with self._lock:
            if self.process is not None:
                self.process.terminate()
                try:
                    self.process.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    self.process.kill()
                self.process = None
