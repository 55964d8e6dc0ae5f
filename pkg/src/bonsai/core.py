"""Workspace wiring: one object owning every store, sharing one event log.

Everything state-bearing hangs off a Workspace so tests and the API layer
get a fully consistent world from a single constructor.  The clock is
injectable for deterministic tests.
"""

from __future__ import annotations

import time

from . import ctype as ct
from .governance import BranchStore, GovernanceEngine, PolicyConfig
from .orchestrator import ArtifactStore, EnvironmentProfile, Orchestrator
from .provenance import Actor, EventLog, replay
from .registry import ServiceRegistry, TagSet, TokenStore
from .workflow import WorkflowStore

DEFAULT_ENVIRONMENTS = (
    EnvironmentProfile(
        id="env-eu-general",
        tags=TagSet(("jurisdiction:eu", "confidentiality:internal",
                     "runtime:python")),
        capacity=2, executor_kind="scripted-stub"),
    EnvironmentProfile(
        id="env-us-gpu",
        tags=TagSet(("jurisdiction:us", "runtime:python", "hardware:gpu")),
        capacity=1, executor_kind="scripted-stub"),
)


class Workspace:
    def __init__(self, clock=None, policy: PolicyConfig | None = None,
                 environments=None, admins: set[str] | None = None,
                 health_prober=None, conflict_oracle=None,
                 acceptance_evaluator=None):
        self.clock = clock or time.time
        self.admins = set(admins or {"admin"})
        self.provenance = EventLog(clock=self.clock)
        self.types = ct.TypeRegistry()
        self.registry = ServiceRegistry(
            self.types, self.provenance, self.clock,
            health_prober=health_prober, admins=self.admins)
        self.workflows = WorkflowStore(self.types, self.registry, self.provenance)
        self.artifacts = ArtifactStore(self.clock)
        self.environments = list(environments if environments is not None
                                 else DEFAULT_ENVIRONMENTS)
        self.orchestrator = Orchestrator(
            self.types, self.registry, self.environments, self.artifacts,
            self.provenance, self.clock)
        self.branches = BranchStore(conflict_oracle=conflict_oracle)
        self.governance = GovernanceEngine(
            self.provenance, policy or PolicyConfig(), self.branches,
            self.clock, registry=self.registry,
            acceptance_evaluator=acceptance_evaluator)
        self.tokens = TokenStore()
        self.provenance.register_actor(Actor("user", "user", "Workspace User"))
        for admin in sorted(self.admins):
            self.provenance.register_actor(Actor(admin, "user", admin.title()))
        # Seed the log with the effective policy so a replay from event one
        # reproduces the live snapshot including configuration.
        self.governance.set_policy(self.governance.policy, "nexus")

    # -- coherence ----------------------------------------------------------
    def snapshot(self) -> dict:
        """Live state in exactly the shape `provenance.replay` rebuilds."""
        gov = self.governance.snapshot()
        return {
            "services": self.registry.snapshot(),
            "workflows": self.workflows.snapshot(),
            "issues": gov["issues"],
            "tasks": gov["tasks"],
            "branches": gov["branches"],
            "policy": gov["policy"],
            "intents": gov["intents"],
            "executions": self.orchestrator.snapshot(),
        }

    def replayed(self) -> dict:
        return replay(self.provenance.events())

    def transition_counts(self) -> dict:
        return {
            "registry": self.registry.transitions,
            "workflows": self.workflows.transitions,
            "orchestrator": self.orchestrator.transitions,
            "governance": self.governance.transitions,
        }
