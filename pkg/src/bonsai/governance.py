"""Plan/Monitor/Review machinery: issue board, policy gates, agent tasks.

Agent executors are pluggable; the shipped backends are deterministic
scripted implementations so the whole governance state machine is
testable without any language model.  Tasks advance through explicit
steps (`step_task`), which lets tests drive arbitrary interleavings.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Callable, Protocol

from .errors import InvalidTransitionError, NotFoundError
from .provenance import Actor
from .registry import TagSet

DEFAULT_ADU_TYPES = (
    # The first five are the documented roles; the remainder are
    # placeholder layer specialisations completing the registered set.
    "frontend", "backend", "database", "web-design", "merge",
    "data-pipeline", "ml-model", "visualization", "api-contract", "testing",
    "documentation", "devops", "security", "integration", "migration",
    "design-review",
)


# --- policy -----------------------------------------------------------------

@dataclass
class PolicyConfig:
    confidence_threshold: float = 0.8
    hold_timeout: float = 3600.0
    concurrency_cap: int = 2
    briefing_pause: float = 0.0
    max_requeue_cycles: int = 2
    branch_backlog_threshold: int = 5
    auto_review_rules: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence threshold must be in [0, 1]")
        if self.concurrency_cap < 1:
            raise ValueError("concurrency cap must be >= 1")
        if self.hold_timeout < 0 or self.briefing_pause < 0:
            raise ValueError("durations must be >= 0")
        if self.max_requeue_cycles < 0:
            raise ValueError("max re-queue cycles must be >= 0")
        if self.branch_backlog_threshold < 1:
            raise ValueError("branch backlog threshold must be >= 1")

    def as_dict(self) -> dict:
        return {
            "confidence_threshold": self.confidence_threshold,
            "hold_timeout": self.hold_timeout,
            "concurrency_cap": self.concurrency_cap,
            "briefing_pause": self.briefing_pause,
            "max_requeue_cycles": self.max_requeue_cycles,
            "branch_backlog_threshold": self.branch_backlog_threshold,
            "auto_review_rules": list(self.auto_review_rules),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyConfig":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})

    def allows_auto_review(self, issue: "Issue") -> bool:
        for rule in self.auto_review_rules:
            if rule.get("always"):
                return True
            if "agent_type" in rule and rule["agent_type"] == issue.agent_type:
                return True
            if "title_contains" in rule and rule["title_contains"] in issue.title:
                return True
        return False


# --- board entities ---------------------------------------------------------------

class IssueStatus(enum.Enum):
    PLANNING = "planning"
    QUEUED = "queued"
    IN_DEVELOPMENT = "in-development"
    BLOCKED = "blocked"
    IN_REVIEW = "in-review"
    COMPLETED = "completed"


@dataclass
class Issue:
    id: str
    title: str
    description: str = ""
    parent: str | None = None
    ordinal: int | None = None
    agent_type: str | None = None
    dependencies: set[str] = field(default_factory=set)
    status: IssueStatus = IssueStatus.PLANNING
    acceptance_criteria: list[str] = field(default_factory=list)
    attachments: list[str] = field(default_factory=list)
    feature_branch: str | None = None
    planned_files: set[str] = field(default_factory=set)
    reviewed: bool = False

    def project(self) -> dict:
        return {
            "id": self.id, "parent": self.parent, "ordinal": self.ordinal,
            "title": self.title, "status": self.status.value,
            "agent_type": self.agent_type,
            "dependencies": sorted(self.dependencies),
            "branch": self.feature_branch,
            "attachments": len(self.attachments),
            "criteria": list(self.acceptance_criteria),
        }


@dataclass
class Intent:
    id: str
    text: str
    classification: str        # directive | exploratory
    confidence: float
    recommendation: str        # go | refine | pass
    source_actor: str
    state: str = "pending"     # pending | approved | held | passed | backlog
    hold_until: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")
        if self.recommendation not in ("go", "refine", "pass"):
            raise ValueError(f"unknown recommendation {self.recommendation!r}")

    def project(self) -> dict:
        return {"id": self.id, "classification": self.classification,
                "confidence": self.confidence,
                "recommendation": self.recommendation, "state": self.state}


class TaskState(enum.Enum):
    BRIEFING = "briefing"
    RUNNING = "running"
    AWAITING_CLARIFICATION = "awaiting-clarification"
    SUBMITTED = "submitted"
    REJECTED = "rejected"
    MERGED = "merged"
    ESCALATED = "escalated"

    @property
    def holds_locks(self) -> bool:
        return self in (TaskState.BRIEFING, TaskState.RUNNING,
                        TaskState.AWAITING_CLARIFICATION, TaskState.SUBMITTED)

    @property
    def counts_running(self) -> bool:
        return self in (TaskState.BRIEFING, TaskState.RUNNING,
                        TaskState.AWAITING_CLARIFICATION)


PHASES = ("planning", "clarification", "file-declaration", "implementation")


@dataclass
class TaskResult:
    change_set: dict[str, str]
    claims: list[str] = field(default_factory=list)


class AgentExecutor(Protocol):
    """An executor sees exactly its task package, nothing else."""

    def plan(self, package: dict) -> str: ...
    def clarify(self, package: dict) -> list[str]: ...
    def declare_files(self, package: dict) -> set[str]: ...
    def implement(self, package: dict) -> TaskResult: ...


@dataclass
class AgentTask:
    id: str
    issue_id: str
    adu_type: str
    executor: AgentExecutor
    actor_id: str
    feature_branch: str
    skill_files: dict[str, str] = field(default_factory=dict)
    file_locks: set[str] = field(default_factory=set)
    locks_fixed: bool = False
    phase: str = "planning"
    state: TaskState = TaskState.BRIEFING
    requeue_count: int = 0
    feedback: list[dict] = field(default_factory=list)
    interventions: list[dict] = field(default_factory=list)
    plan: str | None = None
    questions: list[str] = field(default_factory=list)
    result: TaskResult | None = None
    briefing_until: float = 0.0
    paused: bool = False
    directive: str = ""

    def package(self) -> dict:
        """The strictly scoped context an executor may read."""
        return {
            "issue_id": self.issue_id,
            "directive": self.directive,
            "adu_type": self.adu_type,
            "skill_files": dict(self.skill_files),
            "feedback": list(self.feedback),
            "interventions": list(self.interventions),
            "feature_branch": self.feature_branch,
            "phase": self.phase,
        }

    def project(self) -> dict:
        return {"id": self.id, "issue": self.issue_id, "adu_type": self.adu_type,
                "state": self.state.value, "phase": self.phase,
                "requeue_count": self.requeue_count,
                "locks": sorted(self.file_locks), "branch": self.feature_branch}


# --- branch store ----------------------------------------------------------------

@dataclass
class MergeResult:
    merged: bool
    conflicts: list[str] = field(default_factory=list)


def path_intersection_oracle(a: set[str], b: set[str]) -> list[str]:
    """Default conflict oracle: change-sets conflict iff paths intersect."""
    return sorted(a & b)


@dataclass
class _Branch:
    name: str
    target: str | None           # integration branches target main
    created_seq: int
    change_set: dict[str, str] = field(default_factory=dict)
    merged: bool = False

    def paths(self) -> set[str]:
        return set(self.change_set)


class BranchStore:
    """Abstract branch/merge model; an adapter may bind it to real VCS."""

    def __init__(self, conflict_oracle: Callable[[set, set], list] | None = None):
        self._branches: dict[str, _Branch] = {}
        self._merge_log: dict[str, list[tuple[int, str, set[str]]]] = {"main": []}
        self._oracle = conflict_oracle or path_intersection_oracle
        self._seq = 0
        self._lock = threading.Lock()

    def create(self, name: str, target: str | None) -> None:
        with self._lock:
            if name in self._branches:
                raise InvalidTransitionError(f"branch {name!r} already exists")
            self._seq += 1
            self._branches[name] = _Branch(name, target, self._seq)
            self._merge_log.setdefault(name, [])

    def exists(self, name: str) -> bool:
        return name in self._branches

    def set_changes(self, name: str, change_set: dict[str, str]) -> None:
        branch = self._get(name)
        branch.change_set = dict(change_set)

    def reset(self, name: str) -> None:
        branch = self._get(name)
        branch.change_set = {}
        branch.merged = False

    def _get(self, name: str) -> _Branch:
        branch = self._branches.get(name)
        if branch is None:
            raise NotFoundError(f"unknown branch {name!r}")
        return branch

    def merge(self, name: str, resolution: dict[str, str] | None = None) -> MergeResult:
        """Merge a branch into its target; main only advances via
        integration branches (enforced by the target relation)."""
        with self._lock:
            branch = self._get(name)
            if branch.merged:
                raise InvalidTransitionError(f"branch {name!r} already merged")
            target = branch.target or "main"
            change = dict(resolution) if resolution is not None else branch.change_set
            conflicts: list[str] = []
            if resolution is None:
                for seq, other, paths in self._merge_log.get(target, []):
                    if seq > branch.created_seq:
                        conflicts.extend(self._oracle(set(change), paths))
            if conflicts:
                return MergeResult(False, sorted(set(conflicts)))
            self._seq += 1
            self._merge_log.setdefault(target, []).append(
                (self._seq, name, set(change)))
            branch.merged = True
            return MergeResult(True)

    def merged(self, name: str) -> bool:
        return self._get(name).merged

    def unmerged_count(self) -> int:
        return sum(1 for b in self._branches.values() if not b.merged)

    def merged_into(self, target: str) -> list[str]:
        return [name for _, name, _ in self._merge_log.get(target, [])]

    def snapshot(self) -> dict:
        return {name: {"name": name, "target": b.target, "merged": b.merged,
                       "paths": sorted(b.change_set)}
                for name, b in self._branches.items()}


# --- classifiers -------------------------------------------------------------------

class FixedClassifier:
    """Scripted classifier for tests: fixed outputs per call."""

    def __init__(self, classification="directive", confidence=0.9, recommendation="go"):
        self.classification = classification
        self.confidence = confidence
        self.recommendation = recommendation

    def __call__(self, text: str) -> tuple[str, float, str]:
        return self.classification, self.confidence, self.recommendation


class KeywordClassifier:
    """Demo heuristic: question marks read as exploratory, imperative
    verbs boost confidence."""

    _VERBS = ("add", "build", "implement", "fix", "create", "extract", "compose")

    def __call__(self, text: str) -> tuple[str, float, str]:
        lowered = text.lower()
        exploratory = "?" in text or lowered.startswith(("what", "how", "could"))
        classification = "exploratory" if exploratory else "directive"
        confidence = 0.45 if exploratory else 0.6
        if any(v in lowered for v in self._VERBS):
            confidence += 0.3
        recommendation = "pass" if len(text.strip()) < 4 else (
            "refine" if exploratory else "go")
        return classification, min(confidence, 1.0), recommendation


# --- scripted executor --------------------------------------------------------------

class ScriptedExecutor:
    """Deterministic executor: canned outputs, optional scripted failures."""

    def __init__(self, plan: str = "scripted plan", questions: list[str] | None = None,
                 files: set[str] | None = None,
                 change_set: dict[str, str] | None = None,
                 claims: list[str] | None = None, fail_times: int = 0):
        self._plan = plan
        self._questions = list(questions or [])
        self._files = set(files or set())
        self._change_set = dict(change_set or {})
        self._claims = claims
        self.fail_times = fail_times
        self.runs = 0

    def plan(self, package: dict) -> str:
        return self._plan

    def clarify(self, package: dict) -> list[str]:
        qs = self._questions
        self._questions = []
        return qs

    def declare_files(self, package: dict) -> set[str]:
        return set(self._files) or {f"src/{package['issue_id']}.py"}

    def implement(self, package: dict) -> TaskResult:
        self.runs += 1
        issue = package["issue_id"]
        change = dict(self._change_set) or {f"src/{issue}.py": f"work for {issue} run {self.runs}"}
        if self.runs <= self.fail_times:
            return TaskResult(change_set=change, claims=[])
        claims = self._claims if self._claims is not None else ["*"]
        return TaskResult(change_set=change, claims=claims)


def claims_evaluator(criterion: str, result: TaskResult) -> bool:
    """Default acceptance evaluator: a result satisfies a criterion when it
    claims it explicitly or claims everything ('*')."""
    return "*" in result.claims or criterion in result.claims


# --- planner specs --------------------------------------------------------------------

@dataclass
class ChildSpec:
    title: str
    agent_type: str
    acceptance_criteria: list[str] = field(default_factory=list)
    dependencies: list[int] = field(default_factory=list)  # ordinals of siblings
    files: set[str] = field(default_factory=set)
    description: str = ""
    attachments: list[str] = field(default_factory=list)


class PlannerError(InvalidTransitionError):
    code = "planner-error"


# --- the engine -------------------------------------------------------------------------

class GovernanceEngine:
    def __init__(self, provenance, policy: PolicyConfig, branch_store: BranchStore,
                 clock, registry=None,
                 acceptance_evaluator: Callable[[str, TaskResult], bool] | None = None,
                 adu_types: tuple[str, ...] = DEFAULT_ADU_TYPES,
                 skill_files: dict[str, str] | None = None):
        self._provenance = provenance
        self.policy = policy
        self.branches = branch_store
        self._clock = clock
        self._registry = registry
        self._evaluator = acceptance_evaluator or claims_evaluator
        self.adu_types = adu_types
        self.skill_files = skill_files or {}
        self.issues: dict[str, Issue] = {}
        self.tasks: dict[str, AgentTask] = {}
        self.intents: dict[str, Intent] = {}
        self._seq = 0
        self._adu_instances: dict[str, int] = {}
        self._lock = threading.RLock()
        self.transitions = 0
        self.reload_hooks: list[Callable[[], None]] = []
        self._provenance.register_actor(Actor("nexus", "nexus", "Nexus"))

    # -- plumbing ----------------------------------------------------------
    def _emit(self, actor, kind, summary, *, entity=None, entity_id=None,
              snapshot=None, parent_issue=None, links=None):
        self.transitions += 1
        payload = None
        if entity is not None:
            payload = {"entity": entity, "entity_id": entity_id, "snapshot": snapshot}
        return self._provenance.record(actor, kind, summary, payload=payload,
                                       parent_issue=parent_issue, links=links)

    def _emit_issue(self, actor, kind, summary, issue: Issue, links=None):
        return self._emit(actor, kind, summary, entity="issues", entity_id=issue.id,
                          snapshot=issue.project(),
                          parent_issue=issue.parent or issue.id, links=links)

    def _emit_task(self, actor, kind, summary, task: AgentTask, links=None):
        issue = self.issues[task.issue_id]
        return self._emit(actor, kind, summary, entity="tasks", entity_id=task.id,
                          snapshot=task.project(),
                          parent_issue=issue.parent or issue.id, links=links)

    def _emit_branch(self, actor, summary, name: str):
        return self._emit(actor, "comment", summary, entity="branches",
                          entity_id=name, snapshot=self.branches.snapshot()[name])

    def _next_id(self, prefix: str) -> str:
        self._seq += 1
        return f"{prefix}-{self._seq:04d}"

    def _set_issue_status(self, issue: Issue, status: IssueStatus, actor: str,
                          kind: str = "comment", summary: str | None = None):
        if status == IssueStatus.COMPLETED:
            # merge gate, enforced at the state machine, not by convention
            if issue.feature_branch is None or not self.branches.merged(issue.feature_branch):
                raise InvalidTransitionError(
                    f"issue {issue.id} cannot complete: branch not merged")
        issue.status = status
        self._emit_issue(actor, kind,
                         summary or f"issue {issue.id} -> {status.value}", issue)

    # -- policy -----------------------------------------------------------------
    def set_policy(self, config: PolicyConfig, actor: str) -> None:
        self.policy = config
        self._emit(actor, "intervention", "policy configuration updated",
                   entity="policy", entity_id="policy", snapshot=config.as_dict())

    # -- intents ----------------------------------------------------------------
    def submit_intent(self, text: str, source_actor: str, classifier) -> Intent:
        classification, confidence, recommendation = classifier(text)
        with self._lock:
            intent = Intent(self._next_id("intent"), text, classification,
                            confidence, recommendation, source_actor)
            self.intents[intent.id] = intent
        self._emit(source_actor, "intent-classified",
                   f"intent {intent.id} submitted: {intent.classification} "
                   f"({intent.confidence:.2f}, recommend {intent.recommendation})",
                   entity="intents", entity_id=intent.id, snapshot=intent.project())
        return intent

    def classify_and_gate(self, intent: Intent) -> str:
        """Returns auto-approve | hold-for-human | pass; emits the decision."""
        if intent.recommendation == "pass":
            decision = "pass"
            intent.state = "passed"
        elif (intent.recommendation == "go"
              and intent.confidence >= self.policy.confidence_threshold):
            decision = "auto-approve"
            intent.state = "approved"
        else:
            decision = "hold-for-human"
            intent.state = "held"
            intent.hold_until = self._clock() + self.policy.hold_timeout
        self._emit("nexus", "intent-classified",
                   f"intent {intent.id}: {decision} "
                   f"(confidence {intent.confidence:.2f}, {intent.recommendation})",
                   entity="intents", entity_id=intent.id, snapshot=intent.project())
        return decision

    def confirm_intent(self, intent_id: str, actor: str) -> Intent:
        intent = self.intents[intent_id]
        if intent.state != "held":
            raise InvalidTransitionError(f"intent {intent_id} is not held")
        intent.state = "approved"
        self._emit(actor, "intent-classified", f"intent {intent_id} confirmed by human",
                   entity="intents", entity_id=intent.id, snapshot=intent.project())
        return intent

    def expire_holds(self) -> list[str]:
        """Held intents past their timeout drop back to the backlog."""
        expired = []
        now = self._clock()
        for intent in self.intents.values():
            if intent.state == "held" and intent.hold_until is not None \
                    and now >= intent.hold_until:
                intent.state = "backlog"
                expired.append(intent.id)
                self._emit("nexus", "intent-classified",
                           f"intent {intent.id} hold expired, returned to backlog",
                           entity="intents", entity_id=intent.id,
                           snapshot=intent.project())
        return expired

    # -- issues -------------------------------------------------------------------
    def create_issue(self, title: str, actor: str, description: str = "",
                     parent: str | None = None, agent_type: str | None = None,
                     acceptance_criteria: list[str] | None = None,
                     attachments: list[str] | None = None,
                     status: IssueStatus = IssueStatus.PLANNING) -> Issue:
        with self._lock:
            issue = Issue(id=self._next_id("issue"), title=title,
                          description=description, parent=parent,
                          agent_type=agent_type,
                          acceptance_criteria=list(acceptance_criteria or []),
                          attachments=list(attachments or []), status=status)
            self.issues[issue.id] = issue
        self._emit_issue(actor, "issue-created", f"created issue: {title}", issue)
        return issue

    def get_issue(self, issue_id: str) -> Issue:
        issue = self.issues.get(issue_id)
        if issue is None:
            raise NotFoundError(f"unknown issue {issue_id!r}")
        return issue

    def children(self, parent_id: str) -> list[Issue]:
        return sorted((i for i in self.issues.values() if i.parent == parent_id),
                      key=lambda i: i.ordinal or 0)

    def file_feedback_issue(self, text: str, actor: str, source_view: str = "",
                            screenshot: str | None = None) -> Issue:
        """Feedback from the live review loop lands in the backlog as a
        planning issue, screenshot attached when present."""
        issue = self.create_issue(
            title=text[:80], actor=actor, description=text,
            attachments=[screenshot] if screenshot else [],
            status=IssueStatus.PLANNING)
        self._emit_issue(actor, "feedback-filed",
                         f"feedback filed from {source_view or 'review'}", issue,
                         links=[("agent-detail", screenshot)] if screenshot else None)
        return issue

    # -- decomposition ---------------------------------------------------------------
    def decompose(self, parent_id: str, planner: Callable[[Issue], list[ChildSpec]],
                  actor: str = "nexus") -> list[Issue]:
        """Break a parent issue into child issues with a dependency DAG.

        Children whose declared file sets overlap are consolidated into a
        single task; an integration branch is created for the parent."""
        parent = self.get_issue(parent_id)
        specs = planner(parent)
        if not _dag_ok(specs):
            raise PlannerError("planner proposed cyclic child dependencies")
        specs = _consolidate(specs)

        sl_actor = f"sl-{parent.id}"
        self._provenance.register_actor(
            Actor(sl_actor, "squad-lead", f"Squad Lead {parent.id}"))
        integration = f"integration/{parent.id}"
        if not self.branches.exists(integration):
            self.branches.create(integration, target="main")
            self._emit_branch(sl_actor, f"integration branch {integration} created",
                              integration)
        parent.feature_branch = integration

        children: list[Issue] = []
        with self._lock:
            for ordinal, spec in enumerate(specs, start=1):
                issue = Issue(
                    id=self._next_id("issue"), title=spec.title,
                    description=spec.description, parent=parent.id, ordinal=ordinal,
                    agent_type=spec.agent_type, status=IssueStatus.QUEUED,
                    acceptance_criteria=list(spec.acceptance_criteria),
                    attachments=list(spec.attachments),
                    planned_files=set(spec.files))
                children.append(issue)
                self.issues[issue.id] = issue
            for issue, spec in zip(children, specs):
                issue.dependencies = {children[o - 1].id for o in spec.dependencies}
        for issue in children:
            self._emit_issue(sl_actor, "issue-created",
                             f"child {issue.ordinal}: {issue.title}", issue)
            self._emit_issue("nexus", "delegated",
                             f"delegated {issue.id} to {issue.agent_type} ADU", issue)
        self._set_issue_status(parent, IssueStatus.IN_DEVELOPMENT, "nexus",
                               summary=f"parent {parent.id} decomposed into "
                                       f"{len(children)} children")
        return children

    # -- spawn gates ---------------------------------------------------------------
    def running_tasks(self) -> list[AgentTask]:
        return [t for t in self.tasks.values() if t.state.counts_running]

    def active_locks(self) -> set[str]:
        locks: set[str] = set()
        for t in self.tasks.values():
            if t.state.holds_locks:
                locks |= t.file_locks
        return locks

    def spawn_adu(self, issue_id: str, executor: AgentExecutor,
                  actor: str = "nexus") -> dict:
        """Evaluate the policy gates and, if all pass, create a briefed task.

        Returns {"task": AgentTask} or {"deferred"|"queued": reason}."""
        with self._lock:
            issue = self.get_issue(issue_id)
            if issue.status not in (IssueStatus.QUEUED, IssueStatus.PLANNING):
                raise InvalidTransitionError(
                    f"issue {issue_id} is {issue.status.value}, not spawnable")
            unmet = [d for d in issue.dependencies
                     if self.issues[d].status != IssueStatus.COMPLETED]
            if unmet:
                self._emit_issue(actor, "comment",
                                 f"deferred {issue.id}: dependencies incomplete "
                                 f"{sorted(unmet)}", issue)
                return {"deferred": f"dependencies incomplete: {sorted(unmet)}"}
            if len(self.running_tasks()) >= self.policy.concurrency_cap:
                return {"queued": "concurrency cap reached"}
            overlap = issue.planned_files & self.active_locks()
            if overlap:
                return {"queued": f"file locks held: {sorted(overlap)}"}

            adu_type = issue.agent_type or "backend"
            instance = self._adu_instances.get(adu_type, 0) + 1
            self._adu_instances[adu_type] = instance
            adu_actor = f"adu-{adu_type}-{instance}"
            self._provenance.register_actor(Actor(
                adu_actor, "adu", f"{adu_type} ADU #{instance}",
                agent_type=adu_type, instance=instance))
            branch = issue.feature_branch or (
                f"feature/{issue.parent or 'root'}-{issue.ordinal or issue.id}")
            if not self.branches.exists(branch):
                target = f"integration/{issue.parent}" if issue.parent else "main"
                if issue.parent and not self.branches.exists(target):
                    self.branches.create(target, target="main")
                    self._emit_branch(actor, f"integration branch {target} created",
                                      target)
                self.branches.create(branch, target=target)
                self._emit_branch(actor, f"feature branch {branch} created", branch)
            issue.feature_branch = branch
            task = AgentTask(
                id=self._next_id("task"), issue_id=issue.id, adu_type=adu_type,
                executor=executor, actor_id=adu_actor, feature_branch=branch,
                skill_files={adu_type: self.skill_files.get(adu_type, "")},
                file_locks=set(issue.planned_files),
                briefing_until=self._clock() + self.policy.briefing_pause,
                directive=issue.description or issue.title)
            self.tasks[task.id] = task
        self._emit_task(actor, "spawned",
                        f"spawned {adu_type} ADU for {issue.id} (briefing)", task)
        self._set_issue_status(issue, IssueStatus.IN_DEVELOPMENT, actor)
        return {"task": task}

    def abort_briefing(self, task_id: str, actor: str) -> None:
        task = self._get_task(task_id)
        if task.state != TaskState.BRIEFING:
            raise InvalidTransitionError("task is not in briefing")
        task.state = TaskState.REJECTED
        task.file_locks = set()
        self._emit_task(actor, "rejected", f"task {task.id} aborted during briefing", task)
        issue = self.issues[task.issue_id]
        self._set_issue_status(issue, IssueStatus.QUEUED, actor)

    def _get_task(self, task_id: str) -> AgentTask:
        task = self.tasks.get(task_id)
        if task is None:
            raise NotFoundError(f"unknown task {task_id!r}")
        return task

    # -- the four-phase pipeline ---------------------------------------------------
    def step_task(self, task_id: str) -> str:
        """Advance a task by one pipeline step; returns the resulting state.

        Steps are deliberately small so tests can interleave tasks."""
        with self._lock:
            task = self._get_task(task_id)
            if task.paused:
                return task.state.value
            if task.state == TaskState.BRIEFING:
                if self._clock() >= task.briefing_until:
                    task.state = TaskState.RUNNING
                    self._emit_task(task.actor_id, "comment",
                                    f"task {task.id} briefing complete, running", task)
                return task.state.value
            if task.state == TaskState.REJECTED:
                # re-queued for rework: restart the pipeline, but re-entry
                # goes through the same concurrency gate as a fresh spawn
                if len(self.running_tasks()) >= self.policy.concurrency_cap:
                    return task.state.value
                task.state = TaskState.RUNNING
                task.phase = "planning"
                self._emit_task(task.actor_id, "comment",
                                f"task {task.id} re-entered pipeline", task)
                return task.state.value
            if task.state == TaskState.AWAITING_CLARIFICATION:
                return task.state.value
            if task.state != TaskState.RUNNING:
                return task.state.value

            package = task.package()
            if task.phase == "planning":
                task.plan = task.executor.plan(package)
                task.phase = "clarification"
                self._emit_task(task.actor_id, "comment",
                                f"task {task.id} planned", task)
            elif task.phase == "clarification":
                questions = task.executor.clarify(package)
                if questions:
                    task.questions = list(questions)
                    task.state = TaskState.AWAITING_CLARIFICATION
                    self._emit_task(task.actor_id, "comment",
                                    f"task {task.id} blocked on clarification", task)
                else:
                    task.phase = "file-declaration"
                    self._emit_task(task.actor_id, "comment",
                                    f"task {task.id} has no questions", task)
            elif task.phase == "file-declaration":
                declared = set(task.executor.declare_files(package))
                others = set()
                for t in self.tasks.values():
                    if t.id != task.id and t.state.holds_locks:
                        others |= t.file_locks
                if declared & others:
                    return task.state.value  # wait for the locks to free
                task.file_locks = declared
                task.locks_fixed = True  # fixed after this phase
                task.phase = "implementation"
                self._emit_task(task.actor_id, "comment",
                                f"task {task.id} declared files {sorted(declared)}", task)
            elif task.phase == "implementation":
                try:
                    result = task.executor.implement(package)
                except Exception as exc:
                    task.feedback.append({"kind": "executor-failure", "detail": str(exc)})
                    task.state = TaskState.REJECTED
                    self._emit_task(task.actor_id, "rejected",
                                    f"task {task.id} executor failed: {exc}", task)
                    return task.state.value
                task.result = result
                self.branches.set_changes(task.feature_branch, result.change_set)
                self._emit_branch(task.actor_id,
                                  f"change-set pushed to {task.feature_branch}",
                                  task.feature_branch)
                task.state = TaskState.SUBMITTED
                self._emit_task(task.actor_id, "comment",
                                f"task {task.id} submitted change-set", task)
                issue = self.issues[task.issue_id]
                self._set_issue_status(issue, IssueStatus.IN_REVIEW, task.actor_id)
            return task.state.value

    def answer_clarification(self, task_id: str, answer: str, actor: str) -> AgentTask:
        task = self._get_task(task_id)
        if task.state != TaskState.AWAITING_CLARIFICATION:
            raise InvalidTransitionError("task is not awaiting clarification")
        task.interventions.append({"action": "answer", "text": answer, "actor": actor})
        task.questions = []
        task.state = TaskState.RUNNING
        task.phase = "file-declaration"
        self._emit_task(actor, "intervention",
                        f"clarification answered for task {task.id}", task)
        return task

    # -- acceptance and merging ---------------------------------------------------------
    def validate_acceptance(self, task_id: str) -> dict:
        """Squad-lead acceptance check with bounded re-queue."""
        task = self._get_task(task_id)
        if task.state != TaskState.SUBMITTED:
            raise InvalidTransitionError("task is not submitted")
        issue = self.issues[task.issue_id]
        sl_actor = f"sl-{issue.parent}" if issue.parent else "nexus"
        if sl_actor not in {a.id for a in self._provenance.actors()}:
            self._provenance.register_actor(
                Actor(sl_actor, "squad-lead", f"Squad Lead {issue.parent}"))
        failed = [c for c in issue.acceptance_criteria
                  if not self._evaluator(c, task.result)]
        if not failed:
            self._emit_task(sl_actor, "review",
                            f"task {task.id} passed acceptance", task)
            return {"pass": True}
        feedback = {"kind": "acceptance-failure", "criteria": failed}
        task.feedback.append(feedback)
        if task.requeue_count >= self.policy.max_requeue_cycles:
            task.state = TaskState.ESCALATED
            task.file_locks = set()
            self._emit_task(sl_actor, "rejected",
                            f"task {task.id} failed acceptance: {failed}", task)
            self._emit_task(sl_actor, "review",
                            f"task {task.id} escalated to human review after "
                            f"{task.requeue_count} re-queues", task)
            self._set_issue_status(issue, IssueStatus.BLOCKED, sl_actor)
            return {"pass": False, "escalated": True, "feedback": feedback}
        task.requeue_count += 1
        task.state = TaskState.REJECTED
        self._emit_task(sl_actor, "rejected",
                        f"task {task.id} failed acceptance, re-queued "
                        f"({task.requeue_count}/{self.policy.max_requeue_cycles}): "
                        f"{failed}", task)
        return {"pass": False, "escalated": False, "feedback": feedback}

    def merge_child(self, task_id: str, actor: str | None = None) -> MergeResult:
        """Merge a passing task's feature branch into its integration
        branch; conflicts spawn a Merge ADU."""
        task = self._get_task(task_id)
        if task.state != TaskState.SUBMITTED:
            raise InvalidTransitionError("task is not submitted")
        issue = self.issues[task.issue_id]
        result = self.branches.merge(task.feature_branch)
        who = actor or task.actor_id
        if result.merged:
            task.state = TaskState.MERGED
            task.file_locks = set()
            self._emit_branch(who, f"branch {task.feature_branch} merged",
                              task.feature_branch)
            self._emit_task(who, "merged",
                            f"branch {task.feature_branch} merged", task)
            self._set_issue_status(issue, IssueStatus.COMPLETED, who,
                                   kind="completed",
                                   summary=f"issue {issue.id} completed")
            return result
        self._emit_task(who, "comment",
                        f"merge conflict on {task.feature_branch}: {result.conflicts}",
                        task)
        return result

    def spawn_merge_adu(self, task_id: str, resolver: AgentExecutor,
                        actor: str = "nexus") -> dict:
        """Conflict path: a specialized Merge ADU resolves, or the
        conflicting branches are summarized and their issues re-queued."""
        task = self._get_task(task_id)
        issue = self.issues[task.issue_id]
        instance = self._adu_instances.get("merge", 0) + 1
        self._adu_instances["merge"] = instance
        merge_actor = f"adu-merge-{instance}"
        self._provenance.register_actor(Actor(
            merge_actor, "adu", f"merge ADU #{instance}",
            agent_type="merge", instance=instance))
        self._emit_task(actor, "spawned",
                        f"merge ADU spawned for conflict on {task.feature_branch}", task)
        try:
            resolution = resolver.implement({
                "issue_id": issue.id, "directive": "resolve merge conflict",
                "adu_type": "merge", "feature_branch": task.feature_branch,
                "phase": "implementation", "skill_files": {}, "feedback": [],
                "interventions": []})
        except Exception:
            resolution = None
        if resolution is not None and resolution.change_set:
            merged = self.branches.merge(task.feature_branch,
                                         resolution=resolution.change_set)
            task.state = TaskState.MERGED
            task.file_locks = set()
            self._emit_branch(merge_actor,
                              f"branch {task.feature_branch} merged with resolution",
                              task.feature_branch)
            self._emit_task(merge_actor, "merged",
                            f"conflict on {task.feature_branch} resolved and merged", task)
            self._set_issue_status(issue, IssueStatus.COMPLETED, merge_actor,
                                   kind="completed")
            return {"merged": merged}
        # unresolvable: summarize and retrigger for reimplementation
        summary = f"conflict on {task.feature_branch} unresolvable; re-queued"
        self.branches.reset(task.feature_branch)
        self._emit_branch(merge_actor, f"branch {task.feature_branch} reset",
                          task.feature_branch)
        task.state = TaskState.REJECTED
        task.feedback.append({"kind": "merge-conflict", "detail": summary})
        task.file_locks = set()
        self._emit_task(merge_actor, "correction", summary, task)
        self._set_issue_status(issue, IssueStatus.QUEUED, merge_actor)
        return {"requeued": issue.id}

    def approve_review(self, parent_id: str, actor: str) -> None:
        parent = self.get_issue(parent_id)
        parent.reviewed = True
        self._emit_issue(actor, "review", f"parent {parent_id} review approved", parent)

    def merge_parent(self, parent_id: str, actor: str) -> MergeResult:
        """Gated merge of the integration branch into main: every child
        completed plus a human or rule-permitted auto review."""
        parent = self.get_issue(parent_id)
        children = self.children(parent_id)
        incomplete = [c.id for c in children if c.status != IssueStatus.COMPLETED]
        if incomplete:
            raise InvalidTransitionError(
                f"children incomplete: {incomplete}", detail={"children": incomplete})
        if not parent.reviewed:
            if self.policy.allows_auto_review(parent):
                self.approve_review(parent_id, "nexus")
            else:
                raise InvalidTransitionError(
                    f"parent {parent_id} has no reviewer approval")
        result = self.branches.merge(parent.feature_branch)
        if not result.merged:
            return result
        self._emit_branch(actor, f"branch {parent.feature_branch} merged to main",
                          parent.feature_branch)
        self._emit_issue(actor, "merged",
                         f"integration branch of {parent_id} merged to main", parent)
        self._set_issue_status(parent, IssueStatus.COMPLETED, actor, kind="completed")
        for hook in self.reload_hooks:
            hook()  # live-preview reload signal
        return result

    # -- interventions -----------------------------------------------------------------
    def intervene(self, task_id: str, action: str, actor: str, text: str = "") -> AgentTask:
        task = self._get_task(task_id)
        if task.state in (TaskState.MERGED, TaskState.ESCALATED):
            raise InvalidTransitionError(
                f"cannot intervene on terminal task ({task.state.value})")
        if action in ("comment", "inject-constraint"):
            task.interventions.append({"action": action, "text": text, "actor": actor})
            self._emit_task(actor, "intervention",
                            f"{action} on task {task.id}: {text}", task)
        elif action == "pause":
            task.paused = True
            self._emit_task(actor, "intervention", f"task {task.id} paused", task)
        elif action == "resume":
            task.paused = False
            self._emit_task(actor, "intervention", f"task {task.id} resumed", task)
        elif action == "terminate":
            task.state = TaskState.REJECTED
            task.file_locks = set()
            task.paused = False
            self._emit_task(actor, "intervention", f"task {task.id} terminated", task)
            issue = self.issues[task.issue_id]
            self._set_issue_status(issue, IssueStatus.QUEUED, actor)
            self.tasks.pop(task.id)
        elif action == "redirect":
            task.directive = text
            task.phase = "planning"
            task.state = TaskState.RUNNING
            task.interventions.append({"action": action, "text": text, "actor": actor})
            self._emit_task(actor, "intervention",
                            f"task {task.id} redirected: {text}", task)
        else:
            raise ValueError(f"unknown intervention {action!r}")
        return task

    # -- service mining -------------------------------------------------------------------
    def mine_services(self, requirements: list[dict], actor: str = "nexus") -> dict:
        """Reuse-first: match each capability against the registry; unmet
        requirements become build-new issues under the same admission path."""
        reuse, build = [], []
        for req in requirements:
            matches = []
            if self._registry is not None:
                matches = self._registry.discover_services(
                    text=req.get("text"),
                    required_tags=TagSet(req.get("tags") or ()),
                    input_shape=req.get("input_shape"),
                    output_shape=req.get("output_shape"))
            if matches:
                reuse.append({"requirement": req.get("text"),
                              "service": matches[0].id})
            else:
                issue = self.create_issue(
                    title=f"build service: {req.get('text')}", actor=actor,
                    description=req.get("text") or "", status=IssueStatus.PLANNING)
                build.append(issue)
        return {"reuse": reuse, "build": build}

    # -- convenience loops -----------------------------------------------------------------
    def run_task_to_completion(self, task_id: str, max_steps: int = 50) -> AgentTask:
        """Drive one task through its pipeline, acceptance, and merge."""
        task = self._get_task(task_id)
        for _ in range(max_steps):
            if task.state in (TaskState.MERGED, TaskState.ESCALATED):
                return task
            if task.state == TaskState.SUBMITTED:
                verdict = self.validate_acceptance(task.id)
                if verdict["pass"]:
                    result = self.merge_child(task.id)
                    if not result.merged:
                        return task  # caller decides on the conflict path
                continue
            self.step_task(task.id)
        return task

    def snapshot(self) -> dict:
        return {
            "issues": {i.id: i.project() for i in self.issues.values()},
            "tasks": {t.id: t.project() for t in self.tasks.values()},
            "intents": {i.id: i.project() for i in self.intents.values()},
            "branches": self.branches.snapshot(),
            "policy": self.policy.as_dict(),
        }


def _dag_ok(specs: list[ChildSpec]) -> bool:
    n = len(specs)
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for i, spec in enumerate(specs):
        for dep in spec.dependencies:
            if not 1 <= dep <= n or dep - 1 == i:
                return False
            succ[dep - 1].append(i)
            indeg[i] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while ready:
        i = ready.pop()
        seen += 1
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    return seen == n


def _consolidate(specs: list[ChildSpec]) -> list[ChildSpec]:
    """Merge children whose declared file sets overlap into one task."""
    groups: list[list[int]] = []
    assigned: dict[int, int] = {}
    for i, spec in enumerate(specs):
        target = None
        for gi, group in enumerate(groups):
            if any(specs[j].files & spec.files for j in group if spec.files):
                target = gi
                break
        if target is None:
            groups.append([i])
            assigned[i] = len(groups) - 1
        else:
            groups[target].append(i)
            assigned[i] = target
    if len(groups) == len(specs):
        return specs
    out: list[ChildSpec] = []
    for group in groups:
        first = specs[group[0]]
        merged = ChildSpec(
            title=" + ".join(specs[i].title for i in group),
            agent_type=first.agent_type,
            acceptance_criteria=[c for i in group for c in specs[i].acceptance_criteria],
            files=set().union(*(specs[i].files for i in group)),
            description="\n".join(specs[i].description for i in group),
            attachments=[a for i in group for a in specs[i].attachments])
        deps = set()
        for i in group:
            for dep in specs[i].dependencies:
                if assigned[dep - 1] != assigned[i]:
                    deps.add(assigned[dep - 1] + 1)
        merged.dependencies = sorted(deps)
        out.append(merged)
    return out
