"""Deployment processes: step trees, the unit lifecycle, and the interpreter.

A process is a finite tree of sequential/parallel steps over nine primitive
activities. Execution is saga-style: on the first failed step the interpreter
cancels pending sibling work at the next step boundary and compensates every
completed step in reverse chronological order. Uninstall is the pivot: it
cannot be compensated, so a failure after a completed uninstall can only be
partially rolled back.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol

from . import expr as expr_mod
from .errors import IllegalTransitionError, StepFailure
from .expr import EvalOutcome, Expression

# ---------------------------------------------------------------------------
# Lifecycle


class LifecycleState(str, Enum):
    ABSENT = "ABSENT"
    STAGED = "STAGED"
    INSTALLED = "INSTALLED"
    ACTIVE = "ACTIVE"
    REMOVED = "REMOVED"


class ActivityKind(str, Enum):
    TRANSFER = "transfer"
    COPY = "copy"
    INSTALL = "install"
    CONFIGURE = "configure"
    ACTIVATE = "activate"
    DEACTIVATE = "deactivate"
    UPDATE = "update"
    UNINSTALL = "uninstall"
    VERIFY = "verify"


# State-preserving activities, legal while the unit is materialized on site.
_NEUTRAL = (ActivityKind.COPY, ActivityKind.CONFIGURE, ActivityKind.VERIFY)
_NEUTRAL_STATES = (LifecycleState.STAGED, LifecycleState.INSTALLED, LifecycleState.ACTIVE)

_TRANSITIONS: dict[tuple[LifecycleState, ActivityKind], LifecycleState] = {
    (LifecycleState.ABSENT, ActivityKind.TRANSFER): LifecycleState.STAGED,
    # Staging more resources keeps the unit staged; a unit that ships no
    # resources installs straight from absent. Both are needed so the
    # canonical install template is executable for any resource count.
    (LifecycleState.STAGED, ActivityKind.TRANSFER): LifecycleState.STAGED,
    (LifecycleState.ABSENT, ActivityKind.INSTALL): LifecycleState.INSTALLED,
    (LifecycleState.STAGED, ActivityKind.INSTALL): LifecycleState.INSTALLED,
    (LifecycleState.INSTALLED, ActivityKind.ACTIVATE): LifecycleState.ACTIVE,
    (LifecycleState.ACTIVE, ActivityKind.DEACTIVATE): LifecycleState.INSTALLED,
    (LifecycleState.INSTALLED, ActivityKind.UPDATE): LifecycleState.INSTALLED,
    (LifecycleState.INSTALLED, ActivityKind.UNINSTALL): LifecycleState.REMOVED,
}
for _state in _NEUTRAL_STATES:
    for _kind in _NEUTRAL:
        _TRANSITIONS[(_state, _kind)] = _state


def transition(state: LifecycleState, activity: ActivityKind) -> LifecycleState:
    """Apply the lifecycle transition table; illegal pairs raise."""
    try:
        return _TRANSITIONS[(state, activity)]
    except KeyError:
        raise IllegalTransitionError(state.value, activity.value) from None


# ---------------------------------------------------------------------------
# Process trees


@dataclass(frozen=True)
class Activity:
    kind: ActivityKind
    params: tuple[tuple[str, object], ...] = ()

    @classmethod
    def make(cls, kind: ActivityKind, **params) -> "Activity":
        return cls(kind, tuple(sorted(params.items())))

    def param(self, name: str, default=None):
        for k, v in self.params:
            if k == name:
                return v
        return default


@dataclass(frozen=True)
class Seq:
    steps: tuple["Step", ...]


@dataclass(frozen=True)
class Par:
    branches: tuple["Step", ...]


Step = Activity | Seq | Par


@dataclass(frozen=True)
class ProcessDef:
    id: str
    root: Step


_REQUIRED_PARAMS = {
    ActivityKind.TRANSFER: ("resource",),
    ActivityKind.COPY: ("from", "to"),
    ActivityKind.CONFIGURE: ("params",),
    ActivityKind.UPDATE: ("unit",),
    ActivityKind.VERIFY: (),  # "expr" optional: absent means vacuous OK
}


# ---------------------------------------------------------------------------
# JSON codec: {"seq": [...]}, {"par": [...]}, {"act": "<kind>", ...params}


def step_from_json(node) -> Step:
    if not isinstance(node, dict):
        raise ValueError(f"process node must be an object: {node!r}")
    if "seq" in node:
        return Seq(tuple(step_from_json(c) for c in node["seq"]))
    if "par" in node:
        return Par(tuple(step_from_json(c) for c in node["par"]))
    if "act" in node:
        kind = ActivityKind(node["act"])
        params = {k: v for k, v in node.items() if k != "act"}
        return Activity.make(kind, **params)
    raise ValueError(f"process node needs 'seq', 'par' or 'act': {node!r}")


def step_to_json(step: Step) -> dict:
    if isinstance(step, Seq):
        return {"seq": [step_to_json(c) for c in step.steps]}
    if isinstance(step, Par):
        return {"par": [step_to_json(c) for c in step.branches]}
    out = {"act": step.kind.value}
    out.update({k: v for k, v in step.params})
    return out


def process_from_json(doc, default_id: str = "process") -> ProcessDef:
    if isinstance(doc, dict) and "root" in doc:
        return ProcessDef(id=doc.get("id", default_id), root=step_from_json(doc["root"]))
    return ProcessDef(id=default_id, root=step_from_json(doc))


def process_to_json(p: ProcessDef) -> dict:
    return {"id": p.id, "root": step_to_json(p.root)}


def process_digest(p: ProcessDef) -> str:
    blob = json.dumps(process_to_json(p), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Validation

START_STATES = (
    LifecycleState.ABSENT,
    LifecycleState.STAGED,
    LifecycleState.INSTALLED,
    LifecycleState.ACTIVE,
)


@dataclass(frozen=True)
class ProcessViolation:
    code: str  # MISSING_PARAM | BAD_EXPR | EMPTY_PROCESS | ILLEGAL_SEQUENCE
    path: str
    detail: str = ""


@dataclass(frozen=True)
class ProcessReport:
    violations: tuple[ProcessViolation, ...] = ()
    feasible_starts: tuple[LifecycleState, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {"code": v.code, "path": v.path, "detail": v.detail} for v in self.violations
            ],
            "feasible_starts": [s.value for s in self.feasible_starts],
        }


def activities(step: Step, path: str = "root"):
    """Yield (path, activity) pairs in tree order."""
    if isinstance(step, Activity):
        yield path, step
    elif isinstance(step, Seq):
        for i, child in enumerate(step.steps):
            yield from activities(child, f"{path}.{i}")
    else:
        for i, child in enumerate(step.branches):
            yield from activities(child, f"{path}.{i}")


def linearizations(step: Step, path: str = "root"):
    """All interleavings of the tree as lists of (path, activity)."""
    if isinstance(step, Activity):
        return [[(path, step)]]
    if isinstance(step, Seq):
        result = [[]]
        for i, child in enumerate(step.steps):
            child_lins = linearizations(child, f"{path}.{i}")
            result = [pre + lin for pre in result for lin in child_lins]
        return result
    branch_lins = [linearizations(c, f"{path}.{i}") for i, c in enumerate(step.branches)]
    result = [[]]
    for lins in branch_lins:
        merged = []
        for pre in result:
            for lin in lins:
                merged.extend(_interleave(pre, lin))
        result = merged
    return result


def _interleave(a: list, b: list) -> list[list]:
    if not a:
        return [list(b)]
    if not b:
        return [list(a)]
    return [[a[0]] + rest for rest in _interleave(a[1:], b)] + [
        [b[0]] + rest for rest in _interleave(a, b[1:])
    ]


def validate_process(p: ProcessDef) -> ProcessReport:
    """Structural and lifecycle-plausibility validation.

    A process is lifecycle-plausible when some start state makes every
    linearization of its parallel branches legal under the transition table.
    """
    violations: list[ProcessViolation] = []
    acts = list(activities(p.root))
    if not acts:
        violations.append(ProcessViolation("EMPTY_PROCESS", "root", "no activities"))

    for path, act in acts:
        for name in _REQUIRED_PARAMS.get(act.kind, ()):
            if act.param(name) is None:
                violations.append(
                    ProcessViolation("MISSING_PARAM", path, f"{act.kind.value} needs {name!r}")
                )
        if act.kind is ActivityKind.VERIFY:
            text = act.param("expr")
            if text is not None:
                try:
                    expr_mod.parse_expression(text)
                except expr_mod.ExpressionSyntaxError as err:
                    violations.append(ProcessViolation("BAD_EXPR", path, err.message))

    feasible: list[LifecycleState] = []
    if acts and not violations:
        lins = linearizations(p.root)
        best_witness = None
        best_depth = -1
        for start in START_STATES:
            failed = None
            for lin in lins:
                state = start
                for depth, (path, act) in enumerate(lin):
                    try:
                        state = transition(state, act.kind)
                    except IllegalTransitionError:
                        if depth > best_depth:
                            best_depth = depth
                            best_witness = (path, state, act.kind, start)
                        failed = True
                        break
                if failed:
                    break
            if not failed:
                feasible.append(start)
        if not feasible:
            path, state, kind, start = best_witness
            violations.append(
                ProcessViolation(
                    "ILLEGAL_SEQUENCE",
                    path,
                    f"{kind.value} from {state.value} (start {start.value})",
                )
            )

    return ProcessReport(tuple(violations), tuple(feasible))


# ---------------------------------------------------------------------------
# Execution


class StepOutcome(str, Enum):
    OK = "OK"
    FAILED = "FAILED"
    SKIPPED = "SKIPPED"
    COMPENSATED = "COMPENSATED"
    NON_COMPENSABLE = "NON_COMPENSABLE"


class TraceStatus(str, Enum):
    SUCCESS = "SUCCESS"
    ROLLED_BACK = "ROLLED_BACK"
    PARTIALLY_ROLLED_BACK = "PARTIALLY_ROLLED_BACK"


@dataclass(frozen=True)
class StepEvent:
    path: str
    kind: str
    outcome: StepOutcome
    start: int
    end: int
    detail: str = ""


@dataclass(frozen=True)
class ExecutionTrace:
    deployment_id: str
    process_digest: str
    events: tuple[StepEvent, ...]
    status: TraceStatus

    def to_json(self) -> dict:
        return {
            "deployment": self.deployment_id,
            "process_digest": self.process_digest,
            "status": self.status.value,
            "events": [
                {
                    "path": e.path,
                    "kind": e.kind,
                    "outcome": e.outcome.value,
                    "start": e.start,
                    "end": e.end,
                    "detail": e.detail,
                }
                for e in self.events
            ],
        }


def trace_from_json(doc: dict) -> ExecutionTrace:
    return ExecutionTrace(
        deployment_id=doc["deployment"],
        process_digest=doc["process_digest"],
        status=TraceStatus(doc["status"]),
        events=tuple(
            StepEvent(
                path=e["path"],
                kind=e["kind"],
                outcome=StepOutcome(e["outcome"]),
                start=e["start"],
                end=e["end"],
                detail=e.get("detail", ""),
            )
            for e in doc["events"]
        ),
    )


@dataclass
class ExecutionContext:
    deployment_id: str
    unit: object = None
    params: dict = field(default_factory=dict)
    clock: Callable[[], int] | None = None


class PrimitiveExecutor(Protocol):
    """Runs primitives against one site; each call is atomic.

    ``run`` returns an opaque undo token consumed by ``compensate``.
    Failures are signalled by raising :class:`StepFailure`.
    """

    def run(self, path: str, activity: Activity, ctx: ExecutionContext) -> object: ...

    def compensate(self, path: str, activity: Activity, token: object, ctx: ExecutionContext) -> None: ...


def _schedule(step: Step, path: str = "root"):
    """Deterministic interleaving: parallel branches advance round-robin,
    one primitive per turn."""
    if isinstance(step, Activity):
        yield path, step
        return
    if isinstance(step, Seq):
        for i, child in enumerate(step.steps):
            yield from _schedule(child, f"{path}.{i}")
        return
    iters = [_schedule(child, f"{path}.{i}") for i, child in enumerate(step.branches)]
    while iters:
        remaining = []
        for it in iters:
            item = next(it, None)
            if item is not None:
                yield item
                remaining.append(it)
        iters = remaining


def execute(p: ProcessDef, ctx: ExecutionContext, executor: PrimitiveExecutor) -> ExecutionTrace:
    """Interpret a validated process; compensate on first failure."""
    counter = itertools.count()
    clock = ctx.clock or (lambda: next(counter))
    events: list[StepEvent] = []
    completed: list[tuple[str, Activity, object]] = []  # chronological OK steps
    failure: str | None = None

    steps = list(_schedule(p.root))
    pos = 0
    for pos, (path, act) in enumerate(steps):
        start = clock()
        try:
            token = executor.run(path, act, ctx)
        except StepFailure as err:
            events.append(StepEvent(path, act.kind.value, StepOutcome.FAILED, start, clock(), err.message))
            failure = path
            break
        events.append(StepEvent(path, act.kind.value, StepOutcome.OK, start, clock()))
        completed.append((path, act, token))

    if failure is None:
        return ExecutionTrace(ctx.deployment_id, process_digest(p), tuple(events), TraceStatus.SUCCESS)

    # Pending sibling work cancels at its next step boundary.
    for path, act in steps[pos + 1 :]:
        tick = clock()
        events.append(StepEvent(path, act.kind.value, StepOutcome.SKIPPED, tick, tick))

    partially = False
    for path, act, token in reversed(completed):
        tick = clock()
        if act.kind is ActivityKind.UNINSTALL:
            # Pivot: removal cannot be undone.
            partially = True
            events.append(StepEvent(path, act.kind.value, StepOutcome.NON_COMPENSABLE, tick, tick))
            continue
        executor.compensate(path, act, token, ctx)
        events.append(StepEvent(path, act.kind.value, StepOutcome.COMPENSATED, tick, clock()))

    status = TraceStatus.PARTIALLY_ROLLED_BACK if partially else TraceStatus.ROLLED_BACK
    return ExecutionTrace(ctx.deployment_id, process_digest(p), tuple(events), status)


# ---------------------------------------------------------------------------
# Helpers


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    outcome: EvalOutcome | None = None


def verify_step(expr: Expression | None, site_props: dict) -> VerifyResult:
    """In-process success check: Satisfied passes, anything else fails."""
    if expr is None:
        return VerifyResult(True)
    outcome = expr_mod.evaluate(expr, site_props)
    return VerifyResult(outcome.is_satisfied, outcome)


def default_process_for(unit) -> ProcessDef:
    """Canonical install template when a manifest omits its process:
    transfer each resource in manifest order, install, verify the unit's
    constraints, activate."""
    steps: list[Step] = [
        Activity.make(ActivityKind.TRANSFER, resource=r.name) for r in unit.resources
    ]
    steps.append(Activity.make(ActivityKind.INSTALL))
    conj = expr_mod.conjunction(expr_mod.parse_expression(c) for c in unit.constraints)
    if conj is None:
        steps.append(Activity.make(ActivityKind.VERIFY))
    else:
        steps.append(Activity.make(ActivityKind.VERIFY, expr=expr_mod.print_expression(conj)))
    steps.append(Activity.make(ActivityKind.ACTIVATE))
    return ProcessDef(id=f"{unit.id}.install", root=Seq(tuple(steps)))
