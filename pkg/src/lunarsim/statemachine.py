"""Tick-driven hierarchical state machine with preemption and tracing.

States are modular objects with a small lifecycle: on_enter once, then
tick(ctx) every step until an outcome string is returned. The machine
checks the preemption flag between ticks; a nested machine can stand in
for a state, its terminal outcomes becoming the child state's outcomes.
"""

from dataclasses import dataclass, field

from .errors import StateMachineError

PREEMPTED = "preempted"
TIMEOUT = "timeout"
ABORTED = "aborted"
FAULT = "fault"


class State:
    """Base class for machine states; subclass and override tick."""

    def on_enter(self, ctx):
        pass

    def tick(self, ctx):
        """Return an outcome string, or None to keep running."""
        raise NotImplementedError

    def on_preempt(self, ctx):
        pass


@dataclass
class TraceRecord:
    state: str
    outcome: str
    t_start: float
    t_end: float


@dataclass
class ExecutionTrace:
    records: list = field(default_factory=list)
    final_outcome: str = ""

    def add(self, state, outcome, t_start, t_end):
        self.records.append(TraceRecord(state=state, outcome=outcome,
                                        t_start=t_start, t_end=t_end))


@dataclass
class StateMachine:
    states: dict                  # name -> State (or nested StateMachine)
    transitions: dict             # (state name, outcome) -> target
    initial: str
    terminal_outcomes: tuple = ("success", "failure")
    warnings: list = field(default_factory=list)
    _preempt_requested: bool = False

    def request_preempt(self):
        self._preempt_requested = True

    def clear_preempt(self):
        self._preempt_requested = False


def sm_build(states, transitions, initial,
             terminal_outcomes=("success", "failure")):
    """Validate and assemble a machine.

    Dangling transition targets and a missing initial state are
    construction errors; unreachable states are reported as warnings.
    """
    if initial not in states:
        raise StateMachineError(f"initial state '{initial}' not declared")
    names = set(states)
    terminals = set(terminal_outcomes) | {PREEMPTED, TIMEOUT, ABORTED}
    for (src, outcome), target in transitions.items():
        if src not in names:
            raise StateMachineError(f"transition from undeclared state '{src}'")
        if target not in names and target not in terminals:
            raise StateMachineError(
                f"transition ('{src}', '{outcome}') -> undeclared "
                f"target '{target}'")
    reachable = {initial}
    frontier = [initial]
    while frontier:
        src = frontier.pop()
        for (s, _), target in transitions.items():
            if s == src and target in names and target not in reachable:
                reachable.add(target)
                frontier.append(target)
    warnings = [f"state '{n}' is unreachable from '{initial}'"
                for n in sorted(names - reachable)]
    return StateMachine(states=dict(states), transitions=dict(transitions),
                        initial=initial,
                        terminal_outcomes=tuple(terminal_outcomes),
                        warnings=warnings)


class _ChildAdapter(State):
    """Runs a nested machine as a single state of the parent."""

    def __init__(self, machine):
        self.machine = machine
        self._runner = None

    def on_enter(self, ctx):
        self._runner = _Runner(self.machine, ctx)

    def tick(self, ctx):
        return self._runner.tick()

    def on_preempt(self, ctx):
        self.machine.request_preempt()


class _Runner:
    """Incremental executor: one state tick per call."""

    def __init__(self, machine, ctx):
        self.machine = machine
        self.ctx = ctx
        self.trace = ExecutionTrace()
        self.current = machine.initial
        self.entered = False
        self.t_state_start = self._now()

    def _now(self):
        return float(getattr(self.ctx, "time", 0.0))

    def _state_obj(self, name):
        obj = self.machine.states[name]
        if isinstance(obj, StateMachine):
            obj = _ChildAdapter(obj)
            self.machine.states[name] = obj
        return obj

    def tick(self):
        """Advance one tick; returns a terminal outcome or None."""
        m = self.machine
        if m._preempt_requested:
            state = self._state_obj(self.current)
            state.on_preempt(self.ctx)
            self.trace.add(self.current, PREEMPTED, self.t_state_start,
                           self._now())
            self.trace.final_outcome = PREEMPTED
            return PREEMPTED
        state = self._state_obj(self.current)
        if not self.entered:
            state.on_enter(self.ctx)
            self.entered = True
            self.t_state_start = self._now()
        try:
            outcome = state.tick(self.ctx)
        except Exception as e:  # route declared faults, abort otherwise
            if (self.current, FAULT) in m.transitions:
                outcome = FAULT
            else:
                self.trace.add(self.current, f"error: {e}", self.t_state_start,
                               self._now())
                self.trace.final_outcome = ABORTED
                return ABORTED
        if outcome is None:
            return None
        self.trace.add(self.current, outcome, self.t_state_start, self._now())
        target = m.transitions.get((self.current, outcome))
        if target is None:
            self.trace.final_outcome = ABORTED
            self.trace.add(self.current, f"undeclared outcome '{outcome}'",
                           self.t_state_start, self._now())
            return ABORTED
        if target in m.terminal_outcomes or target in (PREEMPTED, TIMEOUT,
                                                       ABORTED):
            self.trace.final_outcome = target
            return target
        self.current = target
        self.entered = False
        return None


def sm_execute(machine, ctx, tick_budget=100_000, advance=None):
    """Run the machine to a terminal outcome within the tick budget.

    ctx carries whatever the states need (world/robot handles and a `time`
    attribute for the trace). `advance` is called after every tick so the
    caller can move simulation time forward. Budget exhaustion yields a
    timeout outcome with the partial trace.
    """
    runner = _Runner(machine, ctx)
    for _ in range(tick_budget):
        outcome = runner.tick()
        if advance is not None and outcome is None:
            advance(ctx)
        if outcome is not None:
            return runner.trace
    runner.trace.add(runner.current, TIMEOUT, runner.t_state_start,
                     runner._now())
    runner.trace.final_outcome = TIMEOUT
    return runner.trace
