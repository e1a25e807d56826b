"""Servo runtime: clocks, the worker architecture, and the coordinator loop.

Execution model
---------------
Multi-threaded mode runs exactly three contexts: the servo executor (whoever
calls servo_update), a model worker, and a task worker.  Shared state is two
model copies behind one guard, per-task double buffers behind completion
flags, and the worker trigger events.  The servo executor only ever uses
non-blocking try-acquire on the guard; workers may block on their own
triggers.

One servo cycle: read robot state, check for updates, stage joint state for
the model worker (try-acquire; skip on contention), check again, compute the
command from the active copies, emit events, write, publish diagnostics.

check_for_updates pulls completed task updates, re-scans once more when the
task worker is idle (without the second scan, updates completed between the
first scan and the idle check could be lost permanently: the worker only
reports per-task completion after it finishes each task, so a scan racing
the end of a round can miss the tasks it already passed), then swaps the
model pair when the inactive copy is fresh.  The task worker is handed the
new active model and triggered only while idle; if it is busy the trigger is
deferred to the first later cycle that finds it idle.  Staging is skipped
while the task worker is still reading the copy that would be overwritten.

Single-threaded mode replaces the staging/check steps with direct inline
model and task updates every cycle.
"""

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .controller import CommandError, WboscImpedance, enforce_limits

PHASES = ("read", "update_model", "compute_command", "emit_events", "write")


class ServoError(RuntimeError):
    pass


# -- clocks ------------------------------------------------------------------

class LockstepClock:
    """Simulated clock: exactly one period per tick, no jitter."""

    kind = "simulated-lockstep"

    def __init__(self, frequency):
        if frequency <= 0:
            raise ServoError("frequency must be positive")
        self.frequency = frequency
        self.period = 1.0 / frequency
        self._ticks = 0

    def now(self):
        return self._ticks * self.period

    def tick(self):
        self._ticks += 1


class MonotonicClock:
    """Wall clock: sleeps to the next period boundary, records overruns."""

    kind = "monotonic"

    def __init__(self, frequency):
        if frequency <= 0:
            raise ServoError("frequency must be positive")
        self.frequency = frequency
        self.period = 1.0 / frequency
        self.overruns = 0
        self._deadline = None

    def now(self):
        return time.monotonic()

    def tick(self):
        now = time.monotonic()
        if self._deadline is None:
            self._deadline = now + self.period
            return
        if now > self._deadline:
            self.overruns += 1
            self._deadline = now + self.period
            return
        time.sleep(self._deadline - now)
        self._deadline += self.period


def make_clock(kind, frequency):
    if kind in ("simulated-lockstep", "lockstep"):
        return LockstepClock(frequency)
    if kind == "monotonic":
        return MonotonicClock(frequency)
    raise ServoError(f"unknown servo clock type {kind!r}")


# -- instrumentation -----------------------------------------------------------

class CountingLock:
    """Lock wrapper that counts blocking acquires made by the servo thread.

    The servo executor must never block; the counter turns that rule into a
    measurable property instead of a convention.
    """

    def __init__(self, stats):
        self._lock = threading.Lock()
        self._stats = stats

    def acquire(self, blocking=True):
        if blocking and self._stats is not None \
                and threading.get_ident() == self._stats.servo_thread_ident:
            self._stats.servo_blocking_acquires += 1
        return self._lock.acquire(blocking)

    def release(self):
        self._lock.release()

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()


@dataclass
class RuntimeStats:
    servo_thread_ident: int = 0
    servo_blocking_acquires: int = 0
    lost_task_updates: int = 0
    consumed_task_updates: int = 0
    model_swaps: int = 0
    staging_skips: int = 0
    suppressed_commands: int = 0


@dataclass
class ServoHooks:
    """Optional synchronization points for deterministic interleaving tests."""

    first_scan_step: object = None      # fn(task_index) after each first-scan check
    task_worker_gate: object = None     # fn() at the start of each worker round
    model_worker_gate: object = None
    after_task_trigger: object = None   # fn() right after the worker is triggered


# -- double-buffered model -----------------------------------------------------

class ServoModel:
    """One model copy plus the constraint set derived from it."""

    def __init__(self, model, constraint_set):
        self.model = model
        self.constraints = constraint_set

    def update(self, q_act, qd_act, stamp):
        q_full = self.model.full_from_actual(q_act)
        qd_full = self.model.full_from_actual(qd_act)
        self.model.update_kinematics(q_full, qd_full)
        self.model.stamp = stamp
        self.constraints.update(self.model)


class DoubleBuffer:
    """Active/inactive pair; the servo side only try-acquires the guard."""

    def __init__(self, active, inactive, stats=None):
        self.active = active
        self.inactive = inactive
        self.guard = CountingLock(stats)
        self.update_ready = False
        self.last_update_timestamp = 0.0

    def swap(self, stamp):
        self.active, self.inactive = self.inactive, self.active
        self.update_ready = False
        self.last_update_timestamp = stamp


# -- workers ---------------------------------------------------------------------

class ModelWorker:
    """Updates the inactive model copy from staged joint state on trigger."""

    def __init__(self, buffers, n_joints, hooks=None, delay=None,
                 on_error=None):
        self.buffers = buffers
        self._staged_q = np.zeros(n_joints)
        self._staged_qd = np.zeros(n_joints)
        self._staged_stamp = 0.0
        self._trigger = threading.Event()
        self._stop = threading.Event()
        self._hooks = hooks
        self._delay = delay
        self._on_error = on_error
        self.rounds = 0
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="model-updater")

    def start(self):
        self._thread.start()

    def stop(self):
        self._stop.set()
        self._trigger.set()
        if self._thread.is_alive():
            self._thread.join(timeout=2.0)

    def stage(self, state, stamp):
        """Caller must hold the buffer guard (servo-side try-acquire)."""
        self._staged_q[:] = state.position
        self._staged_qd[:] = state.velocity
        self._staged_stamp = stamp

    def trigger(self):
        self._trigger.set()

    def _run(self):
        while not self._stop.is_set():
            if not self._trigger.wait(timeout=0.2):
                continue
            self._trigger.clear()
            if self._stop.is_set():
                return
            if self._hooks is not None and self._hooks.model_worker_gate:
                self._hooks.model_worker_gate()
            if self._delay is not None:
                time.sleep(self._delay())
            try:
                with self.buffers.guard:
                    self.buffers.inactive.update(self._staged_q,
                                                 self._staged_qd,
                                                 self._staged_stamp)
                    self.buffers.update_ready = True
            except Exception as exc:
                if self._on_error is not None:
                    self._on_error(f"model update failed: {exc}")
            self.rounds += 1


class TaskWorker:
    """Updates every enabled task against a model snapshot on trigger.

    Per-task completion flags are set by Task.update only after the state is
    fully written; the worker reports idle only after the whole round."""

    def __init__(self, compound, period, hooks=None, delay=None,
                 on_error=None):
        self.compound = compound
        self.period = period
        self.busy = False
        self.snapshot = None
        self._trigger = threading.Event()
        self._stop = threading.Event()
        self._hooks = hooks
        self._delay = delay
        self._on_error = on_error
        self.rounds = 0
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="task-updater")

    def start(self):
        self._thread.start()

    def stop(self):
        self._stop.set()
        self._trigger.set()
        if self._thread.is_alive():
            self._thread.join(timeout=2.0)

    def trigger(self, servo_model):
        """Servo-side; callers must only trigger while idle."""
        self.snapshot = servo_model
        self.busy = True
        self._trigger.set()

    def _run(self):
        while not self._stop.is_set():
            if not self._trigger.wait(timeout=0.2):
                continue
            self._trigger.clear()
            if self._stop.is_set():
                return
            if self._hooks is not None and self._hooks.task_worker_gate:
                self._hooks.task_worker_gate()
            if self._delay is not None:
                time.sleep(self._delay())
            model = self.snapshot.model
            for task in self.compound.tasks():
                if not task.enabled:
                    continue
                try:
                    task.update(model, self.period)
                except Exception as exc:
                    if self._on_error is not None:
                        self._on_error(f"task {task.name!r} update failed: {exc}")
            self.rounds += 1
            self.busy = False


# -- coordinator -------------------------------------------------------------------

@dataclass
class CycleResult:
    cycle: int = 0
    command: object = None
    suppressed: bool = False
    model_swapped: bool = False
    consumed_updates: int = 0
    timings: dict = field(default_factory=dict)


class ServoRuntime:
    """Owns the servo loop state machine and the two child workers."""

    def __init__(self, name, model_pair, compound, wbc, interface, clock,
                 registry=None, publish=None, limit_flags=None,
                 description=None, single_threaded_model=False,
                 single_threaded_tasks=False, hooks=None,
                 worker_delay=None, history=2048, warn_staleness=None):
        self.name = name
        self.compound = compound
        self.wbc = wbc
        self.interface = interface
        self.clock = clock
        self.registry = registry
        self._publish = publish
        self.limit_flags = limit_flags
        self.description = description
        self.single_threaded_model = single_threaded_model
        self.single_threaded_tasks = single_threaded_tasks
        self.hooks = hooks or ServoHooks()
        self.warn_staleness = warn_staleness
        self.stats = RuntimeStats()
        self.buffers = DoubleBuffer(model_pair[0], model_pair[1], self.stats)
        self.model_worker = None
        self.task_worker = None
        self._task_trigger_pending = False
        self._second_scan_enabled = True      # the starvation fix; tests may flip
        self._worker_delay = worker_delay
        self._last_task_seq = {}
        self.cycle_count = 0
        self._initialized = False
        self._last_command = None
        self._prev_cycle_start = None
        self.last_model_swap_time = 0.0
        self.last_result = CycleResult()
        n = len(PHASES)
        self._history_len = history
        self._phase_history = np.zeros((n, history))
        self._cycle_latency = np.zeros(history)
        self._frequency = np.zeros(history)
        self._snapshot_lock = threading.Lock()
        self._snapshot = {}

    # -- lifecycle ---------------------------------------------------------

    @property
    def active(self):
        return self.buffers.active

    @property
    def period(self):
        return self.clock.period

    def servo_init(self):
        """Blocking read, prime both model copies, start idle workers."""
        self.stats.servo_thread_ident = threading.get_ident()
        state = self.interface.read()
        now = self.clock.now()
        for servo_model in (self.buffers.active, self.buffers.inactive):
            servo_model.update(state.position, state.velocity, now)
        for task in self.compound.tasks():
            task.update(self.active.model, self.period)
            task.consume_update()
            self._last_task_seq[task.name] = task._update_seq
        self.last_model_swap_time = now

        def worker_error(text):
            self.publish("diagnostics/errors", text)

        if not self.single_threaded_model:
            self.model_worker = ModelWorker(self.buffers,
                                            self.active.model.n_joints,
                                            self.hooks, self._worker_delay,
                                            on_error=worker_error)
            self.model_worker.start()
        if not self.single_threaded_tasks:
            self.task_worker = TaskWorker(self.compound, self.period,
                                          self.hooks, self._worker_delay,
                                          on_error=worker_error)
            self.task_worker.start()
        self._initialized = True
        return self

    def stop(self):
        if self.model_worker is not None:
            self.model_worker.stop()
        if self.task_worker is not None:
            self.task_worker.stop()

    def __enter__(self):
        if not self._initialized:
            self.servo_init()
        return self

    def __exit__(self, *exc):
        self.stop()

    # -- update pulling -------------------------------------------------------

    def _scan_tasks(self, first_scan):
        consumed = 0
        hook = self.hooks.first_scan_step if first_scan else None
        for idx, task in enumerate(self.compound.tasks()):
            seq = task.consume_update()
            if seq is not None:
                consumed += 1
                last = self._last_task_seq.get(task.name, 0)
                if seq > last + 1:
                    self.stats.lost_task_updates += seq - last - 1
                self._last_task_seq[task.name] = seq
            if hook is not None:
                hook(idx)
        self.stats.consumed_task_updates += consumed
        return consumed

    def check_for_updates(self):
        """Pull task updates (with the post-idle re-scan), then swap in a
        fresh model and hand it to the task worker when possible."""
        consumed = self._scan_tasks(first_scan=True)
        if (self._second_scan_enabled and self.task_worker is not None
                and not self.task_worker.busy):
            consumed += self._scan_tasks(first_scan=False)
        swapped = False
        if self.model_worker is not None \
                and self.buffers.guard.acquire(blocking=False):
            try:
                if self.buffers.update_ready:
                    self.buffers.swap(self.clock.now())
                    swapped = True
            finally:
                self.buffers.guard.release()
        if swapped:
            self.stats.model_swaps += 1
            self.last_model_swap_time = self.buffers.last_update_timestamp
            self._task_trigger_pending = True
        if self._task_trigger_pending and self.task_worker is not None \
                and not self.task_worker.busy:
            self.task_worker.trigger(self.active)
            self._task_trigger_pending = False
            if self.hooks.after_task_trigger is not None:
                self.hooks.after_task_trigger()
        return consumed, swapped

    def _stage_model_update(self, state):
        """Hand the latest joint state to the model worker without blocking."""
        if self.task_worker is not None and self.task_worker.busy \
                and self.task_worker.snapshot is self.buffers.inactive:
            # the worker is still reading the copy we would overwrite
            self.stats.staging_skips += 1
            return False
        if not self.buffers.guard.acquire(blocking=False):
            self.stats.staging_skips += 1
            return False
        try:
            self.model_worker.stage(state, self.clock.now())
        finally:
            self.buffers.guard.release()
        self.model_worker.trigger()
        return True

    # -- the servo cycle --------------------------------------------------------

    def servo_update(self):
        if not self._initialized:
            raise ServoError("servo_init has not run")
        t_cycle = time.perf_counter()
        now = self.clock.now()
        if self.registry is not None:
            self.registry.drain_staged()

        t0 = time.perf_counter()
        state = self.interface.read()
        t_read = time.perf_counter() - t0

        result = self.last_result
        result.cycle = self.cycle_count
        result.suppressed = False
        result.model_swapped = False
        result.consumed_updates = 0

        t0 = time.perf_counter()
        if self.single_threaded_model:
            self.active.update(state.position, state.velocity, now)
            self.last_model_swap_time = now
        else:
            consumed, swapped = self.check_for_updates()
            result.consumed_updates += consumed
            result.model_swapped |= swapped
            self._stage_model_update(state)
            consumed, swapped = self.check_for_updates()
            result.consumed_updates += consumed
            result.model_swapped |= swapped
        if self.single_threaded_tasks:
            # inline task state refresh counts as state-update work
            for task in self.compound.tasks():
                if task.enabled:
                    task.update(self.active.model, self.period)
                    task.consume_update()
        t_model = time.perf_counter() - t0

        t0 = time.perf_counter()
        command = None
        try:
            command = self._compute_command(state)
        except CommandError as exc:
            self.stats.suppressed_commands += 1
            result.suppressed = True
            self.publish("diagnostics/errors", str(exc))
        t_compute = time.perf_counter() - t0

        t0 = time.perf_counter()
        fired = ()
        if self.registry is not None:
            fired = self.registry.emit_events(
                warn=lambda msg: self.publish("diagnostics/warnings", msg))
            for event_name in fired:
                self.publish("events", event_name)
        t_events = time.perf_counter() - t0

        t0 = time.perf_counter()
        if command is not None:
            self.interface.write(command)
            self._last_command = command
        elif self._last_command is not None:
            # suppressed cycle: hold the last good command
            self.interface.write(self._last_command)
        t_write = time.perf_counter() - t0

        result.command = command
        self._record_cycle(t_cycle, t_read, t_model, t_compute, t_events,
                           t_write, now, state, command)
        self.cycle_count += 1
        return result

    def _compute_command(self, state):
        kwargs = {}
        if isinstance(self.wbc, WboscImpedance):
            kwargs["dt"] = self.period
        command = self.wbc.compute(self.active.model, self.active.constraints,
                                   self.compound, state, **kwargs)
        if self.limit_flags is not None and self.description is not None:
            _, warnings = enforce_limits(
                command, self.description,
                self.active.model.ordering.real_joint_names,
                self.limit_flags)
            for text in warnings:
                self.publish("diagnostics/warnings", text)
        if not np.isfinite(command.effort).all():
            raise CommandError("command includes NaN values")
        return command

    def _record_cycle(self, t_cycle, t_read, t_model, t_compute, t_events,
                      t_write, now, state, command):
        idx = self.cycle_count % self._history_len
        total = time.perf_counter() - t_cycle
        for row, value in enumerate((t_read, t_model, t_compute, t_events,
                                     t_write)):
            self._phase_history[row, idx] = value
        self._cycle_latency[idx] = total
        if self._prev_cycle_start is not None:
            dt = now - self._prev_cycle_start
            self._frequency[idx] = (1.0 / dt) if dt > 0 else 0.0
        self._prev_cycle_start = now

        model_latency = now - self.last_model_swap_time
        if self.warn_staleness is not None and model_latency > self.warn_staleness:
            self.publish("diagnostics/warnings",
                         f"model staleness {model_latency:.6f}s")
        self.publish("diagnostics/servoFrequency", self._frequency[idx])
        self.publish("diagnostics/servoComputeLatency", total)
        self.publish("diagnostics/modelLatency", model_latency)
        self.publish("diagnostics/gravityVector",
                     self.active.model.G.copy())
        self.publish("diagnostics/jointState", state.position.copy())
        if command is not None:
            self.publish("diagnostics/command", command.effort.copy())
        if self._snapshot_lock.acquire(blocking=False):
            try:
                self._snapshot = {
                    "cycle": self.cycle_count,
                    "state": state,
                    "command": command,
                    "model_latency": model_latency,
                }
            finally:
                self._snapshot_lock.release()

    def snapshot(self):
        """Most recent completed cycle, for out-of-context introspection."""
        with self._snapshot_lock:
            return dict(self._snapshot)

    def publish(self, topic, value):
        if self._publish is not None:
            self._publish(f"{self.name}/{topic}", value)

    # -- run helpers -------------------------------------------------------------

    def run(self, cycles=None, duration=None):
        if cycles is None:
            if duration is None:
                raise ServoError("run needs cycles or duration")
            cycles = int(round(duration * self.clock.frequency))
        if not self._initialized:
            self.servo_init()
        for _ in range(cycles):
            self.servo_update()
            self.clock.tick()
        return self.cycle_count

    def phase_stats(self, last_n=None):
        """Mean/std per phase over the recorded window, in seconds."""
        n = min(self.cycle_count, self._history_len)
        if last_n is not None:
            n = min(n, last_n)
        out = {}
        if n == 0:
            return out
        idx = [(self.cycle_count - 1 - k) % self._history_len for k in range(n)]
        for row, phase in enumerate(PHASES):
            window = self._phase_history[row, idx]
            out[phase] = (float(window.mean()), float(window.std()))
        window = self._cycle_latency[idx]
        out["total"] = (float(window.mean()), float(window.std()))
        return out
