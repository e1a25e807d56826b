"""Task library: PID task-space control law, concrete task types, and the
prioritized compound task.

Every task update produces a triple (jacobian, reference acceleration, error)
against a given model snapshot.  Updates are double buffered: update() writes
the inactive copy and flags it complete; only the servo executor swaps via
consume_update().  The compound task row-stacks the active copies of the
enabled tasks at one priority level, in declaration order.

Binding surface (dot-namespaced by task name, case-sensitive): goalPosition,
goalVelocity, goalAcceleration, goalOrientation, goalAngularVelocity,
goalVector, kp, ki, kd, error, enabled, currentAcceleration.
"""

import numpy as np

from .geometry import quat_conjugate, quat_multiply, quat_from_matrix, skew
from .params import ParameterKind


class TaskError(ValueError):
    pass


class PIDGains:
    """Per-dimension non-negative gain vectors plus the integrator clamp."""

    def __init__(self, dimension, kp=0.0, ki=0.0, kd=0.0, integrator_limit=0.0):
        self.dimension = dimension
        self.kp = self._vec(kp)
        self.ki = self._vec(ki)
        self.kd = self._vec(kd)
        self.integrator_limit = self._vec(integrator_limit)
        for label, v in (("kp", self.kp), ("ki", self.ki), ("kd", self.kd),
                         ("integratorLimit", self.integrator_limit)):
            if np.any(v < 0.0):
                raise TaskError(f"{label} must be non-negative")

    def _vec(self, value):
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            return np.full(self.dimension, float(arr))
        if arr.shape != (self.dimension,):
            raise TaskError(
                f"gain length {arr.shape} does not match task dimension "
                f"{self.dimension}")
        return arr.copy()


class PIDController:
    def __init__(self, gains):
        self.gains = gains
        self.integral = np.zeros(gains.dimension)

    def reset(self):
        self.integral[:] = 0.0

    def command(self, error, error_dot, feedforward, dt):
        if dt <= 0.0:
            raise TaskError("dt must be positive")
        g = self.gains
        if error.shape != (g.dimension,) or error_dot.shape != (g.dimension,):
            raise TaskError("error dimension mismatch")
        self.integral += error * dt
        np.clip(self.integral, -g.integrator_limit, g.integrator_limit,
                out=self.integral)
        return g.kp * error + g.ki * self.integral + g.kd * error_dot + feedforward


class TaskState:
    """One buffered update: Jacobian, reference acceleration, error."""

    __slots__ = ("jacobian", "command", "error", "model_stamp", "seq")

    def __init__(self, dimension, n_dofs):
        self.jacobian = np.zeros((dimension, n_dofs))
        self.command = np.zeros(dimension)
        self.error = np.zeros(dimension)
        self.model_stamp = 0.0
        self.seq = 0


class Task:
    """Base: double-buffered state and the parameter reflection surface."""

    type_name = "Task"

    def __init__(self, name, dimension, n_dofs, gains):
        self.name = name
        self.dimension = dimension
        self.n_dofs = n_dofs
        self.enabled = True
        self.gains = gains
        self.pid = PIDController(gains)
        self._states = [TaskState(dimension, n_dofs), TaskState(dimension, n_dofs)]
        self._active = 0
        self.update_ready = False
        self._update_seq = 0
        self._p_error = None

    # -- buffering protocol (see servo runtime) ---------------------------

    @property
    def active_state(self):
        return self._states[self._active]

    def update(self, model, dt):
        """Recompute the inactive state against a model snapshot.

        Called by the task worker (or inline in single-threaded mode), never
        concurrently with itself.  The completion flag is set only after the
        state is fully written.
        """
        state = self._states[1 - self._active]
        self._compute(model, state, dt)
        state.model_stamp = model.stamp
        self._update_seq += 1
        state.seq = self._update_seq
        if self._p_error is not None:
            self._p_error.set(state.error.copy())
        self.update_ready = True

    def consume_update(self):
        """Servo-side swap; returns the consumed sequence number or None."""
        if not self.update_ready:
            return None
        self.update_ready = False
        self._active = 1 - self._active
        return self.active_state.seq

    def _compute(self, model, state, dt):
        raise NotImplementedError

    # -- parameters --------------------------------------------------------

    def declare_parameters(self, registry):
        registry.declare(self.name, "enabled", ParameterKind.BOOLEAN,
                         self.enabled,
                         setter=lambda v: setattr(self, "enabled", bool(v)))
        registry.declare(self.name, "kp", ParameterKind.VECTOR, self.gains.kp,
                         setter=lambda v: self._set_gain("kp", v))
        registry.declare(self.name, "ki", ParameterKind.VECTOR, self.gains.ki,
                         setter=lambda v: self._set_gain("ki", v))
        registry.declare(self.name, "kd", ParameterKind.VECTOR, self.gains.kd,
                         setter=lambda v: self._set_gain("kd", v))
        self._p_error = registry.declare(self.name, "error",
                                         ParameterKind.VECTOR,
                                         np.zeros(self.dimension),
                                         writable=False)

    def _set_gain(self, which, value):
        arr = self.gains._vec(value)
        if np.any(arr < 0.0):
            raise TaskError(f"{which} must be non-negative")
        getattr(self.gains, which)[:] = arr

    def _declare_goal(self, registry, name, initial):
        return registry.declare(self.name, name, ParameterKind.VECTOR,
                                np.asarray(initial, dtype=float))


class JointPositionTask(Task):
    """Posture objective over all real joints; J is the selection matrix U."""

    type_name = "JointPositionTask"

    def __init__(self, name, model, gains, goal_position=None,
                 goal_velocity=None, goal_acceleration=None):
        n = model.n_joints
        super().__init__(name, n, model.n_dofs, gains)
        self._goal_position = np.zeros(n) if goal_position is None \
            else np.asarray(goal_position, dtype=float)
        self._goal_velocity = np.zeros(n) if goal_velocity is None \
            else np.asarray(goal_velocity, dtype=float)
        self._goal_acceleration = np.zeros(n) if goal_acceleration is None \
            else np.asarray(goal_acceleration, dtype=float)
        for v in (self._goal_position, self._goal_velocity, self._goal_acceleration):
            if v.shape != (n,):
                raise TaskError(f"goal length {v.shape} != n_joints {n}")
        self._p_goal_pos = None
        self._p_current_acc = None

    def declare_parameters(self, registry):
        super().declare_parameters(registry)
        self._p_goal_pos = self._declare_goal(registry, "goalPosition",
                                              self._goal_position)
        self._p_goal_vel = self._declare_goal(registry, "goalVelocity",
                                              self._goal_velocity)
        self._p_goal_acc = self._declare_goal(registry, "goalAcceleration",
                                              self._goal_acceleration)
        self._p_current_acc = registry.declare(
            self.name, "currentAcceleration", ParameterKind.VECTOR,
            np.zeros(self.dimension), writable=False)

    def _goals(self):
        if self._p_goal_pos is not None:
            return (self._p_goal_pos.value, self._p_goal_vel.value,
                    self._p_goal_acc.value)
        return self._goal_position, self._goal_velocity, self._goal_acceleration

    def _compute(self, model, state, dt):
        goal_q, goal_qd, goal_qdd = self._goals()
        state.jacobian[:] = model.underactuation_matrix()
        np.subtract(goal_q, model.q_actual(), out=state.error)
        state.command[:] = self.pid.command(
            state.error, goal_qd - model.qd_actual(), goal_qdd, dt)
        if self._p_current_acc is not None:
            self._p_current_acc.set(np.array(goal_qdd, dtype=float))


class CartesianPositionTask(Task):
    """World-frame position of a body-frame control point on a link."""

    type_name = "CartesianPositionTask"

    def __init__(self, name, model, gains, link, control_point=(0, 0, 0),
                 goal_position=None):
        super().__init__(name, 3, model.n_dofs, gains)
        model.body_index(link)  # validate early
        self.link = link
        self.control_point = np.asarray(control_point, dtype=float)
        if goal_position is None:
            goal_position = np.zeros(3)
        self._p_goal_pos = None
        self._goal_position = np.asarray(goal_position, dtype=float)
        self._goal_velocity = np.zeros(3)
        self._goal_acceleration = np.zeros(3)

    def declare_parameters(self, registry):
        super().declare_parameters(registry)
        self._p_goal_pos = self._declare_goal(registry, "goalPosition",
                                              self._goal_position)
        self._p_goal_vel = self._declare_goal(registry, "goalVelocity",
                                              self._goal_velocity)
        self._p_goal_acc = self._declare_goal(registry, "goalAcceleration",
                                              self._goal_acceleration)

    def current_position(self, model):
        T = model.link_transform(self.link)
        return T[:3, :3] @ self.control_point + T[:3, 3]

    def _goals(self):
        if self._p_goal_pos is not None:
            return (self._p_goal_pos.value, self._p_goal_vel.value,
                    self._p_goal_acc.value)
        return self._goal_position, self._goal_velocity, self._goal_acceleration

    def _compute(self, model, state, dt):
        goal_p, goal_v, goal_a = self._goals()
        model.point_jacobian(self.link, self.control_point, out=state.jacobian)
        np.subtract(goal_p, self.current_position(model), out=state.error)
        vel_error = goal_v - state.jacobian @ model.qd_full
        state.command[:] = self.pid.command(state.error, vel_error, goal_a, dt)


class Orientation3DTask(Task):
    """Full link orientation, goal given as a unit quaternion [w, x, y, z].

    The error is twice the vector part of goal * current^-1 with the sign
    chosen so the scalar part is non-negative (shortest path); both q and -q
    goals therefore produce the same command.
    """

    type_name = "Orientation3DTask"

    def __init__(self, name, model, gains, link, goal_orientation=(1, 0, 0, 0)):
        super().__init__(name, 3, model.n_dofs, gains)
        model.body_index(link)
        self.link = link
        self._goal_orientation = np.asarray(goal_orientation, dtype=float)
        self._goal_angular_velocity = np.zeros(3)
        self._p_goal_quat = None

    def declare_parameters(self, registry):
        super().declare_parameters(registry)
        self._p_goal_quat = self._declare_goal(registry, "goalOrientation",
                                               self._goal_orientation)
        self._p_goal_omega = self._declare_goal(registry, "goalAngularVelocity",
                                                self._goal_angular_velocity)

    def _goals(self):
        if self._p_goal_quat is not None:
            return self._p_goal_quat.value, self._p_goal_omega.value
        return self._goal_orientation, self._goal_angular_velocity

    def _compute(self, model, state, dt):
        goal_q, goal_w = self._goals()
        if abs(np.linalg.norm(goal_q) - 1.0) > 1e-6:
            raise TaskError(
                f"task {self.name!r}: goal quaternion is not unit norm")
        J6 = model.spatial_jacobian(self.link)
        state.jacobian[:] = J6[:3]
        q_cur = quat_from_matrix(model.link_transform(self.link)[:3, :3])
        q_err = quat_multiply(goal_q, quat_conjugate(q_cur))
        if q_err[0] < 0.0:
            q_err = -q_err
        state.error[:] = 2.0 * q_err[1:]
        omega = state.jacobian @ model.qd_full
        state.command[:] = self.pid.command(state.error, goal_w - omega,
                                            np.zeros(3), dt)


class Orientation2DTask(Task):
    """Points a body-fixed heading vector at a world goal direction.

    Two controlled dimensions: the error is the offset of the goal direction
    from the current heading, expressed in an orthonormal basis of the plane
    perpendicular to the heading (Gram-Schmidt against world z, falling back
    to world x when the heading is near vertical).  The goal velocity is
    fixed at zero.
    """

    type_name = "Orientation2DTask"

    def __init__(self, name, model, gains, link, body_vector=(0, 0, 1),
                 goal_vector=(0, 0, 1)):
        super().__init__(name, 2, model.n_dofs, gains)
        model.body_index(link)
        self.link = link
        self.body_vector = _unit(np.asarray(body_vector, dtype=float),
                                 "bodyVector")
        self._goal_vector = _unit(np.asarray(goal_vector, dtype=float),
                                  "goalVector")
        self._p_goal_vec = None

    def declare_parameters(self, registry):
        super().declare_parameters(registry)
        self._p_goal_vec = self._declare_goal(registry, "goalVector",
                                              self._goal_vector)

    def heading(self, model):
        return model.link_transform(self.link)[:3, :3] @ self.body_vector

    def plane_basis(self, heading):
        b1 = np.array([0.0, 0.0, 1.0]) - heading[2] * heading
        if np.linalg.norm(b1) < 1e-6:
            b1 = np.array([1.0, 0.0, 0.0]) - heading[0] * heading
        b1 /= np.linalg.norm(b1)
        b2 = np.cross(heading, b1)
        return np.vstack([b1, b2])

    def _compute(self, model, state, dt):
        goal = _unit(np.asarray(self._goal_vec_value(), dtype=float),
                     "goalVector")
        h = self.heading(model)
        if h @ goal < -1.0 + 1e-9:
            raise TaskError(
                f"task {self.name!r}: heading anti-parallel to goal, "
                "direction undefined")
        B = self.plane_basis(h)
        state.error[:] = B @ (goal - h)
        J6 = model.spatial_jacobian(self.link)
        state.jacobian[:] = B @ (-skew(h)) @ J6[:3]
        vel_error = -(state.jacobian @ model.qd_full)
        state.command[:] = self.pid.command(state.error, vel_error,
                                            np.zeros(2), dt)

    def _goal_vec_value(self):
        if self._p_goal_vec is not None:
            return self._p_goal_vec.value
        return self._goal_vector


class ComTask(Task):
    """Whole-robot center of mass position."""

    type_name = "COMTask"

    def __init__(self, name, model, gains, goal_position=None):
        super().__init__(name, 3, model.n_dofs, gains)
        self._goal_position = np.zeros(3) if goal_position is None \
            else np.asarray(goal_position, dtype=float)
        self._p_goal_pos = None

    def declare_parameters(self, registry):
        super().declare_parameters(registry)
        self._p_goal_pos = self._declare_goal(registry, "goalPosition",
                                              self._goal_position)

    def _compute(self, model, state, dt):
        goal = self._p_goal_pos.value if self._p_goal_pos is not None \
            else self._goal_position
        c, J = model.com()
        state.jacobian[:] = J
        np.subtract(goal, c, out=state.error)
        vel_error = -(state.jacobian @ model.qd_full)
        state.command[:] = self.pid.command(state.error, vel_error,
                                            np.zeros(3), dt)


class CompoundTaskEntry:
    __slots__ = ("task", "priority")

    def __init__(self, task, priority):
        if priority < 0 or int(priority) != priority:
            raise TaskError("priority must be a non-negative integer")
        self.task = task
        self.priority = int(priority)


class CompoundTask:
    """Prioritized task list; lower priority number = higher priority."""

    def __init__(self):
        self.entries = []
        self._buffers = {}

    def add(self, task, priority, enabled=True):
        task.enabled = enabled
        self.entries.append(CompoundTaskEntry(task, priority))

    def task(self, name):
        for e in self.entries:
            if e.task.name == name:
                return e.task
        raise TaskError(f"unknown task {name!r}")

    def set_priority(self, name, priority):
        for e in self.entries:
            if e.task.name == name:
                e.priority = int(priority)
                return
        raise TaskError(f"unknown task {name!r}")

    def tasks(self):
        return [e.task for e in self.entries]

    def enabled_at(self, level):
        return [e.task for e in self.entries
                if e.priority == level and e.task.enabled]

    def levels(self):
        """Priority levels that currently hold at least one enabled task."""
        return sorted({e.priority for e in self.entries if e.task.enabled})

    def aggregate_level(self, level):
        """Row-stacked (jacobian, command) of the enabled tasks at a level,
        in declaration order; None when the level is empty (skipped)."""
        tasks = self.enabled_at(level)
        if not tasks:
            return None
        rows = sum(t.dimension for t in tasks)
        n_dofs = tasks[0].n_dofs
        key = (level, rows, n_dofs)
        bufs = self._buffers.get(key)
        if bufs is None:
            bufs = (np.zeros((rows, n_dofs)), np.zeros(rows))
            self._buffers[key] = bufs
        J, x = bufs
        r = 0
        for t in tasks:
            state = t.active_state
            J[r:r + t.dimension] = state.jacobian
            x[r:r + t.dimension] = state.command
            r += t.dimension
        return J, x


def _unit(v, label):
    n = np.linalg.norm(v)
    if abs(n - 1.0) > 1e-6:
        raise TaskError(f"{label} must be a unit vector")
    return v / n


TASK_TYPES = {
    cls.type_name: cls
    for cls in (JointPositionTask, CartesianPositionTask, Orientation3DTask,
                Orientation2DTask, ComTask)
}
