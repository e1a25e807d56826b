"""Whole-body torque controllers over the constrained, prioritized task stack.

Let U select the actuated joints, N_c the constraint nullspace projector,
UNcBar the dynamically consistent inverse of U N_c, and

    Phi = (U N_c) Ainv (U N_c)'

the mobility metric of the actuated, constraint-consistent subsystem.  The
priority ladder walks levels in ascending priority number; for level k with
row-stacked aggregate (J_level, xdd_level):

    J*_k       = J_level UNcBar
    J*_{k|prev} = J*_k P_{k-1}                        (P_0 = I)
    Lambda*_k  = (J*_{k|prev} Phi J*_{k|prev}')^+      (tolerant)
    tau       += J*_{k|prev}' Lambda*_k xdd_level
    P_k        = P_{k-1} (I - Xbar J*_{k|prev}),
                 Xbar = Phi J*_{k|prev}' Lambda*_k

The Phi-weighted inverse in P_k makes lower levels consistent with every
higher level: J*_{j|prev} Phi J*_{k|prev}' vanishes for j < k.  Velocity and
gravity bias are compensated once, centrally, as UNcBar' (B + G), and an
internal-force reference enters through Lstar', which produces no motion of
the constrained system.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import DEFAULT_TOLERANCE, gram_pinv


class CommandError(RuntimeError):
    pass


@dataclass
class Command:
    """Per-joint output of one controller cycle (real joints, description
    order).  Position/velocity and their gains matter only to impedance-style
    joint controllers; pure torque robots read the effort vector."""

    position: np.ndarray
    velocity: np.ndarray
    effort: np.ndarray
    position_kp: np.ndarray
    position_kd: np.ndarray

    @classmethod
    def zeros(cls, n_joints):
        return cls(np.zeros(n_joints), np.zeros(n_joints), np.zeros(n_joints),
                   np.zeros(n_joints), np.zeros(n_joints))

    def copy(self):
        return Command(self.position.copy(), self.velocity.copy(),
                       self.effort.copy(), self.position_kp.copy(),
                       self.position_kd.copy())


@dataclass
class LimitFlags:
    """Per-class enforcement switches; each entry is a bool applied to every
    joint or a per-joint boolean sequence."""

    effort: object = False
    position: object = False
    velocity: object = False
    max_effort_command: object = None   # warn-only threshold, scalar or per joint


class Wbosc:
    """Effort-only whole-body controller (the priority ladder above)."""

    def __init__(self, n_dofs, n_joints, tolerance=DEFAULT_TOLERANCE,
                 gravity_mask=None):
        self.n_dofs = n_dofs
        self.n_joints = n_joints
        self.tolerance = tolerance
        # gravity_mask[i] True = joint i receives no gravity compensation
        self.gravity_mask = (np.zeros(n_joints, dtype=bool) if gravity_mask is None
                             else np.asarray(gravity_mask, dtype=bool))
        self._tau = np.zeros(n_joints)
        self._eye_j = np.eye(n_joints)
        self.last_ladder = []    # [(level, J_projected, Lambda)] of the last cycle

    def compute(self, model, constraint_set, compound, robot_state,
                internal_force_ref=None):
        levels = compound.levels()
        if not levels:
            raise CommandError("compound task has no enabled tasks")
        Ainv = constraint_set.Ainv
        UNcBar = constraint_set.UNcBar
        U = model.underactuation_matrix()
        UNc = U @ constraint_set.N_c
        Phi = UNc @ Ainv @ UNc.T

        tau = self._tau
        tau[:] = 0.0
        P = self._eye_j.copy()
        ladder = []
        for level in levels:
            aggregate = compound.aggregate_level(level)
            if aggregate is None:
                continue
            J_level, xdd = aggregate
            if not (np.isfinite(J_level).all() and np.isfinite(xdd).all()):
                raise CommandError(
                    f"non-finite aggregate at priority {level}: "
                    f"{self._offending_tasks(compound, level)}")
            J_star = J_level @ UNcBar
            J_proj = J_star @ P
            Lambda = gram_pinv(J_proj @ Phi @ J_proj.T, self.tolerance)
            force = Lambda @ xdd
            tau += J_proj.T @ force
            Xbar = Phi @ J_proj.T @ Lambda
            P = P @ (self._eye_j - Xbar @ J_proj)
            ladder.append((level, J_proj, Lambda))
        self.last_ladder = ladder

        bias = UNcBar.T @ model.B
        grav = UNcBar.T @ model.G
        grav[self.gravity_mask] = 0.0
        tau += bias + grav
        if internal_force_ref is not None:
            tau += constraint_set.Lstar.T @ internal_force_ref

        if not np.isfinite(tau).all():
            raise CommandError("non-finite effort command")
        cmd = Command.zeros(self.n_joints)
        cmd.effort[:] = tau
        cmd.position[:] = robot_state.position
        cmd.velocity[:] = robot_state.velocity
        return cmd

    @staticmethod
    def _offending_tasks(compound, level):
        bad = []
        for task in compound.enabled_at(level):
            state = task.active_state
            if not (np.isfinite(state.jacobian).all()
                    and np.isfinite(state.command).all()):
                bad.append(task.name)
        return bad or [t.name for t in compound.enabled_at(level)]

    def mobility_metric(self, model, constraint_set):
        UNc = model.underactuation_matrix() @ constraint_set.N_c
        return UNc @ constraint_set.Ainv @ UNc.T


class WboscImpedance(Wbosc):
    """Effort controller plus an internal joint-space model.

    The effort command is fed through the constrained forward dynamics of the
    actuated subsystem; the resulting accelerations integrate an internal
    (q_i, qd_i) state semi-implicitly, which is then relaxed toward the
    measured state by a per-cycle factor.  The command carries the internal
    position/velocity and the configured joint impedance gains.
    """

    def __init__(self, n_dofs, n_joints, tolerance=DEFAULT_TOLERANCE,
                 gravity_mask=None, position_kp=0.0, position_kd=0.0,
                 relaxation=0.05):
        super().__init__(n_dofs, n_joints, tolerance, gravity_mask)
        self.position_kp = np.broadcast_to(
            np.asarray(position_kp, dtype=float), (n_joints,)).copy()
        self.position_kd = np.broadcast_to(
            np.asarray(position_kd, dtype=float), (n_joints,)).copy()
        if not 0.0 <= relaxation <= 1.0:
            raise ValueError("relaxation must be in [0, 1]")
        self.relaxation = relaxation
        self._qi = None
        self._qdi = None

    def reset_internal_state(self):
        self._qi = None
        self._qdi = None

    def compute(self, model, constraint_set, compound, robot_state,
                internal_force_ref=None, dt=None):
        if dt is None or dt <= 0.0:
            raise CommandError("impedance controller requires dt > 0")
        cmd = super().compute(model, constraint_set, compound, robot_state,
                              internal_force_ref)
        if self._qi is None:
            self._qi = np.array(robot_state.position, dtype=float)
            self._qdi = np.array(robot_state.velocity, dtype=float)
        qdd_full = constrained_joint_accel(model, constraint_set, cmd.effort)
        qdd = qdd_full[len(model.ordering.virtual_indices):]
        self._qdi += qdd * dt
        self._qi += self._qdi * dt
        a = self.relaxation
        self._qi += a * (robot_state.position - self._qi)
        self._qdi += a * (robot_state.velocity - self._qdi)
        cmd.position[:] = self._qi
        cmd.velocity[:] = self._qdi
        cmd.position_kp[:] = self.position_kp
        cmd.position_kd[:] = self.position_kd
        return cmd


def constrained_joint_accel(model, constraint_set, effort):
    """Forward dynamics of the constraint-consistent subsystem.

    Solves the reduced system over the admissible motion basis E of the
    constraint set:  (E' A E) eta_dd = E' (U' tau - B - G)  and maps back to
    generalized accelerations.
    """
    E = constraint_set.motion_basis()
    if E.shape[1] == 0:
        return np.zeros(model.n_dofs)
    U = model.underactuation_matrix()
    rhs = E.T @ (U.T @ effort - model.B - model.G)
    M = E.T @ model.A @ E
    return E @ np.linalg.solve(M, rhs)


def enforce_limits(command, description, joint_names, flags, warn=None):
    """Truncate command entries to the description limits per the flags.

    Every truncation emits one warning naming the joint.  The
    max_effort_command threshold never truncates, it only warns.
    """
    warnings = []

    def _warn(text):
        warnings.append(text)
        if warn is not None:
            warn(text)

    eff_mask = _flag_mask(flags.effort, len(joint_names))
    pos_mask = _flag_mask(flags.position, len(joint_names))
    vel_mask = _flag_mask(flags.velocity, len(joint_names))
    max_cmd = flags.max_effort_command
    if max_cmd is not None:
        max_cmd = np.broadcast_to(np.asarray(max_cmd, dtype=float),
                                  (len(joint_names),))

    for i, name in enumerate(joint_names):
        joint = description.joint(name)
        if eff_mask[i] and joint.effort_limit is not None:
            lim = joint.effort_limit
            if abs(command.effort[i]) > lim:
                _warn(f"effort command for joint {name!r} truncated to {lim}")
                command.effort[i] = np.clip(command.effort[i], -lim, lim)
        if pos_mask[i] and joint.position_limits is not None:
            lo, hi = joint.position_limits
            if not lo <= command.position[i] <= hi:
                _warn(f"position command for joint {name!r} truncated")
                command.position[i] = np.clip(command.position[i], lo, hi)
        if vel_mask[i] and joint.velocity_limit is not None:
            lim = joint.velocity_limit
            if abs(command.velocity[i]) > lim:
                _warn(f"velocity command for joint {name!r} truncated to {lim}")
                command.velocity[i] = np.clip(command.velocity[i], -lim, lim)
        if max_cmd is not None and abs(command.effort[i]) > max_cmd[i]:
            _warn(f"effort command for joint {name!r} exceeds "
                  f"max_effort_command {max_cmd[i]}")
    return command, warnings


def _flag_mask(flag, n):
    if isinstance(flag, (bool, np.bool_)):
        return np.full(n, bool(flag))
    mask = np.asarray(flag, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f"per-joint flag length {mask.shape} != {n}")
    return mask


CONTROLLER_TYPES = {
    "WBOSC": Wbosc,
    "WBOSC_Impedance": WboscImpedance,
}
