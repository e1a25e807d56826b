"""Kinematics and dynamics of a branched floating-base robot.

Generalized coordinate layout
-----------------------------
When the description has a floating joint it is expanded into six virtual
single-DOF joints placed first in the generalized vector: three prismatic
(world x, y, z translation) followed by three revolute (Euler x-y-z
rotations), chained through massless intermediate bodies.  Real joints follow
in description order.  Fixed-base robots have no virtual DOFs.

Spatial algebra
---------------
All spatial quantities are expressed in world coordinates at the world-origin
Plucker frame, angular block above linear.  With every body referred to one
common frame the composite-rigid-body and recursive-Newton-Euler passes need
no per-joint coordinate transforms:

- motion subspace of a revolute DOF at world point p with world axis w:
  S = [w; p x w]; of a prismatic DOF: S = [0; w]
- spatial inertia of a body with mass m, world com c, world rotational
  inertia I_c about the com:  [[I_c + m*cx*cx^T, m*cx], [m*cx^T, m*E]]

The mass matrix comes from the composite-rigid-body recursion, the gravity
vector from a zero-velocity zero-acceleration inverse-dynamics pass, and the
Coriolis/centrifugal vector from the full bias pass minus gravity.
"""

from dataclasses import dataclass

import numpy as np

from .description import RobotDescription
from .geometry import make_transform, rot_x, rot_y, rot_z, rpy_matrix, skew

_VIRTUAL_SPECS = (
    ("_virtual_tx", "prismatic", np.array([1.0, 0.0, 0.0])),
    ("_virtual_ty", "prismatic", np.array([0.0, 1.0, 0.0])),
    ("_virtual_tz", "prismatic", np.array([0.0, 0.0, 1.0])),
    ("_virtual_rx", "revolute", np.array([1.0, 0.0, 0.0])),
    ("_virtual_ry", "revolute", np.array([0.0, 1.0, 0.0])),
    ("_virtual_rz", "revolute", np.array([0.0, 0.0, 1.0])),
)


class ModelError(ValueError):
    pass


@dataclass
class RobotState:
    """Measured joint state for the real joints, in description order."""

    timestamp: float
    position: np.ndarray
    velocity: np.ndarray
    effort: np.ndarray

    def copy(self):
        return RobotState(self.timestamp, self.position.copy(),
                          self.velocity.copy(), self.effort.copy())


@dataclass
class JointOrdering:
    """Index bookkeeping between generalized DOFs and real/actuated joints."""

    virtual_indices: list
    real_indices: list
    actuated_indices: list
    real_joint_names: list


class _Body:
    """One node of the compiled tree (real link or virtual intermediate)."""

    __slots__ = ("name", "parent", "origin", "jtype", "axis", "dof",
                 "mass", "com", "inertia", "dof_path")

    def __init__(self, name, parent, origin, jtype, axis, dof, mass, com, inertia):
        self.name = name
        self.parent = parent          # body index, -1 for the world
        self.origin = origin          # constant parent_T_joint
        self.jtype = jtype            # revolute | prismatic | fixed
        self.axis = axis
        self.dof = dof                # generalized index or None
        self.mass = mass
        self.com = com
        self.inertia = inertia
        self.dof_path = ()            # DOFs on the root path, set after build


class RobotModel:
    """Kinematic/dynamic state for one configuration of a robot description.

    Call :meth:`update_kinematics` before reading any configuration-dependent
    quantity.  Instances are single-writer: the servo runtime owns an
    active/inactive pair and this class makes no cross-thread guarantees.
    """

    def __init__(self, description: RobotDescription):
        self.description = description
        self._bodies = []
        self._body_index = {}
        self._build()
        n = self.n_dofs
        L = len(self._bodies)

        self.q_full = np.zeros(n)
        self.qd_full = np.zeros(n)
        self.A = np.zeros((n, n))
        self.B = np.zeros(n)
        self.G = np.zeros(n)
        self.stamp = 0.0              # set by the runtime; staleness = now - stamp
        self._fresh = False

        # preallocated workspaces (sized once, reused every update)
        self._T = np.zeros((L, 4, 4))
        self._com_w = np.zeros((L, 3))
        self._I_w = np.zeros((L, 6, 6))
        self._IC = np.zeros((L, 6, 6))
        self._S = np.zeros((n, 6))
        self._axis_w = np.zeros((n, 3))
        self._org_w = np.zeros((n, 3))
        self._v = np.zeros((L, 6))
        self._a = np.zeros((L, 6))
        self._f = np.zeros((L, 6))
        self._tau = np.zeros(n)
        self._a0 = np.zeros(6)
        self._zero6 = np.zeros(6)
        self._vj = np.zeros(6)
        self._eye4 = np.eye(4)
        self._eye3 = np.eye(3)
        self._jointT = np.eye(4)
        self._motion = np.eye(4)
        self._dof_paths = [np.array(b.dof_path, dtype=int) for b in self._bodies]
        self._U = self._build_underactuation()

    # -- construction ----------------------------------------------------

    def _build(self):
        desc = self.description
        root = desc.root_link_name
        dof_counter = 0
        order = []

        fj = desc.floating_joint
        if fj is not None:
            parent_idx = -1
            base_origin = make_transform(
                rpy_matrix(*fj.origin_rpy), fj.origin_xyz)
            for k, (vname, vtype, vaxis) in enumerate(_VIRTUAL_SPECS):
                origin = base_origin if k == 0 else np.eye(4)
                last = k == len(_VIRTUAL_SPECS) - 1
                link = desc.link(root) if last else None
                body = _Body(
                    name=root if last else vname,
                    parent=parent_idx,
                    origin=origin,
                    jtype=vtype,
                    axis=vaxis,
                    dof=dof_counter,
                    mass=link.mass if last else 0.0,
                    com=link.com if last else np.zeros(3),
                    inertia=link.inertia if last else np.zeros((3, 3)),
                )
                parent_idx = len(self._bodies)
                self._bodies.append(body)
                dof_counter += 1
            self._body_index[root] = parent_idx
            self._n_virtual = 6
        else:
            link = desc.link(root)
            self._bodies.append(_Body(root, -1, np.eye(4), "fixed",
                                      np.zeros(3), None,
                                      link.mass, link.com, link.inertia))
            self._body_index[root] = 0
            self._n_virtual = 0

        # attach remaining links in joint-description order; a tree guarantees
        # this terminates, but parents may appear later in the list so iterate
        pending = [j for j in desc.joints if j.type != "floating"]
        real_names = []
        progress = True
        while pending and progress:
            progress = False
            remaining = []
            for j in pending:
                if j.parent not in self._body_index:
                    remaining.append(j)
                    continue
                link = desc.link(j.child)
                dof = None
                if j.type in ("revolute", "prismatic"):
                    dof = self._n_virtual + len(real_names)
                    real_names.append(j.name)
                body = _Body(
                    name=j.child,
                    parent=self._body_index[j.parent],
                    origin=make_transform(rpy_matrix(*j.origin_rpy), j.origin_xyz),
                    jtype=j.type if dof is not None else "fixed",
                    axis=j.axis,
                    dof=dof,
                    mass=link.mass,
                    com=link.com,
                    inertia=link.inertia,
                )
                self._body_index[j.child] = len(self._bodies)
                self._bodies.append(body)
                progress = True
            pending = remaining
        if pending:
            raise ModelError(
                f"unreachable joints: {[j.name for j in pending]}")
        order.extend(real_names)

        n_real = len(real_names)
        self.n_dofs = self._n_virtual + n_real
        self.n_joints = n_real
        self.ordering = JointOrdering(
            virtual_indices=list(range(self._n_virtual)),
            real_indices=list(range(self._n_virtual, self.n_dofs)),
            actuated_indices=list(range(self._n_virtual, self.n_dofs)),
            real_joint_names=real_names,
        )
        self._joint_dof = {name: self._n_virtual + i
                           for i, name in enumerate(real_names)}

        for idx, body in enumerate(self._bodies):
            path = [] if body.parent < 0 else list(self._bodies[body.parent].dof_path)
            if body.dof is not None:
                path.append(body.dof)
            body.dof_path = tuple(path)

    def _build_underactuation(self):
        U = np.zeros((self.n_joints, self.n_dofs))
        for row, idx in enumerate(self.ordering.real_indices):
            U[row, idx] = 1.0
        return U

    # -- basic accessors -------------------------------------------------

    def body_index(self, link_name):
        try:
            return self._body_index[link_name]
        except KeyError:
            raise ModelError(f"unknown link {link_name!r}") from None

    def joint_dof_index(self, joint_name):
        try:
            return self._joint_dof[joint_name]
        except KeyError:
            raise ModelError(f"unknown joint {joint_name!r}") from None

    def link_transform(self, link_name):
        self._require_fresh()
        return self._T[self.body_index(link_name)]

    def underactuation_matrix(self):
        """Selection matrix U with U @ q_full == q_actual (one 1 per row)."""
        return self._U

    @property
    def gravity(self):
        return self.description.gravity

    def q_actual(self):
        return self.q_full[self._n_virtual:]

    def qd_actual(self):
        return self.qd_full[self._n_virtual:]

    def full_from_actual(self, q_act, out=None):
        if out is None:
            out = np.zeros(self.n_dofs)
        out[:self._n_virtual] = 0.0
        out[self._n_virtual:] = q_act
        return out

    def _require_fresh(self):
        if not self._fresh:
            raise ModelError("update_kinematics has not been called")

    # -- kinematics ------------------------------------------------------

    def update_kinematics(self, q_full, qd_full):
        """Recompute world transforms, S vectors, A, B and G."""
        q_full = np.asarray(q_full, dtype=float)
        qd_full = np.asarray(qd_full, dtype=float)
        if q_full.shape != (self.n_dofs,) or qd_full.shape != (self.n_dofs,):
            raise ModelError(
                f"expected state vectors of length {self.n_dofs}, got "
                f"{q_full.shape} / {qd_full.shape}")
        self.q_full[:] = q_full
        self.qd_full[:] = qd_full
        self._forward_kinematics()
        self._spatial_inertias()
        self._crba()
        self._fresh = True
        # Coriolis/centrifugal bias from a gravity-free velocity pass; the
        # gravity vector from accumulated static wrenches (one cheap pass)
        self._rnea(self.qd_full, None, False, self.B)
        self._gravity_pass(self.G)
        return self

    def _forward_kinematics(self):
        T = self._T
        eye4 = self._eye4
        joint_T = self._jointT
        motion = self._motion
        for i, body in enumerate(self._bodies):
            parent_T = eye4 if body.parent < 0 else T[body.parent]
            np.matmul(parent_T, body.origin, out=joint_T)
            if body.dof is None:
                T[i] = joint_T
            else:
                q = self.q_full[body.dof]
                if body.jtype == "revolute":
                    _axis_rotation_into(body.axis, q, motion)
                else:
                    motion[:3, :3] = self._eye3
                    motion[0, 3] = body.axis[0] * q
                    motion[1, 3] = body.axis[1] * q
                    motion[2, 3] = body.axis[2] * q
                np.matmul(joint_T, motion, out=T[i])
                R_pre = joint_T[:3, :3]
                w = R_pre @ body.axis
                self._axis_w[body.dof] = w
                self._org_w[body.dof] = joint_T[:3, 3]
                S = self._S[body.dof]
                if body.jtype == "revolute":
                    S[:3] = w
                    _cross3(joint_T[:3, 3], w, S[3:])
                else:
                    S[:3] = 0.0
                    S[3:] = w
            self._com_w[i] = T[i, :3, :3] @ body.com + T[i, :3, 3]

    def _spatial_inertias(self):
        for i, body in enumerate(self._bodies):
            I6 = self._I_w[i]
            if body.mass == 0.0 and not body.inertia.any():
                I6[:] = 0.0
                continue
            R = self._T[i, :3, :3]
            c = self._com_w[i]
            Ic = R @ body.inertia @ R.T
            cx = skew(c)
            m = body.mass
            I6[:3, :3] = Ic + m * (cx @ cx.T)
            I6[:3, 3:] = m * cx
            I6[3:, :3] = I6[:3, 3:].T
            I6[3:, 3:] = m * self._eye3

    # -- dynamics --------------------------------------------------------

    def _crba(self):
        IC = self._IC
        IC[:] = self._I_w
        A = self.A
        A[:] = 0.0
        S = self._S
        for i in range(len(self._bodies) - 1, -1, -1):
            body = self._bodies[i]
            if body.parent >= 0:
                IC[body.parent] += IC[i]
            if body.dof is None:
                continue
            d = body.dof
            F = IC[i] @ S[d]
            path = self._dof_paths[i]
            A[d, path] = S[path] @ F
            A[path, d] = A[d, path]

    def _rnea(self, qd, qdd, with_gravity, out):
        """Inverse dynamics in world coordinates; writes generalized forces
        for the given motion into ``out`` (length n_dofs)."""
        v, a, f, S = self._v, self._a, self._f, self._S
        a0 = self._a0
        a0[:] = 0.0
        if with_gravity:
            a0[3:] = -self.description.gravity
        zero6 = self._zero6
        for i, body in enumerate(self._bodies):
            pv = zero6 if body.parent < 0 else v[body.parent]
            pa = a0 if body.parent < 0 else a[body.parent]
            if body.dof is None:
                v[i] = pv
                a[i] = pa
            else:
                d = body.dof
                qd_d = 0.0 if qd is None else qd[d]
                vi, ai, Sd = v[i], a[i], S[d]
                np.multiply(Sd, qd_d, out=self._vj)
                np.add(pv, self._vj, out=vi)
                _crm_into(vi, self._vj, ai)
                ai += pa
                if qdd is not None:
                    ai += Sd * qdd[d]
            Iv = self._I_w[i] @ v[i]
            fi = self._I_w[i] @ a[i]
            _crf_add(v[i], Iv, fi)
            f[i] = fi
        out[:] = 0.0
        for i in range(len(self._bodies) - 1, -1, -1):
            body = self._bodies[i]
            if body.dof is not None:
                out[body.dof] = S[body.dof] @ f[i]
            if body.parent >= 0:
                f[body.parent] += f[i]
        return out

    def _gravity_pass(self, out):
        """Gravity vector via accumulated static wrenches: G_d = -S_d . f_acc
        where f_acc sums [c x (m g); m g] over every body at or below d."""
        f, S = self._f, self._S
        g = self.description.gravity
        for i, body in enumerate(self._bodies):
            fi = f[i]
            if body.mass == 0.0:
                fi[:] = 0.0
                continue
            m = body.mass
            c = self._com_w[i]
            fi[3] = m * g[0]
            fi[4] = m * g[1]
            fi[5] = m * g[2]
            _cross3(c, fi[3:], fi[:3])
        out[:] = 0.0
        for i in range(len(self._bodies) - 1, -1, -1):
            body = self._bodies[i]
            if body.dof is not None:
                out[body.dof] = -(S[body.dof] @ f[i])
            if body.parent >= 0:
                f[body.parent] += f[i]
        return out

    def inverse_dynamics(self, qdd, qd=None, gravity=True):
        """Generalized forces for the given acceleration at the current
        configuration.  ``qd=None`` means zero velocity (the current joint
        velocities are not implied)."""
        self._require_fresh()
        qdd = np.asarray(qdd, dtype=float)
        if qdd.shape != (self.n_dofs,):
            raise ModelError(f"qdd must have length {self.n_dofs}")
        if qd is not None:
            qd = np.asarray(qd, dtype=float)
        out = np.zeros(self.n_dofs)
        return self._rnea(qd, qdd, gravity, out)

    # -- jacobians -------------------------------------------------------

    def point_jacobian(self, link_name, point=None, out=None):
        """World-frame linear-velocity Jacobian of a link-frame point."""
        self._require_fresh()
        idx = self.body_index(link_name)
        body = self._bodies[idx]
        T = self._T[idx]
        if point is None:
            x = T[:3, 3]
        else:
            x = T[:3, :3] @ np.asarray(point, dtype=float) + T[:3, 3]
        if out is None:
            out = np.zeros((3, self.n_dofs))
        else:
            out[:] = 0.0
        for d in body.dof_path:
            if self._is_revolute_dof(d):
                _cross3(self._axis_w[d], x - self._org_w[d], out[:, d])
            else:
                out[:, d] = self._axis_w[d]
        return out

    def spatial_jacobian(self, link_name, out=None):
        """6 x n_dofs Jacobian of a link frame, angular rows above linear."""
        self._require_fresh()
        idx = self.body_index(link_name)
        body = self._bodies[idx]
        o = self._T[idx, :3, 3]
        if out is None:
            out = np.zeros((6, self.n_dofs))
        else:
            out[:] = 0.0
        for d in body.dof_path:
            if self._is_revolute_dof(d):
                out[:3, d] = self._axis_w[d]
                _cross3(self._axis_w[d], o - self._org_w[d], out[3:, d])
            else:
                out[3:, d] = self._axis_w[d]
        return out

    def com(self):
        """Whole-robot center of mass and its 3 x n_dofs Jacobian."""
        self._require_fresh()
        total = sum(b.mass for b in self._bodies)
        if total <= 0.0:
            raise ModelError("zero total mass")
        c = np.zeros(3)
        J = np.zeros((3, self.n_dofs))
        for i, body in enumerate(self._bodies):
            if body.mass == 0.0:
                continue
            w = body.mass / total
            c += w * self._com_w[i]
            x = self._com_w[i]
            col = np.empty(3)
            for d in body.dof_path:
                if self._is_revolute_dof(d):
                    J[:, d] += w * _cross3(self._axis_w[d], x - self._org_w[d], col)
                else:
                    J[:, d] += w * self._axis_w[d]
        return c, J

    def _is_revolute_dof(self, d):
        return self._dof_kinds[d] == "revolute"

    @property
    def _dof_kinds(self):
        kinds = getattr(self, "_dof_kind_cache", None)
        if kinds is None:
            kinds = [None] * self.n_dofs
            for body in self._bodies:
                if body.dof is not None:
                    kinds[body.dof] = body.jtype
            self._dof_kind_cache = kinds
        return kinds


def _axis_rotation(axis, angle):
    # exact single-axis fast paths keep the hot loop cheap
    if axis[0] == 1.0 and axis[1] == 0.0 and axis[2] == 0.0:
        return rot_x(angle)
    if axis[0] == 0.0 and axis[1] == 1.0 and axis[2] == 0.0:
        return rot_y(angle)
    if axis[0] == 0.0 and axis[1] == 0.0 and axis[2] == 1.0:
        return rot_z(angle)
    from .geometry import axis_angle_matrix
    return axis_angle_matrix(axis, angle)


def _axis_rotation_into(axis, angle, T):
    """Write the joint rotation into the 3x3 block of a scratch transform."""
    import math
    c, s = math.cos(angle), math.sin(angle)
    a0, a1, a2 = axis[0], axis[1], axis[2]
    if a0 == 1.0 and a1 == 0.0 and a2 == 0.0:
        T[0, 0] = 1.0; T[0, 1] = 0.0; T[0, 2] = 0.0
        T[1, 0] = 0.0; T[1, 1] = c; T[1, 2] = -s
        T[2, 0] = 0.0; T[2, 1] = s; T[2, 2] = c
    elif a0 == 0.0 and a1 == 1.0 and a2 == 0.0:
        T[0, 0] = c; T[0, 1] = 0.0; T[0, 2] = s
        T[1, 0] = 0.0; T[1, 1] = 1.0; T[1, 2] = 0.0
        T[2, 0] = -s; T[2, 1] = 0.0; T[2, 2] = c
    elif a0 == 0.0 and a1 == 0.0 and a2 == 1.0:
        T[0, 0] = c; T[0, 1] = -s; T[0, 2] = 0.0
        T[1, 0] = s; T[1, 1] = c; T[1, 2] = 0.0
        T[2, 0] = 0.0; T[2, 1] = 0.0; T[2, 2] = 1.0
    else:
        T[:3, :3] = _axis_rotation(axis, angle)
    T[0, 3] = 0.0
    T[1, 3] = 0.0
    T[2, 3] = 0.0
    return T


def _cross3(a, b, out):
    """3-vector cross product into a preallocated output.

    np.cross carries tens of microseconds of axis bookkeeping per call in the
    servo hot path; this stays under a microsecond.
    """
    a0, a1, a2 = a[0], a[1], a[2]
    b0, b1, b2 = b[0], b[1], b[2]
    out[0] = a1 * b2 - a2 * b1
    out[1] = a2 * b0 - a0 * b2
    out[2] = a0 * b1 - a1 * b0
    return out


def _crm_into(v, u, out):
    """Spatial motion cross product v x u (angular-first blocks)."""
    w0, w1, w2, v0, v1, v2 = v[0], v[1], v[2], v[3], v[4], v[5]
    u0, u1, u2, u3, u4, u5 = u[0], u[1], u[2], u[3], u[4], u[5]
    out[0] = w1 * u2 - w2 * u1
    out[1] = w2 * u0 - w0 * u2
    out[2] = w0 * u1 - w1 * u0
    out[3] = v1 * u2 - v2 * u1 + w1 * u5 - w2 * u4
    out[4] = v2 * u0 - v0 * u2 + w2 * u3 - w0 * u5
    out[5] = v0 * u1 - v1 * u0 + w0 * u4 - w1 * u3
    return out


def _crf_add(v, u, out):
    """Accumulate the spatial force cross product v x* u into out."""
    w0, w1, w2, v0, v1, v2 = v[0], v[1], v[2], v[3], v[4], v[5]
    u0, u1, u2, u3, u4, u5 = u[0], u[1], u[2], u[3], u[4], u[5]
    out[0] += w1 * u2 - w2 * u1 + v1 * u5 - v2 * u4
    out[1] += w2 * u0 - w0 * u2 + v2 * u3 - v0 * u5
    out[2] += w0 * u1 - w1 * u0 + v0 * u4 - v1 * u3
    out[3] += w1 * u5 - w2 * u4
    out[4] += w2 * u3 - w0 * u5
    out[5] += w0 * u4 - w1 * u3
    return out
