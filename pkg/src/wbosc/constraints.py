"""Contact and transmission constraints and the constraint-set projector.

The constraint set stacks the Jacobians of the enabled constraints into J_c,
forms the dynamically consistent nullspace projector

    N_c = I - Jbar_c J_c ,   Jbar_c = Ainv J_c' (J_c Ainv J_c')^+

and the projected actuation map UNcBar (the dynamically consistent inverse of
U N_c) together with the internal-force projector

    Lstar = I_{n_joints} - (U N_c) UNcBar .

Torques of the form Lstar' w produce no motion of the constrained system.
"""

import numpy as np

from .linalg import DEFAULT_TOLERANCE, dyn_consistent_pinv


class ConstraintError(ValueError):
    pass


class Constraint:
    """Base contact/transmission constraint contributing rows to J_c."""

    type_name = "Constraint"

    def __init__(self, name):
        self.name = name
        self.enabled = True

    @property
    def constrained_dof_count(self):
        raise NotImplementedError

    def jacobian(self, model, out=None):
        raise NotImplementedError

    def constrained_joint_names(self, model):
        """Real joints this constraint removes freedom from."""
        return ()

    def declare_parameters(self, registry):
        from .params import ParameterKind
        registry.declare(self.name, "enabled", ParameterKind.BOOLEAN, True,
                         setter=lambda v: setattr(self, "enabled", bool(v)))


class FlatContactConstraint(Constraint):
    """Welds a link: both translation and rotation are constrained."""

    type_name = "FlatContactConstraint"
    constrained_dof_count = 6

    def __init__(self, name, link):
        super().__init__(name)
        self.link = link

    def jacobian(self, model, out=None):
        return model.spatial_jacobian(self.link, out=out)

    def constrained_joint_names(self, model):
        return _path_joint_names(model, self.link)


class PointContactConstraint(Constraint):
    """Pins a link-frame point: translation only."""

    type_name = "PointContactConstraint"
    constrained_dof_count = 3

    def __init__(self, name, link, point=(0.0, 0.0, 0.0)):
        super().__init__(name)
        self.link = link
        self.point = np.asarray(point, dtype=float)

    def jacobian(self, model, out=None):
        return model.point_jacobian(self.link, self.point, out=out)

    def constrained_joint_names(self, model):
        return _path_joint_names(model, self.link)


class CoactuationConstraint(Constraint):
    """Two joints sharing one actuator: qd_slave = ratio * qd_master.

    The Jacobian row carries +1 in the slave column and minus the
    transmission ratio in the master column.
    """

    type_name = "CoactuationConstraint"
    constrained_dof_count = 1

    def __init__(self, name, master_joint, slave_joint, transmission_ratio=1.0):
        if master_joint == slave_joint:
            raise ConstraintError(
                f"coactuation {name!r}: master and slave must differ")
        super().__init__(name)
        self.master_joint = master_joint
        self.slave_joint = slave_joint
        self.transmission_ratio = float(transmission_ratio)

    def jacobian(self, model, out=None):
        if out is None:
            out = np.zeros((1, model.n_dofs))
        else:
            out[:] = 0.0
        out[0, model.joint_dof_index(self.slave_joint)] = 1.0
        out[0, model.joint_dof_index(self.master_joint)] = -self.transmission_ratio
        return out

    def constrained_joint_names(self, model):
        return (self.slave_joint,)

    def declare_parameters(self, registry):
        from .params import ParameterKind
        super().declare_parameters(registry)
        registry.declare(self.name, "transmissionRatio", ParameterKind.SCALAR,
                         self.transmission_ratio,
                         setter=lambda v: setattr(self, "transmission_ratio", float(v)))


class ConstraintSet:
    """Ordered constraints plus the projectors derived from them.

    update() recomputes J_c, N_c, UNcBar and Lstar against a freshly updated
    model; the servo runtime calls it as part of the model update so the
    projectors always match the model configuration they are used with.
    """

    def __init__(self, constraints=(), tolerance=DEFAULT_TOLERANCE):
        self.constraints = list(constraints)
        self.tolerance = tolerance
        self.J_c = None
        self.N_c = None
        self.UNcBar = None
        self.Lstar = None
        self.Ainv = None
        self._constrained_joints = set()

    def add(self, constraint):
        self.constraints.append(constraint)

    def constraint(self, name):
        for c in self.constraints:
            if c.name == name:
                return c
        raise ConstraintError(f"unknown constraint {name!r}")

    def enabled_constraints(self):
        return [c for c in self.constraints if c.enabled]

    def total_constrained_dofs(self):
        return sum(c.constrained_dof_count for c in self.enabled_constraints())

    def update(self, model):
        n = model.n_dofs
        nj = model.n_joints
        U = model.underactuation_matrix()
        self.Ainv = np.linalg.inv(model.A)
        enabled = self.enabled_constraints()
        rows = self.total_constrained_dofs()
        if self.J_c is None or self.J_c.shape != (rows, n):
            self.J_c = np.zeros((rows, n))
        r = 0
        self._constrained_joints = set()
        for c in enabled:
            c.jacobian(model, out=self.J_c[r:r + c.constrained_dof_count])
            self._constrained_joints.update(c.constrained_joint_names(model))
            r += c.constrained_dof_count
        if rows == 0:
            self.N_c = np.eye(n)
        else:
            Jbar = dyn_consistent_pinv(self.J_c, self.Ainv, self.tolerance)
            self.N_c = np.eye(n) - Jbar @ self.J_c
        UNc = U @ self.N_c
        self.UNcBar = dyn_consistent_pinv(UNc, self.Ainv, self.tolerance)
        self.Lstar = np.eye(nj) - UNc @ self.UNcBar
        return self

    def is_constrained(self, joint_name):
        return joint_name in self._constrained_joints

    def motion_basis(self):
        """Orthonormal basis of null(J_c): the admissible motion directions."""
        n = self.N_c.shape[0]
        if self.J_c is None or self.J_c.shape[0] == 0:
            return np.eye(n)
        _, s, Vt = np.linalg.svd(self.J_c)
        rank = int(np.sum(s > self.tolerance * s[0])) if s.size and s[0] > 0 else 0
        return Vt[rank:].T


CONSTRAINT_TYPES = {
    cls.type_name: cls
    for cls in (FlatContactConstraint, PointContactConstraint,
                CoactuationConstraint)
}


def _path_joint_names(model, link):
    body = model._bodies[model.body_index(link)]
    names = []
    real_names = model.ordering.real_joint_names
    virtual = len(model.ordering.virtual_indices)
    for d in body.dof_path:
        if d >= virtual:
            names.append(real_names[d - virtual])
    return tuple(names)
