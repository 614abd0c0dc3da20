"""Deterministic planar articulated-body simulator.

Dynamics are expressed in generalized coordinates
``q = [root_x, root_z, root_angle, joint_0 .. joint_J-1]``. Each control step
(1/32 s) runs ``n_sub`` semi-implicit Euler substeps. All spring/damper
forces (joint PD and penalty ground contact) are integrated implicitly -
their stiffness and damping enter the solve matrix ``M + h*D + h^2*K`` - so
the step stays stable even in near-singular configurations (straight knee at
stance) where the effective inertia of a coordinate is tiny. Coulomb
friction, contact separation, and torque limits are enforced with one
correction pass: offending force elements are replaced by their clamped
constant values and the substep is re-solved once.

Everything is float64 and single-code-path so identical inputs produce
bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from motionlab.constants import CONTROL_DT, FALL_FRACTION
from motionlab.errors import LimitViolationError, NumericError
from motionlab.physim.body import BodyModel


@dataclass(frozen=True)
class SimState:
    """Snapshot of the biped. Arrays are owned by the state; treat as
    immutable. ``foot_forces`` and ``joint_torques`` report the contact
    normal forces and applied PD torques of the most recent substep.
    """

    root_pos: np.ndarray      # (2,) m
    root_angle: float         # rad
    root_vel: np.ndarray      # (2,) m/s
    root_angvel: float        # rad/s
    joint_q: np.ndarray       # (J,) rad
    joint_qd: np.ndarray      # (J,) rad/s
    foot_forces: np.ndarray   # (F,) N, normal force per foot
    joint_torques: np.ndarray  # (J,) N m
    time: float               # s

    @property
    def body_height(self) -> float:
        return float(self.root_pos[1])


class ObservationLayout:
    """Fixed ordering of the nine observable categories and their widths."""

    def __init__(self, n_joints: int, n_feet: int, joint_names: tuple[str, ...]):
        self.entries = [
            ("joint_pose", n_joints),
            ("velocimeter", 2),
            ("gyrometer", 1),
            ("end_effector_pose", 2 * n_feet),
            ("world_z_axis", 2),
            ("actuator_activation", n_joints),
            ("touch_sensors", n_feet),
            ("torque_sensors", n_joints),
            ("body_height", 1),
        ]
        self.joint_names = joint_names
        self.dim = sum(w for _, w in self.entries)
        self.slices = {}
        at = 0
        for name, width in self.entries:
            self.slices[name] = slice(at, at + width)
            at += width

    def column_names(self) -> list[str]:
        cols = []
        for name, width in self.entries:
            if width == 1:
                cols.append(name)
            elif name in ("joint_pose", "actuator_activation", "torque_sensors"):
                cols.extend(f"{name}.{j}" for j in self.joint_names)
            elif name == "velocimeter":
                cols.extend(["velocimeter.x", "velocimeter.z"])
            elif name == "world_z_axis":
                cols.extend(["world_z_axis.x", "world_z_axis.z"])
            elif name == "end_effector_pose":
                cols.extend(f"end_effector_pose.{i // 2}.{'xz'[i % 2]}" for i in range(width))
            else:
                cols.extend(f"{name}.{i}" for i in range(width))
        return cols


def _perp(v):
    """90-degree CCW rotation of planar vectors along the last axis."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


@njit(cache=True)
def _run_substeps(q, v, target, n_sub, h, ang, chain, offs, plink, clink, anchor,
                  mass, com, m_ang, kp, kd, tl, lo, hi, cp_link, cp_off,
                  k_c, c_c, mu, gravity, root_free):
    """Jitted twin of Simulator._substep_numpy, run n_sub times.

    Mutates nothing; returns (q, v, contact normals per point, joint torques)
    after the last substep. Kept in lock-step with the numpy reference - a
    unit test compares the two on random states.
    """
    L = ang.shape[0]
    JN = ang.shape[1] - 1
    N = 3 + JN
    P = cp_link.shape[0]
    q = q.copy()
    v = v.copy()
    fn = np.zeros(P)
    tq = np.zeros(JN)

    phi = np.empty(L)
    px = np.empty(L)
    pz = np.empty(L)
    pvx = np.empty(L)
    pvz = np.empty(L)
    omega = np.empty(L)
    cpx = np.empty(P)
    cpz = np.empty(P)
    jac = np.empty((L + P, 2, N))
    gx = np.empty(L)
    gz = np.empty(L)
    qext = np.empty(N)
    pen = np.empty(P)
    norm_on = np.empty(P)
    tang_on = np.empty(P)
    pd_on = np.empty(JN)
    cft = np.empty(P)
    ctau = np.empty(JN)
    ft = np.empty(P)

    for _ in range(n_sub):
        # forward kinematics
        for l in range(L):
            a = offs[l] + ang[l, 0] * q[2]
            for j in range(JN):
                a += ang[l, 1 + j] * q[3 + j]
            phi[l] = a
        dx = np.cos(phi)
        dz = np.sin(phi)
        for l in range(L):
            x = q[0]
            z = q[1]
            for j in range(JN):
                if chain[l, j] != 0.0:
                    pl = plink[j]
                    x += anchor[j] * dx[pl]
                    z += anchor[j] * dz[pl]
            px[l] = x
            pz[l] = z
        for l in range(L):
            w = ang[l, 0] * v[2]
            for j in range(JN):
                w += ang[l, 1 + j] * v[3 + j]
            omega[l] = w
        for l in range(L):
            x = v[0]
            z = v[1]
            for j in range(JN):
                if chain[l, j] != 0.0:
                    pl = plink[j]
                    x += anchor[j] * omega[pl] * (-dz[pl])
                    z += anchor[j] * omega[pl] * dx[pl]
            pvx[l] = x
            pvz[l] = z
        for p in range(P):
            l = cp_link[p]
            cpx[p] = px[l] + cp_off[p] * dx[l]
            cpz[p] = pz[l] + cp_off[p] * dz[l]

        # Jacobians of COMs (rows 0..L-1) and contact points (rows L..)
        for r in range(L + P):
            if r < L:
                l = r
                ptx = px[l] + com[l] * dx[l]
                ptz = pz[l] + com[l] * dz[l]
            else:
                p = r - L
                l = cp_link[p]
                ptx = cpx[p]
                ptz = cpz[p]
            jac[r, 0, 0] = 1.0
            jac[r, 1, 0] = 0.0
            jac[r, 0, 1] = 0.0
            jac[r, 1, 1] = 1.0
            if ang[l, 0] != 0.0:
                jac[r, 0, 2] = -(ptz - q[1])
                jac[r, 1, 2] = ptx - q[0]
            else:
                jac[r, 0, 2] = 0.0
                jac[r, 1, 2] = 0.0
            for j in range(JN):
                if ang[l, 1 + j] != 0.0:
                    cl = clink[j]
                    jac[r, 0, 3 + j] = -(ptz - pz[cl])
                    jac[r, 1, 3 + j] = ptx - px[cl]
                else:
                    jac[r, 0, 3 + j] = 0.0
                    jac[r, 1, 3 + j] = 0.0

        # mass matrix
        mass_mat = m_ang.copy()
        for l in range(L):
            ml = mass[l]
            for a in range(N):
                ja0 = jac[l, 0, a]
                ja1 = jac[l, 1, a]
                for b in range(a, N):
                    mass_mat[a, b] += ml * (ja0 * jac[l, 0, b] + ja1 * jac[l, 1, b])
        for a in range(N):
            for b in range(a):
                mass_mat[a, b] = mass_mat[b, a]

        # Coriolis/centrifugal and gravity as explicit generalized forces
        for l in range(L):
            cvx = pvx[l] + com[l] * omega[l] * (-dz[l])
            cvz = pvz[l] + com[l] * omega[l] * dx[l]
            ax = 0.0
            az = 0.0
            if ang[l, 0] != 0.0:
                rx = cvx - v[0]
                rz = cvz - v[1]
                ax += v[2] * (-rz)
                az += v[2] * rx
            for j in range(JN):
                if ang[l, 1 + j] != 0.0:
                    cl = clink[j]
                    rx = cvx - pvx[cl]
                    rz = cvz - pvz[cl]
                    ax += v[3 + j] * (-rz)
                    az += v[3 + j] * rx
            gx[l] = ax
            gz[l] = az
        for k in range(N):
            s = 0.0
            for l in range(L):
                s -= mass[l] * (jac[l, 0, k] * gx[l] + jac[l, 1, k] * gz[l])
                s -= gravity * mass[l] * jac[l, 1, k]
            qext[k] = s

        for p in range(P):
            pen[p] = -cpz[p]
            on = 1.0 if pen[p] > 0.0 else 0.0
            norm_on[p] = on
            tang_on[p] = on
            cft[p] = 0.0
        for j in range(JN):
            pd_on[j] = 1.0
            ctau[j] = 0.0

        v_new = v
        for pass_i in range(2):
            a_mat = mass_mat.copy()
            coefz = h * h * k_c + h * c_c
            coefx = h * c_c
            for p in range(P):
                if norm_on[p] != 0.0 or tang_on[p] != 0.0:
                    for a in range(N):
                        for b in range(a, N):
                            add = 0.0
                            if norm_on[p] != 0.0:
                                add += coefz * jac[L + p, 1, a] * jac[L + p, 1, b]
                            if tang_on[p] != 0.0:
                                add += coefx * jac[L + p, 0, a] * jac[L + p, 0, b]
                            a_mat[a, b] += add
            for a in range(N):
                for b in range(a):
                    a_mat[a, b] = a_mat[b, a]
            for j in range(JN):
                a_mat[3 + j, 3 + j] += pd_on[j] * (h * h * kp[j] + h * kd[j])

            rhs = np.empty(N)
            for k in range(N):
                s = qext[k]
                for p in range(P):
                    if norm_on[p] != 0.0:
                        s += jac[L + p, 1, k] * (k_c * pen[p])
                    s += jac[L + p, 0, k] * cft[p]
                rhs[k] = s
            for j in range(JN):
                rhs[3 + j] += pd_on[j] * kp[j] * (target[j] - q[3 + j]) + ctau[j]
            for k in range(N):
                s = 0.0
                for b in range(N):
                    s += mass_mat[k, b] * v[b]
                rhs[k] = s + h * rhs[k]

            if root_free:
                v_new = np.linalg.solve(a_mat, rhs)
            else:
                sub = np.linalg.solve(a_mat[3:, 3:].copy(), rhs[3:].copy())
                v_new = np.zeros(N)
                for j in range(JN):
                    v_new[3 + j] = sub[j]

            # realized forces under the pass assumptions
            needs_second = False
            for p in range(P):
                vz = 0.0
                vx = 0.0
                for k in range(N):
                    vz += jac[L + p, 1, k] * v_new[k]
                    vx += jac[L + p, 0, k] * v_new[k]
                fn[p] = norm_on[p] * (k_c * (pen[p] - h * vz) - c_c * vz)
                ft[p] = tang_on[p] * (-c_c * vx) + cft[p]
            for j in range(JN):
                vj = v_new[3 + j]
                tq[j] = pd_on[j] * (kp[j] * (target[j] - (q[3 + j] + h * vj)) - kd[j] * vj) + ctau[j]

            if pass_i == 1:
                for p in range(P):
                    if fn[p] < 0.0:
                        fn[p] = 0.0
                for j in range(JN):
                    if tq[j] > tl[j]:
                        tq[j] = tl[j]
                    elif tq[j] < -tl[j]:
                        tq[j] = -tl[j]
                break

            for p in range(P):
                if fn[p] < 0.0:
                    norm_on[p] = 0.0
                    tang_on[p] = 0.0
                    cft[p] = 0.0
                    needs_second = True
                else:
                    lim = mu * fn[p]
                    if abs(ft[p]) > lim:
                        tang_on[p] = 0.0
                        cft[p] = lim if ft[p] > 0.0 else -lim
                        needs_second = True
            for j in range(JN):
                if abs(tq[j]) > tl[j]:
                    pd_on[j] = 0.0
                    ctau[j] = tl[j] if tq[j] > 0.0 else -tl[j]
                    needs_second = True
            if not needs_second:
                break

        for k in range(N):
            v[k] = v_new[k]
        if not root_free:
            v[0] = 0.0
            v[1] = 0.0
            v[2] = 0.0
        for k in range(N):
            q[k] += h * v[k]
        for j in range(JN):
            if q[3 + j] < lo[j]:
                q[3 + j] = lo[j]
                v[3 + j] = 0.0
            elif q[3 + j] > hi[j]:
                q[3 + j] = hi[j]
                v[3 + j] = 0.0

    return q, v, fn, tq


class Simulator:
    """Simulator for one BodyModel. Instances are independent; step() is a
    pure function of (state, action) given the model, so one instance may be
    shared by readers but must not be stepped concurrently.
    """

    def __init__(self, model: BodyModel, n_sub: int = 8):
        self.model = model
        self.n_sub = int(n_sub)
        self.h = CONTROL_DT / self.n_sub

        L = len(model.links)
        J = len(model.joints)
        self.n_links, self.n_joints = L, J
        self.n_dof = 3 + J

        parent_joint = {}
        for ji, j in enumerate(model.joints):
            parent_joint[j.child] = ji

        # Influence of [root_angle, q_0..q_J-1] on each link's axis angle, the
        # accumulated mount offsets, and the joint chain from root to link.
        ang = np.zeros((L, 1 + J))
        chain = np.zeros((L, J))
        offs = np.zeros(L)
        for li in range(L):
            ang[li, 0] = 1.0
            node = li
            while node != model.root_link:
                ji = parent_joint[node]
                ang[li, 1 + ji] = 1.0
                chain[li, ji] = 1.0
                offs[li] += model.links[node].mount
                node = model.joints[ji].parent
            offs[li] += model.links[model.root_link].mount
        self._ang = ang
        self._chain = chain
        self._offs = offs

        self._plink = np.array([j.parent for j in model.joints], dtype=int)
        self._clink = np.array([j.child for j in model.joints], dtype=int)
        self._anchor = np.array([j.anchor for j in model.joints])
        self._mass = np.array([l.mass for l in model.links])
        self._inertia = np.array([l.inertia for l in model.links])
        self._com = np.array([l.com for l in model.links])
        self._length = np.array([l.length for l in model.links])

        # Angular part of the mass matrix is configuration independent.
        rot = np.zeros((L, self.n_dof))
        rot[:, 2:] = ang
        self._m_ang = np.einsum("l,lk,ln->kn", self._inertia, rot, rot)

        self._kp = np.array([j.kp for j in model.joints])
        self._kd = np.array([j.kd for j in model.joints])
        self._tl = np.array([j.torque_limit for j in model.joints])
        self._lo = np.array([j.lo for j in model.joints])
        self._hi = np.array([j.hi for j in model.joints])

        self._cp_link = np.array([f.link for f in model.feet for _ in f.contacts], dtype=int)
        self._cp_off = np.array([c for f in model.feet for c in f.contacts])
        n_feet = len(model.feet)
        P = len(self._cp_link)
        footmap = np.zeros((n_feet, P))
        k = 0
        for fi, f in enumerate(model.feet):
            for _ in f.contacts:
                footmap[fi, k] = 1.0
                k += 1
        self._footmap = footmap
        self.n_feet = n_feet
        self.n_cp = P

        # Combined Jacobian buffer for COMs and contact points; the prismatic
        # root columns never change.
        self._ptlinks = np.concatenate([np.arange(L), self._cp_link])
        self._angpts = ang[self._ptlinks]
        jac = np.zeros((L + P, 2, self.n_dof))
        jac[:, 0, 0] = 1.0
        jac[:, 1, 1] = 1.0
        self._jacbuf = jac
        self._jdiag = np.arange(3, self.n_dof)

        self.layout = ObservationLayout(J, n_feet, tuple(j.name for j in model.joints))
        self.obs_dim = self.layout.dim
        self.act_dim = J

        self._kargs = (
            self._ang, self._chain, self._offs, self._plink, self._clink,
            self._anchor, self._mass, self._com, self._m_ang,
            self._kp, self._kd, self._tl, self._lo, self._hi,
            self._cp_link, self._cp_off,
            float(model.contact_stiffness), float(model.contact_damping),
            float(model.friction_mu), float(model.gravity), bool(model.root_free),
        )

    # ------------------------------------------------------------------ #
    # kinematics

    def _fk(self, root_pos, root_angle, joint_q):
        qr = np.concatenate(([root_angle], joint_q))
        phi = self._offs + self._ang @ qr
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        edges = self._anchor[:, None] * dirs[self._plink]
        pivots = root_pos[None, :] + self._chain @ edges
        coms = pivots + self._com[:, None] * dirs
        return dirs, pivots, coms

    def _fk_vel(self, root_vel, root_angvel, joint_qd, dirs):
        w = np.concatenate(([root_angvel], joint_qd))
        omega = self._ang @ w
        pdirs = _perp(dirs)
        edges_dot = (self._anchor * omega[self._plink])[:, None] * pdirs[self._plink]
        pivots_dot = root_vel[None, :] + self._chain @ edges_dot
        coms_dot = pivots_dot + (self._com * omega)[:, None] * pdirs
        return omega, pivots_dot, coms_dot

    def _point_jacobian(self, points, links, root_pos, pivots):
        """Planar Jacobian of world points attached to links, (P, 2, N)."""
        P = points.shape[0]
        dof_piv = np.concatenate([root_pos[None, :], pivots[self._clink]], axis=0)
        diff = points[:, None, :] - dof_piv[None, :, :]
        jac_rot = _perp(diff) * self._ang[links][:, :, None]
        jac = np.zeros((P, 2, self.n_dof))
        jac[:, 0, 0] = 1.0
        jac[:, 1, 1] = 1.0
        jac[:, :, 2:] = np.swapaxes(jac_rot, 1, 2)
        return jac

    def link_segments(self, state: SimState) -> np.ndarray:
        """World endpoints of every link, (L, 2, 2) as [start, end][x, z]."""
        dirs, pivots, _ = self._fk(state.root_pos, state.root_angle, state.joint_q)
        ends = pivots + self._length[:, None] * dirs
        return np.stack([pivots, ends], axis=1)

    def mass_matrix(self, state: SimState) -> np.ndarray:
        _, pivots, coms = self._fk(state.root_pos, state.root_angle, state.joint_q)
        jac = self._point_jacobian(coms, np.arange(self.n_links), state.root_pos, pivots)
        return np.einsum("l,lak,lan->kn", self._mass, jac, jac) + self._m_ang

    # ------------------------------------------------------------------ #
    # public operations

    def reset(self, joint_pose, *, root_pos=None, root_angle: float = 0.0,
              joint_vel=None, root_vel=(0.0, 0.0), root_angvel: float = 0.0) -> SimState:
        """State at time zero. The pose must lie within joint limits
        (boundaries included); velocities default to zero. Touch sensors are
        primed with the static penalty forces of the given configuration."""
        q = np.asarray(joint_pose, dtype=float)
        if q.shape != (self.n_joints,):
            raise LimitViolationError(f"pose has {q.shape} angles, model has {self.n_joints} joints")
        for ji, j in enumerate(self.model.joints):
            if not (j.lo <= q[ji] <= j.hi):
                raise LimitViolationError(
                    f"joint {j.name}: angle {q[ji]:.4f} outside limits [{j.lo:.4f}, {j.hi:.4f}]")
        if root_pos is None:
            root_pos = (0.0, self.model.standing_height)
        root_pos = np.asarray(root_pos, dtype=float)
        root_vel = np.asarray(root_vel, dtype=float)
        qd = np.zeros(self.n_joints) if joint_vel is None else np.asarray(joint_vel, dtype=float)

        dirs, pivots, _ = self._fk(root_pos, root_angle, q)
        omega, pivots_dot, _ = self._fk_vel(root_vel, root_angvel, qd, dirs)
        cpl = self._cp_link
        cp_pos = pivots[cpl] + self._cp_off[:, None] * dirs[cpl]
        cp_vel = pivots_dot[cpl] + (self._cp_off * omega[cpl])[:, None] * _perp(dirs[cpl])
        pen = -cp_pos[:, 1]
        m = self.model
        fn = np.where(pen > 0.0,
                      np.maximum(m.contact_stiffness * pen - m.contact_damping * cp_vel[:, 1], 0.0),
                      0.0)
        return SimState(
            root_pos=root_pos,
            root_angle=float(root_angle),
            root_vel=root_vel,
            root_angvel=float(root_angvel),
            joint_q=q,
            joint_qd=qd,
            foot_forces=self._footmap @ fn,
            joint_torques=np.zeros(self.n_joints),
            time=0.0,
        )

    def standing_state(self) -> SimState:
        return self.reset(np.asarray(self.model.standing_pose))

    def step(self, state: SimState, action) -> SimState:
        """Advance one control period (1/32 s) holding the PD target fixed.
        The target is clamped to the joint limits before actuation."""
        act = np.asarray(action, dtype=float)
        if act.shape != (self.n_joints,):
            raise NumericError(f"action has shape {act.shape}, expected ({self.n_joints},)")
        self._check_finite(state, act)
        target = np.clip(act, self._lo, self._hi)

        q = np.concatenate([state.root_pos, [state.root_angle], state.joint_q])
        v = np.concatenate([state.root_vel, [state.root_angvel], state.joint_qd])

        q, v, fn_pts, tau = _run_substeps(q, v, target, self.n_sub, self.h, *self._kargs)

        return SimState(
            root_pos=q[:2],
            root_angle=float(q[2]),
            root_vel=v[:2],
            root_angvel=float(v[2]),
            joint_q=q[3:],
            joint_qd=v[3:],
            foot_forces=self._footmap @ fn_pts,
            joint_torques=tau,
            time=state.time + CONTROL_DT,
        )

    def _substep_numpy(self, q, v, target):
        """Reference implementation of one substep; the jitted kernel is the
        production path and is tested against this."""
        h = self.h
        m = self.model
        L = self.n_links
        root_pos, jq = q[:2], q[3:]
        jqd = v[3:]

        dirs, pivots, coms = self._fk(root_pos, q[2], jq)
        omega, pivots_dot, coms_dot = self._fk_vel(v[:2], v[2], jqd, dirs)
        pdirs = _perp(dirs)
        cpl = self._cp_link
        cp_pos = pivots[cpl] + self._cp_off[:, None] * dirs[cpl]

        # Jacobians of COMs and contact points in one buffer.
        dof_piv = np.concatenate([root_pos[None, :], pivots[self._clink]], axis=0)
        pts = np.concatenate([coms, cp_pos], axis=0)
        diff = pts[:, None, :] - dof_piv[None, :, :]
        jac = self._jacbuf
        jac[:, :, 2:] = np.swapaxes(_perp(diff) * self._angpts[:, :, None], 1, 2)
        jac_com = jac[:L]
        jx = jac[L:, 0, :]
        jz = jac[L:, 1, :]

        mass_mat = np.einsum("l,lak,lan->kn", self._mass, jac_com, jac_com) + self._m_ang

        # Explicit generalized forces: Coriolis/centrifugal and gravity.
        dof_piv_dot = np.concatenate([v[None, :2], pivots_dot[self._clink]], axis=0)
        rel_dot = coms_dot[:, None, :] - dof_piv_dot[None, :, :]
        w = np.concatenate(([v[2]], jqd))
        gamma = np.einsum("lk,k,lka->la", self._ang, w, _perp(rel_dot))
        q_ext = -np.einsum("l,lak,la->k", self._mass, jac_com, gamma)
        q_ext -= m.gravity * (self._mass @ jac_com[:, 1, :])

        pen = -cp_pos[:, 1]
        active = pen > 0.0

        def solve(norm_on, tang_on, pd_on, const_ft, const_tau):
            a_mat = mass_mat + (h * h * m.contact_stiffness + h * m.contact_damping) * (
                np.einsum("pn,p,pm->nm", jz, norm_on, jz))
            a_mat += (h * m.contact_damping) * np.einsum("pn,p,pm->nm", jx, tang_on, jx)
            kp_eff = self._kp * pd_on
            kd_eff = self._kd * pd_on
            a_mat[self._jdiag, self._jdiag] += h * h * kp_eff + h * kd_eff
            rhs_q = q_ext + jz.T @ (m.contact_stiffness * pen * norm_on) + jx.T @ const_ft
            rhs_q[3:] += kp_eff * (target - jq) + const_tau
            rhs = mass_mat @ v + h * rhs_q
            if m.root_free:
                return np.linalg.solve(a_mat, rhs)
            out = np.zeros(self.n_dof)
            out[3:] = np.linalg.solve(a_mat[3:, 3:], rhs[3:])
            return out

        def realized(v_new, norm_on, tang_on, pd_on, const_ft, const_tau):
            vz = jz @ v_new
            vx = jx @ v_new
            fn = norm_on * (m.contact_stiffness * (pen - h * vz) - m.contact_damping * vz)
            ft = tang_on * (-m.contact_damping * vx) + const_ft
            vj = v_new[3:]
            tq = pd_on * (self._kp * (target - (jq + h * vj)) - self._kd * vj) + const_tau
            return fn, ft, tq

        zeros_p = np.zeros(self.n_cp)
        zeros_j = np.zeros(self.n_joints)
        on = active.astype(float)
        pd_on = np.ones(self.n_joints)
        v1 = solve(on, on, pd_on, zeros_p, zeros_j)
        fn, ft, tq = realized(v1, on, on, pd_on, zeros_p, zeros_j)

        sep = fn < 0.0
        fric_lim = m.friction_mu * np.maximum(fn, 0.0)
        slide = np.abs(ft) > fric_lim
        sat = np.abs(tq) > self._tl
        if sep.any() or slide.any() or sat.any():
            norm_on = on * (~sep)
            tang_on = norm_on * (~slide)
            const_ft = np.where(slide & ~sep, np.sign(ft) * fric_lim, 0.0)
            pd_on = (~sat).astype(float)
            const_tau = np.where(sat, np.sign(tq) * self._tl, 0.0)
            v1 = solve(norm_on, tang_on, pd_on, const_ft, const_tau)
            fn, ft, tq = realized(v1, norm_on, tang_on, pd_on, const_ft, const_tau)
            fn = np.maximum(fn, 0.0)
            tq = np.clip(tq, -self._tl, self._tl)

        v_new = v1
        if not m.root_free:
            v_new[:3] = 0.0
        q_new = q + h * v_new
        clamped = np.clip(q_new[3:], self._lo, self._hi)
        stopped = clamped != q_new[3:]
        q_new[3:] = clamped
        v_new[3:][stopped] = 0.0
        return q_new, v_new, fn, tq

    def observe(self, state: SimState) -> np.ndarray:
        """All nine observable categories concatenated in the documented
        order. velocimeter and end-effector positions are expressed in the
        root frame; world_z_axis is world-up seen from the root frame."""
        th = state.root_angle
        c, s = np.cos(th), np.sin(th)

        def to_root(vec):
            return np.stack([c * vec[..., 0] + s * vec[..., 1],
                             -s * vec[..., 0] + c * vec[..., 1]], axis=-1)

        dirs, pivots, _ = self._fk(state.root_pos, th, state.joint_q)
        mid = 0.5 * (self._cp_off[0::2] + self._cp_off[1::2])
        foot_links = self._cp_link[0::2]
        midfoot = pivots[foot_links] + mid[:, None] * dirs[foot_links]
        ee = to_root(midfoot - state.root_pos[None, :]).ravel()

        return np.concatenate([
            state.joint_q,
            to_root(state.root_vel),
            [state.root_angvel],
            ee,
            [s, c],
            (np.abs(state.joint_torques) > 1e-6).astype(float),
            state.foot_forces,
            state.joint_torques,
            [state.root_pos[1]],
        ])

    def is_fallen(self, state: SimState, fall_fraction: float = FALL_FRACTION) -> bool:
        return state.body_height < fall_fraction * self.model.standing_height

    def mechanical_energy(self, state: SimState) -> float:
        """Kinetic plus gravitational potential energy (ground as datum)."""
        mass_mat = self.mass_matrix(state)
        _, _, coms = self._fk(state.root_pos, state.root_angle, state.joint_q)
        v = np.concatenate([state.root_vel, [state.root_angvel], state.joint_qd])
        ke = 0.5 * v @ mass_mat @ v
        pe = self.model.gravity * float(self._mass @ coms[:, 1])
        return float(ke + pe)

    # ------------------------------------------------------------------ #

    def _check_finite(self, state: SimState, action: np.ndarray) -> None:
        fields = {
            "root_pos": state.root_pos, "root_angle": state.root_angle,
            "root_vel": state.root_vel, "root_angvel": state.root_angvel,
            "joint_q": state.joint_q, "joint_qd": state.joint_qd,
            "action": action,
        }
        for name, value in fields.items():
            if not np.all(np.isfinite(value)):
                raise NumericError(f"non-finite value in {name}")
