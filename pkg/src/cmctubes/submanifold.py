"""Closed submanifolds K of an ambient manifold with induced geometry.

The catalog covers the closed-form cases used throughout: coordinate
circles and sub-tori of (possibly conformally perturbed) flat tori, great
circles of round spheres, and closed geodesics located by shooting.  All
grids are uniform and periodic in the intrinsic coordinates, which for the
catalog members are geodesic normal coordinates of the induced metric, so
spectral differentiation applies directly.

Submanifold ids::

    coordinate_circle(axis [, off1, off2, ...])
    sub_torus(ax1, ax2 [, offsets...])
    great_circle
    shot_geodesic(p1, ..., pd, v1, ..., vd)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .catalog import parse_geometry_id
from .geometry import AmbientManifold
from .gridops import fourier_derivative, fourier_diff_matrix

__all__ = [
    "MinimalSubmanifold",
    "SecondFF",
    "JacobiOperator",
    "build_submanifold",
    "second_fundamental_form",
    "jacobi_operator",
    "nondegeneracy_check",
    "find_closed_geodesic",
    "NotMinimalError",
    "DegenerateJacobiError",
]


class NotMinimalError(ValueError):
    """Mean curvature of K exceeded the minimality tolerance."""


class DegenerateJacobiError(ValueError):
    """The Jacobi operator has (numerically) nontrivial kernel."""


@dataclass
class MinimalSubmanifold:
    """Parameterized closed K^k in M with orthonormal adapted frames.

    ``f_nodes`` are ambient chart points on the flattened tensor grid;
    ``tangent``/``normal`` hold chart components of the frame fields
    E_a, E_i per node; ``winding`` is the linear (non-periodic) part of the
    parameterization so f(s) - winding @ s is periodic; ``omega`` are the
    measured normal-connection coefficients g(nabla_{E_a} E_i, E_j).
    """

    M: AmbientManifold
    k: int
    n: int
    lengths: np.ndarray
    shape: tuple
    f_nodes: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    winding: np.ndarray
    catalog_id: str = ""
    omega: np.ndarray = None
    minimality_residual: float = np.nan
    _second_ff: object = field(default=None, repr=False)
    _jacobi: object = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    @property
    def node_weight(self):
        return float(np.prod(self.lengths / np.array(self.shape)))

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    def grids(self):
        return [np.arange(N) * L / N for N, L in zip(self.shape, self.lengths)]

    def d_ds(self, fld, axis, order=1):
        """Spectral derivative along the K axis of a nodal field.

        ``fld`` has node index last, flattened; returns the same layout.
        The winding (linear) part of non-periodic fields must be handled by
        the caller; this routine differentiates the periodic samples.
        """
        shaped = fld.reshape(fld.shape[:-1] + self.shape)
        out = fourier_derivative(shaped, self.lengths[axis], axis=fld.ndim - 1 + axis, order=order)
        return out.reshape(fld.shape)

    def df_ds(self, axis, order=1):
        """Derivative of the parameterization f along a K axis, winding included."""
        per = self.f_nodes.T - np.tensordot(self.winding.T, self._coord_mesh(), axes=([1], [0]))
        d = self.d_ds(per, axis, order=order)
        if order == 1:
            d = d + self.winding[axis][:, None]
        return d.T

    def _coord_mesh(self):
        grids = np.meshgrid(*self.grids(), indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=0)

    def frame_matrix(self):
        """(n_nodes, dim, dim) matrices with rows E_1..E_n (normal), E_{n+1}.. (tangent)."""
        return np.concatenate([self.normal, self.tangent], axis=1)

    def second_fundamental_form(self):
        if self._second_ff is None:
            self._second_ff = second_fundamental_form(self)
        return self._second_ff

    def jacobi_operator(self):
        if self._jacobi is None:
            self._jacobi = jacobi_operator(self)
        return self._jacobi


@dataclass
class SecondFF:
    """Second fundamental form coefficients Gamma^i_{ab} and the operator B^N."""

    gamma: np.ndarray  # (n_nodes, n, k, k): Gamma^i_{ab}
    gamma_mixed: np.ndarray  # (n_nodes, k, n, k): Gamma^b_{ai} = g(nabla_{E_a} E_i, E_b)
    b_operator: np.ndarray  # (n_nodes, n, n): g(B^N E_i, E_j)

    def trace_residual(self):
        return float(np.abs(np.einsum("qiaa->qi", self.gamma)).max())


@dataclass
class JacobiOperator:
    """Dense symmetric representation of the Jacobi operator on sections of NK.

    Sections are stored as (n, n_nodes) coefficient arrays against the normal
    frame; the matrix acts on the flattened coefficients.  The discrete inner
    product is the plain L^2(K) one (uniform node weight).
    """

    matrix: np.ndarray
    laplacian: np.ndarray
    curvature_term: np.ndarray
    bn_term: np.ndarray
    smallest_singular_value: float
    eigenvalues: np.ndarray

    def apply(self, phi):
        return (self.matrix @ phi.reshape(-1)).reshape(phi.shape)

    def solve(self, rhs, tol=1e-8):
        if self.smallest_singular_value <= tol:
            raise DegenerateJacobiError(
                f"Jacobi operator is degenerate (sigma_min = {self.smallest_singular_value:.3e})"
            )
        return np.linalg.solve(self.matrix, rhs.reshape(-1)).reshape(rhs.shape)


# ----------------------------------------------------------------------
# frame construction helpers


def _orthonormalize(M, pts, vecs):
    """Gram-Schmidt a list of chart vectors at pts under g."""
    g = M.metric(pts)
    out = []
    for v in vecs:
        v = np.array(v, dtype=float, copy=True)
        for u in out:
            v -= np.einsum("...ab,...a,...b->...", g, u, v)[..., None] * u
        nrm = np.sqrt(np.einsum("...ab,...a,...b->...", g, v, v))
        out.append(v / nrm[..., None])
    return out


def _measure_omega(K: MinimalSubmanifold):
    """Normal connection coefficients omega[q, a, i, j] = g(nabla_{E_a} E_i, E_j)."""
    M = K.M
    g = M.metric(K.f_nodes)
    G = M.christoffel(K.f_nodes)
    omega = np.zeros((K.n_nodes, K.k, K.n, K.n))
    for a in range(K.k):
        fa = K.df_ds(a)  # coordinate tangent d f / d s_a
        for i in range(K.n):
            dEi = K.d_ds(K.normal[:, i, :].T, a).T
            cov = dEi + np.einsum("qabc,qb,qc->qa", G, fa, K.normal[:, i, :])
            omega[:, a, i, :] = np.einsum("qab,qa,qjb->qj", g, cov, K.normal)
    return omega


def _mean_curvature_vector(K: MinimalSubmanifold):
    """Mean curvature vector of K expressed in the normal frame, per node."""
    sff = second_fundamental_form(K)
    return np.einsum("qiaa->qi", sff.gamma)


# ----------------------------------------------------------------------
# second fundamental form and Jacobi operator


def second_fundamental_form(K: MinimalSubmanifold) -> SecondFF:
    """Gamma^i_{ab} = g(nabla_{X_a} X_b, E_i) from grid derivatives of f.

    The catalog parameterizations are unit-speed geodesic coordinates, so the
    coordinate fields X_a agree with the orthonormal E_a on K.
    """
    M = K.M
    g = M.metric(K.f_nodes)
    G = M.christoffel(K.f_nodes)
    nq = K.n_nodes
    gamma = np.zeros((nq, K.n, K.k, K.k))
    gamma_mixed = np.zeros((nq, K.k, K.n, K.k))
    for a in range(K.k):
        fa = K.df_ds(a)
        for b in range(a, K.k):
            if a == b:
                fab = K.df_ds(a, order=2)
            else:
                fab = K.d_ds(K.df_ds(b).T, a).T
            cov = fab + np.einsum("qabc,qb,qc->qa", G, fa, K.df_ds(b))
            coeff = np.einsum("qab,qa,qib->qi", g, cov, K.normal)
            gamma[:, :, a, b] = coeff
            gamma[:, :, b, a] = coeff
        for i in range(K.n):
            dEi = K.d_ds(K.normal[:, i, :].T, a).T
            cov = dEi + np.einsum("qabc,qb,qc->qa", G, fa, K.normal[:, i, :])
            gamma_mixed[:, a, i, :] = np.einsum("qab,qa,qcb->qc", g, cov, K.tangent)
    # B^N operator: g(B E_i, E_j) = sum_ab Gamma^i_{ab} Gamma^j_{ab}
    b_op = np.einsum("qiab,qjab->qij", gamma, gamma)
    return SecondFF(gamma=gamma, gamma_mixed=gamma_mixed, b_operator=b_op)


def _grid_diff_matrix(K: MinimalSubmanifold, axis, order=1):
    D = fourier_diff_matrix(K.shape[axis], K.lengths[axis], order=order)
    if K.k == 1:
        return D
    eyes = [np.eye(N) for N in K.shape]
    eyes[axis] = D
    out = eyes[0]
    for e in eyes[1:]:
        out = np.kron(out, e)
    return out


def _omega_matrix(K: MinimalSubmanifold, axis):
    nq, n = K.n_nodes, K.n
    Om = np.zeros((n * nq, n * nq))
    idx = np.arange(nq)
    for i in range(n):
        for j in range(n):
            Om[j * nq + idx, i * nq + idx] = K.omega[:, axis, i, j]
    return Om


def normal_covariant_derivative_matrix(K: MinimalSubmanifold, axis):
    """Matrix of nabla^N along one K axis acting on flattened (n, n_nodes) sections."""
    full = np.kron(np.eye(K.n), _grid_diff_matrix(K, axis))
    return full + _omega_matrix(K, axis)


def normal_rough_laplacian_matrix(K: MinimalSubmanifold):
    """Nonnegative rough Laplacian (nabla^N)* nabla^N on sections.

    Assembled as -(D2 + D Omega + Omega D + Omega^2) per axis, with D2 the
    exact spectral second-derivative matrix; the even-grid Nyquist mode of a
    squared first-derivative matrix would otherwise produce a spurious kernel.
    """
    n = K.n
    lap = np.zeros((n * K.n_nodes, n * K.n_nodes))
    for a in range(K.k):
        D1 = np.kron(np.eye(n), _grid_diff_matrix(K, a, order=1))
        D2 = np.kron(np.eye(n), _grid_diff_matrix(K, a, order=2))
        Om = _omega_matrix(K, a)
        lap += -(D2 + D1 @ Om + Om @ D1 + Om @ Om)
    return lap


def jacobi_operator(K: MinimalSubmanifold) -> JacobiOperator:
    """Assemble J = Delta^N - R^N + B^N on sections of NK.

    Delta^N is the nonnegative rough Laplacian of the measured normal
    connection; the curvature term contracts over a tangent frame,
    [R]_{ij} = sum_a g(R(E_i, E_a) E_a, E_j), which reproduces the classical
    great-circle spectrum {j^2 - 1}; B^N comes from the second fundamental
    form coefficients.
    """
    nq, n = K.n_nodes, K.n
    lap = normal_rough_laplacian_matrix(K)
    Rlow = K.M.curvature(K.f_nodes).riemann_lowered
    # g(R(E_i, E_a) E_a, E_j) = R_low[al, be, ga, de] E_j^al E_a^be E_i^ga E_a^de
    Rterm = np.einsum("qwzxy,qjw,qkz,qix,qky->qij", Rlow, K.normal, K.tangent, K.normal, K.tangent)
    sff = second_fundamental_form(K)
    Rmat = np.zeros((n * nq, n * nq))
    Bmat = np.zeros((n * nq, n * nq))
    idx = np.arange(nq)
    for i in range(n):
        for j in range(n):
            Rmat[j * nq + idx, i * nq + idx] = Rterm[:, i, j]
            Bmat[j * nq + idx, i * nq + idx] = sff.b_operator[:, i, j]
    Jmat = lap - Rmat + Bmat
    Jmat = 0.5 * (Jmat + Jmat.T)
    eigs = np.linalg.eigvalsh(Jmat)
    sigma_min = float(np.min(np.abs(eigs)))
    return JacobiOperator(
        matrix=Jmat, laplacian=lap, curvature_term=Rmat, bn_term=Bmat,
        smallest_singular_value=sigma_min, eigenvalues=eigs,
    )


def nondegeneracy_check(K: MinimalSubmanifold, tol=1e-4):
    """Smallest singular value of J and the verdict sigma_min > tol."""
    J = K.jacobi_operator()
    return ("nondegenerate" if J.smallest_singular_value > tol else "degenerate", J.smallest_singular_value)


# ----------------------------------------------------------------------
# closed-geodesic shooting


def find_closed_geodesic(M: AmbientManifold, p0, v0, winding=None, tol=1e-10, max_iter=30, steps=4096):
    """Locate a closed geodesic by Newton iteration on the first-return map.

    ``winding``: chart displacement of one loop (defaults to the periods
    along the dominant direction of v0 for periodic charts, zero otherwise).
    The section is the hyperplane x[axis] = p0[axis] + winding[axis] with
    axis the dominant component of v0.  Unknowns are the transverse start
    position and transverse velocity; the speed is held at 1 by rescaling.

    Returns (p, v, period) with |F| < tol in phase space.
    """
    p0 = np.asarray(p0, dtype=float).copy()
    v0 = np.asarray(v0, dtype=float).copy()
    d = M.dim
    axis = int(np.argmax(np.abs(v0)))
    if winding is None:
        winding = np.zeros(d)
        if M.periods is not None:
            winding[axis] = M.periods[axis] * np.sign(v0[axis])
    winding = np.asarray(winding, dtype=float)
    target = p0[axis] + winding[axis]
    others = [i for i in range(d) if i != axis]

    def normalize(v):
        sp = M.norm(p_cur, v)
        return v / sp

    def fly(p, v):
        # integrate until x[axis] crosses target, then refine the crossing
        sp = float(M.norm(p, v))
        v = v / sp
        t_max = 2.5 * abs(winding[axis]) if winding[axis] != 0 else 2.5 * 2 * np.pi
        n = steps
        h = t_max / n
        x, u = p.copy(), v.copy()
        sign = np.sign(v[axis])
        for _ in range(n):
            xp, up = x, u
            k1x, k1v = u, M._accel(x, u)
            k2x, k2v = u + 0.5 * h * k1v, M._accel(x + 0.5 * h * k1x, u + 0.5 * h * k1v)
            k3x, k3v = u + 0.5 * h * k2v, M._accel(x + 0.5 * h * k2x, u + 0.5 * h * k2v)
            k4x, k4v = u + h * k3v, M._accel(x + h * k3x, u + h * k3v)
            x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
            u = u + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
            if sign * (x[axis] - target) >= 0.0:
                # refine crossing time within [0, h] from (xp, up)
                tau = h * (target - xp[axis]) / (x[axis] - xp[axis])
                for _ in range(40):
                    xs, us = _rk4_step(M, xp, up, tau)
                    err = xs[axis] - target
                    if abs(err) < 1e-14 * max(1.0, abs(target)):
                        break
                    tau -= err / us[axis]
                return xs, us
        raise RuntimeError("geodesic did not return to the section")

    p_cur = p0.copy()
    v_cur = v0 / M.norm(p0, v0)

    def residual(u):
        p = p_cur.copy()
        v = v_cur.copy()
        p[others] = u[: d - 1]
        v[others] = u[d - 1 :]
        x1, u1 = fly(p, v)
        sp1 = float(M.norm(x1, u1))
        return np.concatenate([x1[others] - p[others] - winding[others], u1[others] / sp1 - v[others]])

    u = np.concatenate([p_cur[others], v_cur[others]])
    for _ in range(max_iter):
        F = residual(u)
        if np.linalg.norm(F) < tol:
            break
        J = np.zeros((len(F), len(u)))
        h_fd = 1e-7
        for i in range(len(u)):
            up = u.copy()
            up[i] += h_fd
            um = u.copy()
            um[i] -= h_fd
            J[:, i] = (residual(up) - residual(um)) / (2 * h_fd)
        u = u - np.linalg.solve(J, F)
    else:
        raise RuntimeError(f"shooting failed to converge (|F| = {np.linalg.norm(F):.2e})")
    p_cur[others] = u[: d - 1]
    v_cur[others] = u[d - 1 :]
    v_cur = v_cur / M.norm(p_cur, v_cur)
    # period = arclength of the loop (unit speed)
    x1, u1 = fly(p_cur, v_cur)
    # recover period by integrating with recorded time: redo with stored t
    period = _loop_time(M, p_cur, v_cur, target, axis, winding)
    return p_cur, v_cur, period


def _rk4_step(M, x, v, h):
    k1x, k1v = v, M._accel(x, v)
    k2x, k2v = v + 0.5 * h * k1v, M._accel(x + 0.5 * h * k1x, v + 0.5 * h * k1v)
    k3x, k3v = v + 0.5 * h * k2v, M._accel(x + 0.5 * h * k2x, v + 0.5 * h * k2v)
    k4x, k4v = v + h * k3v, M._accel(x + h * k3x, v + h * k3v)
    return (
        x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x),
        v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v),
    )


def _loop_time(M, p, v, target, axis, winding, steps=4096):
    t_max = 2.5 * abs(winding[axis]) if winding[axis] != 0 else 2.5 * 2 * np.pi
    h = t_max / steps
    x, u = p.copy(), v.copy()
    t = 0.0
    sign = np.sign(v[axis])
    for _ in range(steps):
        xp, up = x, u
        x, u = _rk4_step(M, x, u, h)
        t += h
        if sign * (x[axis] - target) >= 0.0:
            tau = h * (target - xp[axis]) / (x[axis] - xp[axis])
            for _ in range(40):
                xs, us = _rk4_step(M, xp, up, tau)
                err = xs[axis] - target
                if abs(err) < 1e-14 * max(1.0, abs(target)):
                    break
                tau -= err / us[axis]
            return t - h + tau
    raise RuntimeError("geodesic did not return to the section")


# ----------------------------------------------------------------------
# catalog


def build_submanifold(
    M: AmbientManifold,
    spec: str,
    K_nodes=24,
    minimality_tol=1e-8,
    allow_nonminimal=False,
    shooting_tol=1e-10,
) -> MinimalSubmanifold:
    """Construct a catalog submanifold with frames, connection data and checks."""
    name, args = parse_geometry_id(spec) if "(" in spec else (spec, [])
    if name == "coordinate_circle":
        K = _coordinate_circle(M, int(float(args[0])), [float(a) for a in args[1:]], K_nodes)
    elif name == "sub_torus":
        K = _sub_torus(M, [int(float(a)) for a in args], K_nodes)
    elif name == "great_circle":
        K = _great_circle(M, K_nodes)
    elif name == "shot_geodesic":
        d = M.dim
        vals = [float(a) for a in args]
        K = _shot_geodesic(M, np.array(vals[:d]), np.array(vals[d : 2 * d]), K_nodes, shooting_tol)
    else:
        raise ValueError(f"unknown submanifold id {spec!r}")
    if K.n < 2:
        raise ValueError("tube construction requires codimension n >= 2")
    K.omega = _measure_omega(K)
    hk = _mean_curvature_vector(K)
    K.minimality_residual = float(np.abs(hk).max())
    if K.minimality_residual > minimality_tol and not allow_nonminimal:
        raise NotMinimalError(
            f"K is not minimal (|H_K| = {K.minimality_residual:.3e} > {minimality_tol:g}); "
            "pass allow_nonminimal=True for diagnostics"
        )
    _check_frames(K)
    return K


def _check_frames(K, tol=1e-9):
    g = K.M.metric(K.f_nodes)
    E = K.frame_matrix()
    gram = np.einsum("qia,qab,qjb->qij", E, g, E)
    err = np.abs(gram - np.eye(K.M.dim)).max()
    if err > tol:
        raise ValueError(f"frame orthonormality residual {err:.2e} exceeds {tol:g}")


def _arclength_nodes_on_line(M, base, direction, L_chart, n_nodes):
    """Split a straight chart line into n_nodes equal-arclength samples.

    The speed profile is periodic and smooth, so its antiderivative is
    computed spectrally (exact for band-limited speeds, e.g. any conformal
    trigonometric factor).
    """
    m = 4096
    t_dense = np.arange(m) * L_chart / m
    pts = base[None, :] + t_dense[:, None] * direction[None, :]
    sp = M.norm(pts, np.broadcast_to(direction, pts.shape))
    mean = float(np.mean(sp))
    fh = np.fft.fft(sp - mean)
    kk = 2.0 * np.pi * np.fft.fftfreq(m, d=1.0 / m) / L_chart
    with np.errstate(divide="ignore", invalid="ignore"):
        anti = np.where(kk != 0, fh / (1j * kk), 0.0)
    osc = np.real(np.fft.ifft(anti))
    s_dense = mean * t_dense + (osc - osc[0])
    L_g = mean * L_chart
    targets = np.arange(n_nodes) * L_g / n_nodes
    t_nodes = np.interp(targets, s_dense, t_dense)
    # sharpen each node with a few Newton steps on s(t) = target
    for _ in range(4):
        pts_n = base[None, :] + t_nodes[:, None] * direction[None, :]
        sp_n = M.norm(pts_n, np.broadcast_to(direction, pts_n.shape))
        s_n = mean * t_nodes + np.interp(t_nodes, t_dense, osc - osc[0], period=L_chart)
        t_nodes = t_nodes - (s_n - targets) / sp_n
    return t_nodes, L_g


def _coordinate_circle(M, axis, offsets, n_nodes):
    d = M.dim
    if M.periods is None:
        raise ValueError("coordinate_circle requires a periodic chart")
    base = np.zeros(d)
    others = [i for i in range(d) if i != axis]
    for i, off in zip(others, offsets):
        base[i] = off
    e_axis = np.eye(d)[axis]
    t_nodes, L_g = _arclength_nodes_on_line(M, base, e_axis, M.periods[axis], n_nodes)
    f = base[None, :] + t_nodes[:, None] * e_axis[None, :]
    tang = np.broadcast_to(e_axis, f.shape).copy()
    tang = tang / M.norm(f, tang)[:, None]
    seeds = _orthonormalize(M, f[0], [np.eye(d)[i] for i in others])
    normals, hol = _transport_frames_chartparam(M, base, e_axis, M.periods[axis], t_nodes, seeds)
    # f(s) - winding * s is periodic since t(s) - (L_chart / L_g) s is
    K = MinimalSubmanifold(
        M=M, k=1, n=d - 1, lengths=np.array([L_g]), shape=(n_nodes,),
        f_nodes=f, tangent=tang[:, None, :], normal=normals,
        winding=np.array([e_axis * M.periods[axis] / L_g]),
        catalog_id=f"coordinate_circle({axis})",
    )
    K.holonomy = hol
    return K


def _transport_frames_chartparam(M, base, direction, L_chart, t_nodes, seeds):
    """Transport seeds along the straight chart line through all t_nodes."""
    n_nodes = len(t_nodes)

    def curve(t):
        return base + t * direction

    def dcurve(t):
        return direction

    # integrate in the chart parameter, normalizing at nodes
    V = np.array(seeds)
    out = np.empty((n_nodes, len(seeds), M.dim))
    out[0] = V
    n_sub = 64
    for q in range(1, n_nodes + 1):
        t0 = t_nodes[q - 1]
        t1 = t_nodes[q] if q < n_nodes else L_chart
        h = (t1 - t0) / n_sub
        t = t0
        for _ in range(n_sub):
            def rhs(tt, W):
                x = curve(tt)
                xd = dcurve(tt)
                G = M.christoffel(x)
                return -np.einsum("abc,b,nc->na", G, xd, W)

            k1 = rhs(t, V)
            k2 = rhs(t + 0.5 * h, V + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, V + 0.5 * h * k2)
            k4 = rhs(t + h, V + h * k3)
            V = V + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        x = curve(t)
        g = M.metric(x)
        tau = direction / np.sqrt(direction @ g @ direction)
        V = V - np.outer(np.einsum("na,ab,b->n", V, g, tau), tau)
        V = np.stack(_orthonormalize(M, x, list(V)))
        if q < n_nodes:
            out[q] = V
    # holonomy between transported end frame and start frame
    g0 = M.metric(base)
    R = np.einsum("ia,ab,jb->ij", V, g0, out[0])
    ang = float(np.arctan2(R[0, 1], R[0, 0])) if len(seeds) == 2 else 0.0
    if len(seeds) == 2 and abs(ang) > 1e-14:
        for q in range(n_nodes):
            frac = q / n_nodes
            c, s_ = np.cos(ang * frac), np.sin(ang * frac)
            rot = np.array([[c, -s_], [s_, c]])
            out[q] = rot @ out[q]
    return out, ang


def _sub_torus(M, axes, n_nodes):
    d = M.dim
    if M.periods is None or not M.is_flat:
        raise ValueError("sub_torus requires a flat periodic chart")
    k = len(axes)
    if isinstance(n_nodes, int):
        shape = (n_nodes,) * k
    else:
        shape = tuple(n_nodes)
    lengths = np.array([M.periods[a] for a in axes])
    grids = [np.arange(N) * L / N for N, L in zip(shape, lengths)]
    mesh = np.meshgrid(*grids, indexing="ij")
    nq = int(np.prod(shape))
    f = np.zeros((nq, d))
    for a, m in zip(axes, mesh):
        f[:, a] = m.reshape(-1)
    others = [i for i in range(d) if i not in axes]
    tang = np.zeros((nq, k, d))
    for j, a in enumerate(axes):
        tang[:, j, a] = 1.0
    norm = np.zeros((nq, d - k, d))
    for j, i in enumerate(others):
        norm[:, j, i] = 1.0
    winding = np.zeros((k, d))
    for j, a in enumerate(axes):
        winding[j, a] = 1.0
    return MinimalSubmanifold(
        M=M, k=k, n=d - k, lengths=lengths, shape=shape, f_nodes=f,
        tangent=tang, normal=norm, winding=winding,
        catalog_id="sub_torus(" + ",".join(map(str, axes)) + ")",
    )


def _great_circle(M, n_nodes):
    """Equator great circle of a round sphere in its stereographic chart."""
    if not (M.catalog_id or "").startswith("round_sphere"):
        raise ValueError("great_circle requires a round_sphere geometry")
    r = M.chart_scale
    d = M.dim
    if d != 3:
        raise ValueError("great_circle is provided for round_sphere(3, r)")
    L_g = 2 * np.pi * r
    s = np.arange(n_nodes) * L_g / n_nodes
    c, sn = np.cos(s / r), np.sin(s / r)
    f = np.stack([r * c, r * sn, np.zeros_like(s)], axis=-1)
    tang = np.stack([-sn, c, np.zeros_like(s)], axis=-1)[:, None, :]
    e_rad = np.stack([c, sn, np.zeros_like(s)], axis=-1)
    e_up = np.zeros_like(e_rad)
    e_up[:, 2] = 1.0
    normal = np.stack([e_rad, e_up], axis=1)
    K = MinimalSubmanifold(
        M=M, k=1, n=2, lengths=np.array([L_g]), shape=(n_nodes,),
        f_nodes=f, tangent=tang, normal=normal, winding=np.zeros((1, d)),
        catalog_id="great_circle",
    )
    return K


def _shot_geodesic(M, p0, v0, n_nodes, tol):
    p, v, period = find_closed_geodesic(M, p0, v0, tol=tol)
    d = M.dim
    # sample the unit-speed loop at equal arclength (= equal time)
    n_sub = max(64, 8192 // n_nodes)
    f = np.empty((n_nodes, d))
    tang = np.empty((n_nodes, d))
    x, u = p.copy(), v.copy()
    h = period / (n_nodes * n_sub)
    for q in range(n_nodes):
        f[q] = x
        tang[q] = u
        for _ in range(n_sub):
            x, u = _rk4_step(M, x, u, h)
    closure = np.linalg.norm(_wrap_diff(M, x, p))
    if closure > 1e-7:
        raise RuntimeError(f"shot geodesic failed to close (defect {closure:.2e})")
    tang = tang / M.norm(f, tang)[:, None]
    others_seed = [v for v in np.eye(d)]
    # choose two seed vectors orthogonal to the tangent at f[0]
    g0 = M.metric(f[0])
    cand = []
    for e in others_seed:
        w = e - (e @ g0 @ tang[0]) * tang[0]
        if np.linalg.norm(w) > 0.3:
            cand.append(w)
        if len(cand) == d - 1:
            break
    seeds = _orthonormalize(M, f[0], cand)[: d - 1]

    # dense transport along the integrated loop
    xs = [p.copy()]
    us = [v.copy()]
    x, u = p.copy(), v.copy()
    steps = n_nodes * n_sub
    for _ in range(steps):
        x, u = _rk4_step(M, x, u, h)
        xs.append(x.copy())
        us.append(u.copy())
    xs, us = np.array(xs), np.array(us)
    V = np.array(seeds)
    frames = np.empty((n_nodes, d - 1, d))
    frames[0] = V
    for step in range(steps):
        # transport across one RK4 substep using the midpoint field
        def rhs(xx, uu, W):
            G = M.christoffel(xx)
            return -np.einsum("abc,b,nc->na", G, uu, W)

        xm, um = _rk4_step(M, xs[step], us[step], 0.5 * h)
        k1 = rhs(xs[step], us[step], V)
        k2 = rhs(xm, um, V + 0.5 * h * k1)
        k3 = rhs(xm, um, V + 0.5 * h * k2)
        k4 = rhs(xs[step + 1], us[step + 1], V + h * k3)
        V = V + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if (step + 1) % n_sub == 0:
            q = (step + 1) // n_sub
            xq = xs[step + 1]
            gq = M.metric(xq)
            tq = us[step + 1] / np.sqrt(us[step + 1] @ gq @ us[step + 1])
            V = V - np.outer(np.einsum("na,ab,b->n", V, gq, tq), tq)
            V = np.stack(_orthonormalize(M, xq, list(V)))
            if q < n_nodes:
                frames[q] = V
    g0 = M.metric(f[0])
    R = np.einsum("ia,ab,jb->ij", V, g0, frames[0])
    ang = float(np.arctan2(R[0, 1], R[0, 0])) if d - 1 == 2 else 0.0
    if d - 1 == 2 and abs(ang) > 1e-14:
        for q in range(n_nodes):
            frac = q / n_nodes
            cc, ss = np.cos(ang * frac), np.sin(ang * frac)
            rot = np.array([[cc, -ss], [ss, cc]])
            frames[q] = rot @ frames[q]
    winding = np.zeros((1, d))
    if M.periods is not None:
        winding[0] = np.round((xs[-1] - xs[0]) / M.periods) * M.periods / period
    K = MinimalSubmanifold(
        M=M, k=1, n=d - 1, lengths=np.array([period]), shape=(n_nodes,),
        f_nodes=f, tangent=tang[:, None, :], normal=frames, winding=winding,
        catalog_id="shot_geodesic",
    )
    K.holonomy = ang
    return K


def _wrap_diff(M, a, b):
    d = a - b
    if M.periods is not None:
        d = np.remainder(d + M.periods / 2, M.periods) - M.periods / 2
    return d
