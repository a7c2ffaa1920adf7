"""Perturbed geodesic tubes over the spherical normal bundle.

The tube S_rho(w, Phi) is the image of (z, s) -> F(rho (1+w(z,s)) Theta(z)
+ Phi(s), s) in Fermi coordinates.  All geometric quantities (first and
second fundamental forms, unit normal, mean curvature) are computed exactly
on the grid from the cached Fermi metric field: tangent vectors and their
partials are analytic in the graph data, so the only numerical ingredients
are the metric interpolant and the grid derivatives of (w, Phi).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from .fermi import FermiField
from .fiber import make_fiber
from .submanifold import MinimalSubmanifold

__all__ = [
    "SNKGrid",
    "TubeState",
    "TubeGeometry",
    "tube_geometry",
    "embed",
    "mc_residual",
    "model_operator_apply",
    "curvature_bracket",
    "verify_mc_expansion",
    "densities",
    "state_to_dict",
    "state_from_dict",
    "GraphConditionError",
]


class GraphConditionError(ValueError):
    """1 + w <= 0 somewhere: the perturbed tube is not a graph."""


@dataclass
class SNKGrid:
    """Product grid (fiber sphere) x (K nodes) with quadrature and projections."""

    fiber: object
    K: MinimalSubmanifold

    @property
    def n_fiber(self):
        return self.fiber.n_nodes

    @property
    def n_K(self):
        return self.K.n_nodes

    @property
    def shape(self):
        return (self.fiber.n_nodes, self.K.n_nodes)

    @property
    def size(self):
        return self.fiber.n_nodes * self.K.n_nodes

    @property
    def omega(self):
        """Volume of the fiber sphere S^{n-1}."""
        return float(self.fiber.total_measure)

    @property
    def mu(self):
        """Quadrature weights of the product measure dsigma x dvol_K, (Nf, Nq)."""
        return np.tile(self.fiber.w_sigma[:, None] * self.K.node_weight, (1, self.n_K))

    def integrate(self, v):
        return float(np.sum(v * self.mu))

    def project_S(self, v):
        """Fiberwise projection onto the degree-1 subspace (the space S)."""
        return np.einsum("FG,GQ->FQ", self.fiber.proj_S, v)

    def section_from_S(self, v):
        """Phi with Pi v = g(Phi, Theta); uses int Theta^i Theta^j = (omega/n) delta."""
        n = self.fiber.n
        return (n / self.omega) * np.einsum("fq,f,fi->iq", v, self.fiber.w_sigma, self.fiber.theta)

    def S_from_section(self, phi):
        return np.einsum("iq,fi->fq", phi, self.fiber.theta)

    def decompose(self, v, rho):
        """v = rho w + g(Phi, Theta) with Pi w = 0."""
        phi = self.section_from_S(v)
        w = (v - self.S_from_section(phi)) / rho
        return w, phi

    def compose(self, w, phi, rho):
        return rho * w + self.S_from_section(phi)

    def fiber_average(self, w):
        """w_0: the fiber average of w, as a function on K."""
        return np.einsum("f,fq->q", self.fiber.w_sigma, w) / self.omega

    # -- derivatives -----------------------------------------------------------

    def fiber_derivs(self, w):
        wz = np.stack([self.fiber.D[j] @ w for j in range(self.fiber.zdim)])
        wzz = np.stack(
            [np.stack([self.fiber.D2[i][j] @ w for j in range(self.fiber.zdim)]) for i in range(self.fiber.zdim)]
        )
        return wz, wzz

    def k_deriv(self, fld, axis, order=1):
        return self.K.d_ds(fld, axis, order=order)

    def lap_K(self, fld):
        out = np.zeros_like(fld)
        for a in range(self.K.k):
            out += self.K.d_ds(fld, a, order=2)
        return out

    def grad_K_squared(self, fld):
        out = np.zeros_like(fld)
        for a in range(self.K.k):
            out += self.K.d_ds(fld, a) ** 2
        return out

    def fiber_grad_squared(self, w):
        if self.fiber.zdim == 1:
            return (self.fiber.D[0] @ w) ** 2
        g0 = self.fiber.D[0] @ w
        g1 = self.fiber.D[1] @ w
        st = np.sin(self.fiber.z[:, 0])[:, None]
        return g0**2 + (g1 / st) ** 2

    # -- norms (the paper's weighted pairings) ----------------------------------

    def h1_rho_norm_sq(self, w, phi, rho):
        part_w = self.integrate(rho**2 * self.grad_K_squared(w) + self.fiber_grad_squared(w) + w**2)
        gphi = sum(self.K.d_ds(phi, a) ** 2 for a in range(self.K.k))
        part_phi = self.omega * self.K.node_weight * float(np.sum(gphi + phi**2))
        return part_w + part_phi

    def l2_norm_sq(self, w, phi):
        return self.integrate(w**2) + self.omega * self.K.node_weight * float(np.sum(phi**2))


@dataclass
class TubeState:
    """Tube data (rho, w, Phi) on an SNK grid."""

    rho: float
    w: np.ndarray  # (Nf, Nq)
    phi: np.ndarray  # (n, Nq)
    provenance: str = "raw"

    def copy(self, provenance=None):
        return TubeState(self.rho, self.w.copy(), self.phi.copy(), provenance or self.provenance)

    @staticmethod
    def zero(grid: SNKGrid, rho):
        return TubeState(float(rho), np.zeros(grid.shape), np.zeros((grid.fiber.n, grid.n_K)))


@dataclass
class TubeGeometry:
    """Pointwise extrinsic geometry of an embedded tube."""

    offsets: np.ndarray  # (Nf, Nq, n) normal coordinates
    points: np.ndarray  # (Nf, Nq, dim) ambient chart points
    tangents: np.ndarray  # (m, Nf, Nq, dim) Fermi components of the tangent frame
    first_ff: np.ndarray  # (Nf, Nq, m, m)
    normal: np.ndarray  # (Nf, Nq, dim), Fermi components, g(N, Upsilon) < 0
    second_ff: np.ndarray  # (Nf, Nq, m, m)
    mean_curvature: np.ndarray  # (Nf, Nq)
    shape_norm: np.ndarray  # (Nf, Nq): |A|^2
    area_element: np.ndarray  # (Nf, Nq): sqrt(det I) / fiber chart density

    @property
    def m(self):
        return self.first_ff.shape[-1]


def graph_channels(grid: SNKGrid, state: TubeState):
    """All grid-derivative fields the tube geometry depends on, as a dict.

    The geometry at a node is a pointwise function of these channel values,
    which is what makes the semi-analytic Jacobian assembly possible.
    """
    w, phi = state.w, state.phi
    if np.min(1.0 + w) <= 0.0:
        raise GraphConditionError("graph condition 1 + w > 0 violated")
    K = grid.K
    fib = grid.fiber
    wz, wzz = grid.fiber_derivs(w)
    wa = np.stack([grid.k_deriv(w, a) for a in range(K.k)])
    wza = np.stack([np.stack([grid.k_deriv(wz[j], a) for a in range(K.k)]) for j in range(fib.zdim)])
    wab = np.stack(
        [np.stack([grid.k_deriv(wa[a], b) if b != a else grid.k_deriv(w, a, order=2) for b in range(K.k)])
         for a in range(K.k)]
    )
    phia = np.stack([grid.k_deriv(phi, a) for a in range(K.k)])
    phiab = np.stack(
        [np.stack([grid.k_deriv(phia[a], b) if b != a else grid.k_deriv(phi, a, order=2) for b in range(K.k)])
         for a in range(K.k)]
    )
    return {
        "w": w, "wz": wz, "wzz": wzz, "wa": wa, "wza": wza, "wab": wab,
        "phi": phi, "phia": phia, "phiab": phiab,
    }


def geometry_from_channels(field: FermiField, grid: SNKGrid, rho, ch, need_points=True) -> TubeGeometry:
    """Pointwise tube geometry from precomputed channel values."""
    K = grid.K
    fib = grid.fiber
    n, k = K.n, K.k
    d = n + k
    zdim = fib.zdim
    m = zdim + k
    w, phi = ch["w"], ch["phi"]
    Th, dTh, d2Th = fib.theta, fib.dtheta, fib.d2theta
    wz, wzz, wa, wza, wab = ch["wz"], ch["wzz"], ch["wa"], ch["wza"], ch["wab"]
    phia, phiab = ch["phia"], ch["phiab"]

    x = rho * (1.0 + w)[..., None] * Th[:, None, :] + phi.T[None, :, :]
    g = field.metric(x)
    Gam = field.christoffel(x)

    T = np.zeros((m,) + grid.shape + (d,))
    for j in range(zdim):
        T[j, ..., :n] = rho * ((1.0 + w)[..., None] * dTh[:, j][:, None, :] + wz[j][..., None] * Th[:, None, :])
    for a in range(k):
        T[zdim + a, ..., :n] = rho * wa[a][..., None] * Th[:, None, :] + phia[a].transpose(1, 0)[None, :, :]
        T[zdim + a, ..., n + a] = 1.0

    P = np.zeros((m, m) + grid.shape + (d,))
    for i in range(zdim):
        for j in range(zdim):
            P[i, j, ..., :n] = rho * (
                (1.0 + w)[..., None] * d2Th[:, i, j][:, None, :]
                + wz[i][..., None] * dTh[:, j][:, None, :]
                + wz[j][..., None] * dTh[:, i][:, None, :]
                + wzz[i, j][..., None] * Th[:, None, :]
            )
    for j in range(zdim):
        for a in range(k):
            block = rho * (wa[a][..., None] * dTh[:, j][:, None, :] + wza[j, a][..., None] * Th[:, None, :])
            P[j, zdim + a, ..., :n] = block
            P[zdim + a, j, ..., :n] = block
    for a in range(k):
        for b in range(k):
            P[zdim + a, zdim + b, ..., :n] = (
                rho * wab[a, b][..., None] * Th[:, None, :] + phiab[a, b].transpose(1, 0)[None, :, :]
            )

    I = np.einsum("aFQx,FQxy,bFQy->FQab", T, g, T)
    # unit normal: Euclidean null vector of T g, oriented against Upsilon
    Mmat = np.einsum("aFQx,FQxy->FQay", T, g)
    _, _, vt = np.linalg.svd(Mmat)
    N = vt[..., -1, :]
    Ups = np.zeros(grid.shape + (d,))
    Ups[..., :n] = Th[:, None, :]
    gNU = np.einsum("FQx,FQxy,FQy->FQ", N, g, Ups)
    N = np.where((gNU > 0)[..., None], -N, N)
    N = N / np.sqrt(np.einsum("FQx,FQxy,FQy->FQ", N, g, N))[..., None]

    cov = P + np.einsum("FQxyz,aFQy,bFQz->abFQx", Gam, T, T)
    II = np.einsum("FQx,FQxy,abFQy->FQab", N, g, cov)
    S = np.linalg.solve(I, II)
    H = np.einsum("FQaa->FQ", S) / m
    A2 = np.einsum("FQab,FQba->FQ", S, S)
    detI = np.linalg.det(I)
    area_el = np.sqrt(np.maximum(detI, 0.0)) / fib.jac_sigma[:, None]
    pts = field.map_points(x) if need_points else None
    return TubeGeometry(
        offsets=x, points=pts, tangents=T, first_ff=I, normal=N, second_ff=II,
        mean_curvature=H, shape_norm=A2, area_element=area_el,
    )


def tube_geometry(field: FermiField, grid: SNKGrid, state: TubeState) -> TubeGeometry:
    """Exact numerical first/second fundamental forms, unit normal and H."""
    return geometry_from_channels(field, grid, state.rho, graph_channels(grid, state))


def embed(field: FermiField, grid: SNKGrid, state: TubeState):
    """Ambient points and tangent vectors of the embedded tube (diagnostics)."""
    geo = tube_geometry(field, grid, state)
    return geo.points, geo.offsets, geo.tangents


def normal_weight(field: FermiField, grid: SNKGrid, geo: TubeGeometry, rho):
    """The 1 + O(rho^2) density weight g(N, -Upsilon) sqrt(det I) / (rho^{n-1} J_Theta).

    This is the weight that makes the linearized mean-curvature map
    self-adjoint against the plain L^2(SNK) pairing.
    """
    n = grid.K.n
    g = field.metric(geo.offsets)
    Ups = np.zeros(grid.shape + (g.shape[-1],))
    Ups[..., :n] = grid.fiber.theta[:, None, :]
    gNU = np.einsum("FQx,FQxy,FQy->FQ", geo.normal, g, Ups)
    return (-gNU) * geo.area_element / rho ** (n - 1)


def residual_pair(field: FermiField, grid: SNKGrid, rho, ch):
    """(raw residual, weighted residual) from channel values.

    raw = rho m H - (n-1); weighted = A_rho * raw / rho with the density
    weight of :func:`normal_weight`.
    """
    geo = geometry_from_channels(field, grid, rho, ch, need_points=False)
    n = grid.K.n
    raw = rho * geo.m * geo.mean_curvature - (n - 1.0)
    a = normal_weight(field, grid, geo, rho)
    return raw, a * raw / rho


def channel_matrices(grid: SNKGrid, rho):
    """Linear maps from a grid function v to every geometry channel.

    v decomposes as v = rho w + g(Phi, Theta); the returned list pairs each
    scalar channel key with its dense matrix (w-type channels map to
    (Nf*Nq,)-flattened fields, phi-type channels to (Nq,) fields).
    """
    fib, K = grid.fiber, grid.K
    Nf, Nq = grid.shape
    N = Nf * Nq
    If, Iq = np.eye(Nf), np.eye(Nq)
    from .gridops import fourier_diff_matrix

    P_S = np.kron(fib.proj_S, Iq)
    M_w = (np.eye(N) - P_S) / rho
    band = getattr(fib, "band_projector", None)
    if band is not None:
        M_w = np.kron(band, Iq) @ M_w
    Dfib = [np.kron(fib.D[j], Iq) for j in range(fib.zdim)]
    D2fib = [[np.kron(fib.D2[i][j], Iq) for j in range(fib.zdim)] for i in range(fib.zdim)]
    DK1 = [_k_diff_matrix(K, a, 1) for a in range(K.k)]
    DK2 = [[DK1[a] @ DK1[b] if a != b else _k_diff_matrix(K, a, 2) for b in range(K.k)] for a in range(K.k)]
    DKf = [np.kron(If, D) for D in DK1]
    DK2f = [[np.kron(If, DK2[a][b]) for b in range(K.k)] for a in range(K.k)]
    # phi extraction rows: phi^i(q) = (n/omega) sum_f v[f, q] Theta^i_f w_f
    n = fib.n
    Sec = []
    for i in range(n):
        S_i = np.zeros((Nq, N))
        for f in range(Nf):
            S_i[np.arange(Nq), f * Nq + np.arange(Nq)] = (n / grid.omega) * fib.theta[f, i] * fib.w_sigma[f]
        Sec.append(S_i)

    mats = []
    mats.append((("w",), M_w))
    for j in range(fib.zdim):
        mats.append((("wz", j), Dfib[j] @ M_w))
    for i in range(fib.zdim):
        for j in range(fib.zdim):
            mats.append((("wzz", i, j), D2fib[i][j] @ M_w))
    for a in range(K.k):
        mats.append((("wa", a), DKf[a] @ M_w))
    for j in range(fib.zdim):
        for a in range(K.k):
            mats.append((("wza", j, a), DKf[a] @ Dfib[j] @ M_w))
    for a in range(K.k):
        for b in range(K.k):
            mats.append((("wab", a, b), DK2f[a][b] @ M_w))
    for i in range(n):
        mats.append((("phi", i), Sec[i]))
        for a in range(K.k):
            mats.append((("phia", a, i), DK1[a] @ Sec[i]))
        for a in range(K.k):
            for b in range(K.k):
                mats.append((("phiab", a, b, i), DK2[a][b] @ Sec[i]))
    return mats


def _k_diff_matrix(K, axis, order):
    from .gridops import fourier_diff_matrix

    D = fourier_diff_matrix(K.shape[axis], K.lengths[axis], order=order)
    if K.k == 1:
        return D
    eyes = [np.eye(Nn) for Nn in K.shape]
    eyes[axis] = D
    out = eyes[0]
    for e in eyes[1:]:
        out = np.kron(out, e)
    return out


def _channel_get(ch, key):
    arr = ch[key[0]]
    return arr[key[1:]] if len(key) > 1 else arr


def assemble_jacobians(field: FermiField, grid: SNKGrid, state: TubeState, eps=1e-6):
    """Jacobians of v -> raw residual and v -> weighted residual at a state.

    Exploits the pointwise structure: the residual at a node is a smooth
    function of the channel values at that node, so each channel contributes
    diag(partial) @ (channel matrix).  Cost is ~2 x (number of channels)
    geometry evaluations, independent of the grid size.
    """
    ch0 = graph_channels(grid, state)
    rho = state.rho
    mats = channel_matrices(grid, rho)
    N = grid.size
    J_raw = np.zeros((N, N))
    J_wt = np.zeros((N, N))
    for key, M in mats:
        chp = {k_: v.copy() for k_, v in ch0.items()}
        chm = {k_: v.copy() for k_, v in ch0.items()}
        arrp = _channel_get(chp, key)
        arrm = _channel_get(chm, key)
        arrp += eps
        arrm -= eps
        rp, wp = residual_pair(field, grid, rho, chp)
        rm, wm = residual_pair(field, grid, rho, chm)
        g_raw = (rp - rm) / (2 * eps)
        g_wt = (wp - wm) / (2 * eps)
        if key[0].startswith("w"):
            J_raw += g_raw.reshape(N)[:, None] * M
            J_wt += g_wt.reshape(N)[:, None] * M
        else:
            J_raw += (g_raw[..., None] * M[None, :, :]).reshape(N, N)
            J_wt += (g_wt[..., None] * M[None, :, :]).reshape(N, N)
    return J_raw, J_wt


def mc_residual(field: FermiField, grid: SNKGrid, state: TubeState):
    """rho m H - (n - 1) per node: the nonlinear CMC residual."""
    geo = tube_geometry(field, grid, state)
    n = grid.K.n
    m = geo.m
    return state.rho * m * geo.mean_curvature - (n - 1.0)


def model_operator_apply(grid: SNKGrid, rho, w):
    """L_rho w = -(rho^2 Delta_K + Delta_{S^{n-1}} + (n-1)) w on the grid."""
    n = grid.fiber.n
    return -(rho**2 * grid.lap_K(w) + np.einsum("FG,GQ->FQ", grid.fiber.lap, w) + (n - 1) * w)


# ----------------------------------------------------------------------
# expansion verification (Prop 4.1) and densities


def curvature_bracket(grid: SNKGrid):
    """The exact rho^2 coefficient of the tube mean-curvature expansion, per node:

        sum_a g(R(Theta, E_a) Theta, E_a)            (tangent directions)
        + (1/3) sum_i g(R(Theta, E_i) Theta, E_i)    (normal directions)
        - g(B^N Theta, Theta).

    Equivalently -Ric(Theta, Theta) - (2/3) g(R^N Theta, Theta) - g(B^N
    Theta, Theta) with R^N the normal-frame curvature contraction.  On
    constant-curvature spaces this evaluates to the same number as the
    condensed (2/3, -1/3) combination, but the two differ in general; the
    residual-order tests pin this version down.
    """
    K = grid.K
    n = K.n
    C = K.M.curvature(K.f_nodes)
    E = np.concatenate([K.normal, K.tangent], axis=1)  # rows: normals then tangents
    Rf = np.einsum("qwxyz,qaw,qbx,qcy,qdz->qabcd", C.riemann_lowered, E, E, E, E)
    # SA_{ij} = sum_a g(R(E_i-slot..., E_a) ...): quadratic forms in Theta
    SA = np.zeros((K.n_nodes, n, n))
    SI = np.zeros((K.n_nodes, n, n))
    for i in range(n):
        for j in range(n):
            for a in range(K.k):
                # g(R(Theta, E_a) Theta, E_a): W = E_a, Z = Theta, X = Theta, Y = E_a
                SA[:, i, j] += Rf[:, n + a, i, j, n + a]
            for l in range(n):
                SI[:, i, j] += Rf[:, l, i, j, l]
    B = K.second_fundamental_form().b_operator
    Th = grid.fiber.theta
    quad = lambda Mq: np.einsum("fi,qij,fj->fq", Th, Mq, Th)
    return quad(SA) + quad(SI) / 3.0 - quad(B)


def verify_mc_expansion(field: FermiField, grid: SNKGrid, rho_values, fd_eps=1e-6, check_linear=True):
    """Order checks of the mean-curvature expansion around the exact tube.

    Returns a report with: sup-residual per rho and its slope; the slope
    after subtracting the rho^2 curvature bracket; and (optionally) the
    defects of the linear responses in w and Phi directions against the
    model operator L_rho and the Jacobi pairing rho g(J Phi, Theta).
    """
    from .gridops import loglog_slope

    rho_values = np.asarray(rho_values, dtype=float)
    K = grid.K
    n = K.n
    bracket = curvature_bracket(grid)
    sup0, sup_sub = [], []
    for rho in rho_values:
        res = mc_residual(field, grid, TubeState.zero(grid, rho))
        sup0.append(np.abs(res).max())
        sup_sub.append(np.abs(res - rho**2 * bracket).max())
    report = {
        "rho": rho_values,
        "resid_sup": np.array(sup0),
        "resid_after_bracket": np.array(sup_sub),
        "slope_raw": loglog_slope(rho_values, np.array(sup0)),
        "slope_after_bracket": (
            np.inf if max(sup_sub) < 1e-11 else loglog_slope(rho_values, np.array(sup_sub))
        ),
    }
    if not check_linear:
        return report
    # linear response at the smallest rho of the sweep
    rho = float(rho_values.min())
    rng = np.random.default_rng(11)
    # w direction: a harmonic of degree != 1 times a low K mode
    if grid.fiber.zdim == 1:
        t = grid.fiber.z[:, 0]
        dw = np.cos(2 * t)[:, None] * (1.0 + 0.3 * np.cos(2 * np.pi * np.arange(grid.n_K) / grid.n_K))[None, :]
    else:
        dw = (grid.fiber.theta[:, 2] ** 2 - 1.0 / 3.0)[:, None] * np.ones((1, grid.n_K))
    base = TubeState.zero(grid, rho)
    rp = TubeState(rho, fd_eps * dw, base.phi)
    rm = TubeState(rho, -fd_eps * dw, base.phi)
    dnum = (mc_residual(field, grid, rp) - mc_residual(field, grid, rm)) / (2 * fd_eps)
    dmodel = model_operator_apply(grid, rho, dw)
    report["w_response_defect"] = float(np.abs(dnum - dmodel).max())
    report["w_response_scale"] = float(np.abs(dmodel).max())
    # Phi direction: smooth random section built from low K modes
    J = K.jacobi_operator()
    grids = K.grids()
    mesh = [m_.reshape(-1) for m_ in np.meshgrid(*grids, indexing="ij")]
    dphi = np.zeros((n, grid.n_K))
    for i in range(n):
        fld = np.full(grid.n_K, rng.normal())
        for a, s in enumerate(mesh):
            kfreq = 2 * np.pi / K.lengths[a]
            fld = fld + rng.normal() * np.cos(kfreq * s) + rng.normal() * np.sin(2 * kfreq * s)
        dphi[i] = fld
    dphi = dphi / np.abs(dphi).max()
    pp = TubeState(rho, base.w, fd_eps * dphi)
    pm = TubeState(rho, base.w, -fd_eps * dphi)
    dnum_phi = (mc_residual(field, grid, pp) - mc_residual(field, grid, pm)) / (2 * fd_eps)
    jphi = J.apply(dphi)
    dmodel_phi = rho * grid.S_from_section(jphi)
    report["phi_response_defect"] = float(np.abs(dnum_phi - dmodel_phi).max())
    report["phi_response_scale"] = float(max(np.abs(dmodel_phi).max(), 1e-30))
    return report


def densities(field: FermiField, grid: SNKGrid, state: TubeState, q=2):
    """Rescaled area and curvature densities with their small-rho limits.

    area_density = rho^{k-m} Area(S_rho); curvature_density =
    rho^{k-m+q} int |A|^q; limits omega_{m-k} vol(K) and
    (m-k)^{q/2} omega_{m-k} vol(K).
    """
    K = grid.K
    geo = tube_geometry(field, grid, state)
    m = geo.m
    k = K.k
    rho = state.rho
    wts = (grid.fiber.w_sigma / grid.fiber.jac_sigma)[:, None] * K.node_weight
    area = float(np.sum(geo.area_element * grid.fiber.jac_sigma[:, None] * wts))
    curv = float(np.sum(np.abs(geo.shape_norm) ** (q / 2.0) * geo.area_element * grid.fiber.jac_sigma[:, None] * wts))
    area_density = rho ** (k - m) * area
    curvature_density = rho ** (k - m + q) * curv
    vol_K = K.volume
    omega = grid.omega
    return {
        "area_density": area_density,
        "curvature_density": curvature_density,
        "area_limit": omega * vol_K,
        "curvature_limit": (m - k) ** (q / 2.0) * omega * vol_K,
        "q": q,
    }


# ----------------------------------------------------------------------
# state (de)serialization


def state_to_dict(state: TubeState, grid: SNKGrid):
    return {
        "rho": state.rho,
        "provenance": state.provenance,
        "grid": {
            "n": grid.fiber.n,
            "k": grid.K.k,
            "fiber_nodes": grid.fiber.n_nodes,
            "K_shape": list(grid.K.shape),
            "K_lengths": [float(L) for L in grid.K.lengths],
            "degree_budget": grid.fiber.degree_budget,
        },
        "w": state.w.tolist(),
        "phi": state.phi.tolist(),
    }


def state_from_dict(d, grid: SNKGrid):
    gmeta = d["grid"]
    if tuple(gmeta["K_shape"]) != grid.K.shape or gmeta["fiber_nodes"] != grid.fiber.n_nodes:
        raise ValueError("state grid metadata does not match the provided grid")
    w = np.asarray(d["w"], dtype=float)
    phi = np.asarray(d["phi"], dtype=float)
    return TubeState(float(d["rho"]), w, phi, d.get("provenance", "raw"))
