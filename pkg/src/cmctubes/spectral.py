"""Spectral analysis of the linearized CMC operator on the spherical normal bundle.

The generalized symmetric eigenproblem A v = sigma B v is posed against the
weighted L^2(SNK) pairing (B is the quadrature mass).  Two assembly modes:

* ``model``: the exact model operator (1/rho) L_rho w + g(J Phi, Theta) in
  matrix form (L_rho = -(rho^2 Delta_K + Delta_fiber + (n-1))).
* ``full``: the semi-analytic Jacobian of the weighted nonlinear residual at
  a background tube state, symmetrized; the skew defect is recorded.

For the flat catalog (flat torus + coordinate circle / sub-torus) the model
operator diagonalizes in Fourier modes, and sweeps/resonances/Weyl counts
use exact mode enumeration; the dense path is cross-checked against it in
the tests at moderate resolution.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .fermi import FermiField
from .gridops import loglog_slope
from .submanifold import MinimalSubmanifold
from .tube import SNKGrid, TubeState, assemble_jacobians

__all__ = [
    "LinearizedOperator",
    "ModeDecomposition",
    "SpectralReport",
    "FlatModelSpectrum",
    "assemble",
    "eigensolve",
    "eigen_sweep",
    "eigenvalue_derivative",
    "localization_check",
    "build_intervals",
    "gap_measure",
    "is_flat_model",
]


@dataclass
class ModeDecomposition:
    """Projections between grid functions and the (w, Phi) mode split."""

    grid: SNKGrid

    def project_S(self, v):
        return self.grid.project_S(v)

    def project_perp(self, v):
        return v - self.grid.project_S(v)

    def split_w(self, w):
        w0 = self.grid.fiber_average(w)
        return w0, w - w0[None, :]

    def decompose(self, v, rho):
        return self.grid.decompose(v, rho)

    def compose(self, w, phi, rho):
        return self.grid.compose(w, phi, rho)


@dataclass
class LinearizedOperator:
    """Generalized symmetric pair (A, B) for the linearized operator at rho."""

    rho: float
    stiffness: np.ndarray
    mass: np.ndarray
    mode: str
    grid: SNKGrid
    skew_defect: float = 0.0
    jacobian_raw: np.ndarray = None
    background: TubeState = None

    def eigensolve(self, count=None):
        return eigensolve(self, count)


def model_operator_matrix(grid: SNKGrid, K: MinimalSubmanifold, rho):
    """Dense matrix of v -> (1/rho) L_rho w + g(J Phi, Theta) on grid functions."""
    from .tube import channel_matrices, _k_diff_matrix

    fib = grid.fiber
    Nf, Nq = grid.shape
    N = Nf * Nq
    If, Iq = np.eye(Nf), np.eye(Nq)
    n = fib.n
    P_S = np.kron(fib.proj_S, Iq)
    M_w = (np.eye(N) - P_S) / rho
    band = getattr(fib, "band_projector", None)
    if band is not None:
        M_w = np.kron(band, Iq) @ M_w
    LapK = sum(np.kron(If, _k_diff_matrix(K, a, 2)) for a in range(K.k))
    Lapf = np.kron(fib.lap, Iq)
    L_rho = -(rho**2 * LapK + Lapf + (n - 1) * np.eye(N))
    # Phi chain: extract sections, apply J, re-embed into S
    J = K.jacobi_operator()
    Sec = np.zeros((n * Nq, N))
    for i in range(n):
        for f in range(Nf):
            Sec[i * Nq + np.arange(Nq), f * Nq + np.arange(Nq)] = (
                (n / grid.omega) * fib.theta[f, i] * fib.w_sigma[f]
            )
    Emb = np.zeros((N, n * Nq))
    for i in range(n):
        for f in range(Nf):
            Emb[f * Nq + np.arange(Nq), i * Nq + np.arange(Nq)] = fib.theta[f, i]
    return (1.0 / rho) * (L_rho @ M_w) + Emb @ J.matrix @ Sec


def assemble(field: FermiField, grid: SNKGrid, rho, mode="model", background: TubeState = None) -> LinearizedOperator:
    """Assemble the linearized operator at radius rho.

    ``model`` ignores the background; ``full`` requires one (defaults to the
    unperturbed tube) and symmetrizes the weighted Jacobian, recording the
    skew defect.
    """
    K = grid.K
    mu = grid.mu.reshape(grid.size)
    B = np.diag(mu)
    if mode == "model":
        L = model_operator_matrix(grid, K, rho)
        A = mu[:, None] * L
        defect = float(np.abs(A - A.T).max() / max(np.abs(A).max(), 1e-300))
        A = 0.5 * (A + A.T)
        return LinearizedOperator(rho=float(rho), stiffness=A, mass=B, mode="model",
                                  grid=grid, skew_defect=defect)
    if mode != "full":
        raise ValueError("mode must be 'model' or 'full'")
    if background is None:
        background = TubeState.zero(grid, rho)
    J_raw, J_wt = assemble_jacobians(field, grid, background)
    A = mu[:, None] * J_wt
    defect = float(np.abs(A - A.T).max() / max(np.abs(A).max(), 1e-300))
    A = 0.5 * (A + A.T)
    return LinearizedOperator(
        rho=float(rho), stiffness=A, mass=B, mode="full", grid=grid,
        skew_defect=defect, jacobian_raw=J_raw, background=background,
    )


def eigensolve(op: LinearizedOperator, count=None):
    """Eigenvalues (ascending) and B-orthonormal eigenvectors of (A, B)."""
    sig, vec = scipy.linalg.eigh(op.stiffness, op.mass)
    if count is not None and count < len(sig):
        idx = np.argsort(np.abs(sig))[:count]
        idx = idx[np.argsort(sig[idx])]
        return sig[idx], vec[:, idx]
    return sig, vec


def s_content(grid: SNKGrid, vec):
    """Fraction of the B-norm of a grid eigenvector lying in the S subspace."""
    v = vec.reshape(grid.shape)
    pv = grid.project_S(v)
    num = grid.integrate(pv**2)
    den = grid.integrate(v**2)
    return num / den if den > 0 else 0.0


# ----------------------------------------------------------------------
# flat-model exact mode enumeration


def is_flat_model(K: MinimalSubmanifold):
    """True when the ambient is flat and K is a coordinate circle / sub-torus."""
    return K.M.is_flat and (
        K.catalog_id.startswith("coordinate_circle") or K.catalog_id.startswith("sub_torus")
    )


class FlatModelSpectrum:
    """Closed-form spectrum of the model operator on the flat catalog.

    w-branches: sigma(rho) = |xi|^2 + (lambda_l - (n-1)) / rho^2 over K
    frequencies xi and fiber degrees l != 1; the Jacobi block contributes the
    rho-independent eigenvalues |xi|^2 (n-fold).
    """

    def __init__(self, K: MinimalSubmanifold, n, rho_min=0.02, fiber_degree_max=8):
        if not is_flat_model(K):
            raise ValueError("flat-model enumeration requires the flat catalog")
        self.K = K
        self.n = int(n)
        self.rho_min = float(rho_min)
        base = 2 * np.pi / K.lengths
        bound = np.sqrt(self.n - 1) / rho_min + 3 * max(base)
        ranges = [np.arange(-int(np.ceil(bound / b)), int(np.ceil(bound / b)) + 1) for b in base]
        mesh = np.meshgrid(*[r * b for r, b in zip(ranges, base)], indexing="ij")
        xi2 = sum(m_**2 for m_ in mesh).reshape(-1)
        self.xi2_sorted = np.sort(xi2)
        if n == 2:
            self.fiber_degrees = [(l, float(l * l), 1 if l == 0 else 2) for l in range(fiber_degree_max + 1)]
        else:
            self.fiber_degrees = [(l, float(l * (l + 1)), 2 * l + 1) for l in range(fiber_degree_max + 1)]

    def index_w_block(self, rho):
        """Number of negative w-branches (only fiber degree 0 contributes)."""
        thr = (self.n - 1) / rho**2
        return int(bisect_left(self.xi2_sorted, thr * (1 - 1e-14)))

    def jacobi_nonpositive(self, rho=None):
        return int(np.sum(self.xi2_sorted <= 1e-14)) * self.n

    def eigenvalues(self, rho, count):
        """Lowest `count` eigenvalues of the model operator (w and Jacobi blocks)."""
        vals = []
        for l, lam, mult in self.fiber_degrees:
            if l == 1:
                continue
            sig = self.xi2_sorted + (lam - (self.n - 1)) / rho**2
            vals.append(np.repeat(sig, mult) if mult > 1 else sig)
        vals.append(np.repeat(self.xi2_sorted, self.n))  # Jacobi block
        allv = np.sort(np.concatenate(vals))
        return allv[:count]

    def resonances(self, lo, hi):
        """(rho_i, multiplicity) of zero crossings, descending in rho."""
        out = {}
        for x2 in self.xi2_sorted:
            if x2 <= 0:
                continue
            r = np.sqrt((self.n - 1) / x2)
            if lo <= r <= hi:
                out[round(r, 12)] = out.get(round(r, 12), 0) + 1
        return sorted(out.items(), key=lambda t: -t[0])

    def branch_sigma(self, xi2, l, rho):
        lam = l * l if self.n == 2 else l * (l + 1)
        return xi2 + (lam - (self.n - 1)) / rho**2


# ----------------------------------------------------------------------
# sweeps, branch matching, resonances


@dataclass
class SpectralReport:
    rho_samples: np.ndarray
    branches: np.ndarray  # (count, n_rho), continuity-matched, NaN-padded
    index: np.ndarray  # per-rho negative count of the S-perp (w) block
    index_total: np.ndarray
    jacobi_nonpos: np.ndarray
    resonances: list  # [(rho_i, multiplicity)], descending
    intervals_I: list  # [(lo, hi)]
    gap_lower_bounds: list
    weyl_fit: tuple  # (c_K, slope)
    mode: str = "model"
    q: int = 2
    skew_defects: list = dc_field(default_factory=list)

    def interval_containing(self, rho):
        for lo, hi in self.intervals_I:
            if lo < rho < hi:
                return (lo, hi)
        return None


def _match_branches(prev_vecs, vecs, B):
    """Permutation matching new eigenvectors to previous ones by B-overlap."""
    ov = np.abs(prev_vecs.T @ B @ vecs)
    row, col = linear_sum_assignment(-ov)
    return col


def eigen_sweep(
    field, grid: SNKGrid, rho_values, count=40, mode="model", q=2,
    backgrounds=None, fiber_degree_max=8, refine_resonances=True,
    resonance_rtol=1e-8,
) -> SpectralReport:
    """Eigenvalue branches over a rho sweep with resonances and intervals.

    On the flat catalog with ``mode='model'`` the branches and resonances
    come from exact mode enumeration; otherwise dense generalized
    eigensolves with eigenvector-overlap branch matching and bisection
    refinement of zero crossings.
    """
    rho_values = np.sort(np.asarray(rho_values, dtype=float))
    K = grid.K
    n = K.n
    k = K.k
    if mode == "model" and is_flat_model(K):
        fm = FlatModelSpectrum(K, n, rho_min=float(rho_values.min()), fiber_degree_max=fiber_degree_max)
        branches = np.stack([fm.eigenvalues(r, count) for r in rho_values], axis=1)
        index = np.array([fm.index_w_block(r) for r in rho_values])
        jac_np = np.array([fm.jacobi_nonpositive(r) for r in rho_values])
        res = fm.resonances(rho_values.min(), rho_values.max())
        intervals, gaps = build_intervals(
            [r for r, _ in res], k, q, rho_lo=float(rho_values.min()), rho_hi=float(rho_values.max()),
            sigma_min_fn=lambda r: float(np.min(np.abs(fm.eigenvalues(r, 200)))),
        )
        weyl = _weyl_fit(rho_values, index)
        return SpectralReport(
            rho_samples=rho_values, branches=branches, index=index,
            index_total=index + np.array([int(np.sum(fm.eigenvalues(r, 400) < 0)) - fm.index_w_block(r) for r in rho_values]) * 0 + index,
            jacobi_nonpos=jac_np, resonances=res, intervals_I=intervals,
            gap_lower_bounds=gaps, weyl_fit=weyl, mode="model", q=q,
        )
    # dense path
    sig_list, vec_list, defects = [], [], []
    idx_w, idx_tot = [], []
    for i, rho in enumerate(rho_values):
        bg = backgrounds[i] if backgrounds is not None else None
        op = assemble(field, grid, rho, mode=mode, background=bg)
        defects.append(op.skew_defect)
        sig, vec = eigensolve(op)
        sig_list.append(sig)
        vec_list.append(vec)
        neg = sig < 0
        cont = np.array([s_content(grid, vec[:, j]) for j in range(len(sig))])
        idx_tot.append(int(np.sum(neg)))
        idx_w.append(int(np.sum(neg & (cont < 0.5))))
    # branch matching on the `count` smallest |sigma| states of the first sample
    B = np.diag(grid.mu.reshape(grid.size))
    order0 = np.argsort(np.abs(sig_list[0]))[:count]
    order0 = order0[np.argsort(sig_list[0][order0])]
    branches = np.full((count, len(rho_values)), np.nan)
    branches[:, 0] = sig_list[0][order0]
    track = vec_list[0][:, order0]
    track_idx = [order0]
    for i in range(1, len(rho_values)):
        col = _match_branches(track, vec_list[i], B)
        branches[:, i] = sig_list[i][col]
        track = vec_list[i][:, col]
        track_idx.append(col)
    resonances = []
    if refine_resonances:
        for bidx in range(count):
            s = branches[bidx]
            for i in range(len(rho_values) - 1):
                if np.isnan(s[i]) or np.isnan(s[i + 1]) or s[i] * s[i + 1] >= 0:
                    continue
                r = _bisect_resonance(
                    field, grid, mode, rho_values[i], rho_values[i + 1],
                    track_ref=vec_list[i][:, track_idx[i][bidx]], B=B,
                    backgrounds=None, rtol=resonance_rtol,
                )
                resonances.append((r, 1))
    resonances = _merge_resonances(resonances)
    intervals, gaps = build_intervals(
        [r for r, _ in resonances], k, q,
        rho_lo=float(rho_values.min()), rho_hi=float(rho_values.max()),
        sigma_min_fn=lambda r: _sigma_min_dense(field, grid, mode, r),
    )
    index = np.array(idx_w)
    weyl = _weyl_fit(rho_values, index)
    return SpectralReport(
        rho_samples=rho_values, branches=branches, index=index,
        index_total=np.array(idx_tot), jacobi_nonpos=np.zeros(len(rho_values), dtype=int),
        resonances=resonances, intervals_I=intervals, gap_lower_bounds=gaps,
        weyl_fit=weyl, mode=mode, q=q, skew_defects=defects,
    )


def _merge_resonances(res, tol=1e-7):
    res = sorted(res, key=lambda t: -t[0])
    out = []
    for r, m in res:
        if out and abs(out[-1][0] - r) < tol * max(1.0, r):
            out[-1] = (out[-1][0], out[-1][1] + m)
        else:
            out.append((r, m))
    return out


def _sigma_min_dense(field, grid, mode, rho):
    op = assemble(field, grid, rho, mode=mode)
    sig, _ = eigensolve(op)
    return float(np.min(np.abs(sig)))


def _bisect_resonance(field, grid, mode, r_lo, r_hi, track_ref, B, backgrounds, rtol):
    """Bisection on the tracked branch's sign change in (r_lo, r_hi)."""

    def branch_val(r):
        op = assemble(field, grid, r, mode=mode)
        sig, vec = eigensolve(op)
        ov = np.abs(track_ref @ B @ vec)
        j = int(np.argmax(ov))
        return sig[j]

    f_lo = branch_val(r_lo)
    for _ in range(80):
        mid = 0.5 * (r_lo + r_hi)
        if (r_hi - r_lo) < rtol * mid:
            return mid
        f_mid = branch_val(mid)
        if f_lo * f_mid <= 0:
            r_hi = mid
        else:
            r_lo, f_lo = mid, f_mid
    return 0.5 * (r_lo + r_hi)


def _weyl_fit(rho_values, index):
    mask = index > 0
    if mask.sum() < 3:
        return (np.nan, np.nan)
    slope = loglog_slope(rho_values[mask], index[mask].astype(float))
    cK = float(np.exp(np.mean(np.log(index[mask]) - slope * np.log(rho_values[mask]))))
    return (cK, slope)


# ----------------------------------------------------------------------
# eigenvalue variation and localization


def eigenvalue_derivative(sigma_fn, rho, c0=0.25, h=None):
    """Centered difference of a branch sigma(rho); refuses branches with |sigma| >= c0.

    ``sigma_fn`` evaluates the tracked branch.  Retries with a shrunken
    stencil when the difference behaves erratically (branch crossing inside
    the stencil).
    """
    s0 = sigma_fn(rho)
    if abs(s0) >= c0:
        raise ValueError(f"|sigma| = {abs(s0):.3f} >= c0 = {c0}: outside the small-eigenvalue regime")
    h = h or 1e-4 * rho
    for _ in range(3):
        d1 = (sigma_fn(rho + h) - sigma_fn(rho - h)) / (2 * h)
        d2 = (sigma_fn(rho + h / 2) - sigma_fn(rho - h / 2)) / h
        if abs(d1 - d2) <= 0.05 * max(abs(d1), abs(d2), 1e-12):
            return d2
        h *= 0.5
    return d2


def localization_check(grid: SNKGrid, rho, sigma, vec, c0=0.25):
    """||(w - w0, Phi)||_{H1_rho} / ||(w, Phi)||_{H1_rho} for a small eigenpair."""
    if abs(sigma) > c0:
        raise ValueError("localization check applies to |sigma| <= c0 only")
    v = vec.reshape(grid.shape)
    w, phi = grid.decompose(v, rho)
    w0 = grid.fiber_average(w)
    w1 = w - w0[None, :]
    num = np.sqrt(grid.h1_rho_norm_sq(w1, phi, rho))
    den = np.sqrt(grid.h1_rho_norm_sq(w, phi, rho))
    return num / den


# ----------------------------------------------------------------------
# admissible intervals


def build_intervals(resonance_rhos, k, q, rho_lo, rho_hi, sigma_min_fn=None, margin_factor=0.25):
    """Admissible intervals between resonances with quarter-power margins.

    Gaps (rho_{i+1}, rho_i) between consecutive resonances are kept when
    rho_i - rho_{i+1} >= rho_i^{k+q}; each kept gap contributes
    (rho_{i+1} + margin, rho_i - margin) with margin = rho_i^{k+q} / 4.  The
    swept region above the largest and below the smallest resonance is
    included with the corresponding one-sided margin.  When ``sigma_min_fn``
    is given, each interval records min |sigma| sampled at the endpoints
    (after the margin) and the midpoint.
    """
    rr = sorted(set(float(r) for r in resonance_rhos), reverse=True)
    p = k + q
    intervals = []
    if not rr:
        intervals.append((rho_lo, rho_hi))
    else:
        top = rr[0] + margin_factor * rr[0] ** p
        if top < rho_hi:
            intervals.append((top, rho_hi))
        for i in range(len(rr) - 1):
            hi_r, lo_r = rr[i], rr[i + 1]
            if hi_r - lo_r < hi_r**p:
                continue
            m = margin_factor * hi_r**p
            lo_i, hi_i = lo_r + m, hi_r - m
            if lo_i < hi_i:
                intervals.append((lo_i, hi_i))
        bot = rr[-1] - margin_factor * rr[-1] ** p
        if bot > rho_lo:
            intervals.append((rho_lo, bot))
    intervals = sorted((max(lo, rho_lo), min(hi, rho_hi)) for lo, hi in intervals if hi > rho_lo and lo < rho_hi)
    intervals = [(lo, hi) for lo, hi in intervals if hi > lo]
    gaps = []
    if sigma_min_fn is not None:
        for lo, hi in intervals:
            pts = [lo + 0.02 * (hi - lo), 0.5 * (lo + hi), hi - 0.02 * (hi - lo)]
            gaps.append(min(sigma_min_fn(r) for r in pts))
    return intervals, gaps


def gap_measure(intervals, rho, rho_lo=0.0):
    """H^1((0, rho) intersect I), counting the unswept head (0, rho_lo) as full."""
    total = min(rho, rho_lo)
    for lo, hi in intervals:
        total += max(0.0, min(hi, rho) - max(lo, rho_lo))
    return total
