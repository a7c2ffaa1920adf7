"""Discretizations of the fiber sphere S^{n-1} of the spherical normal bundle.

Each fiber object provides quadrature exact for products of harmonics up to
the degree budget, node values of the embedding Theta and its chart
derivatives, dense differentiation matrices for scalar fields, the
Laplace-Beltrami matrix, and the projector onto the degree-1 subspace that
identifies normal sections inside L^2(S^{n-1}).

n = 2: uniform Fourier grid on the circle (everything exact).
n = 3: Gauss-Legendre x Fourier grid on S^2; scalar fields are treated as
band-limited to the degree budget, and the differentiation matrices are
synthesized from the real spherical-harmonic basis, so they are exact on
that band.
"""

from __future__ import annotations

import numpy as np
from scipy.special import lpmn
from numpy.polynomial.legendre import leggauss

from .gridops import fourier_diff_matrix

__all__ = ["FiberCircle", "FiberSphere2", "make_fiber"]


class FiberCircle:
    """Uniform grid on S^1 with exact trigonometric calculus."""

    n = 2
    zdim = 1

    def __init__(self, n_nodes=24, degree_budget=8):
        if n_nodes < 2 * degree_budget + 1:
            raise ValueError("fiber grid too coarse for the degree budget")
        self.n_nodes = int(n_nodes)
        self.degree_budget = int(degree_budget)
        t = np.arange(n_nodes) * 2 * np.pi / n_nodes
        self.z = t[:, None]
        self.theta = np.stack([np.cos(t), np.sin(t)], axis=-1)
        self.dtheta = np.stack([-np.sin(t), np.cos(t)], axis=-1)[:, None, :]
        self.d2theta = (-self.theta)[:, None, None, :]
        self.w_sigma = np.full(n_nodes, 2 * np.pi / n_nodes)
        self.jac_sigma = np.ones(n_nodes)
        self.D = [fourier_diff_matrix(n_nodes, 2 * np.pi)]
        self.D2 = [[fourier_diff_matrix(n_nodes, 2 * np.pi, order=2)]]
        self.lap = self.D2[0][0]
        # degree-1 projector (w.r.t. the exact quadrature)
        B = self.theta  # (N, 2): cos t, sin t
        self.proj_S = B @ (B.T * self.w_sigma) / np.pi
        self.avg = np.full((n_nodes, n_nodes), 1.0 / n_nodes)

    @property
    def total_measure(self):
        return 2 * np.pi

    def harmonic_degrees(self):
        """(degree l, eigenvalue of -Laplace, multiplicity) resolved by the grid."""
        out = [(0, 0.0, 1)]
        for l in range(1, self.n_nodes // 2 + 1):
            mult = 1 if (2 * l == self.n_nodes) else 2
            out.append((l, float(l * l), mult))
        return out

    def eigenvalue(self, l):
        return float(l * l)

    def invert_l0(self, rhs, nminus1, exclude_tol=None):
        """Solve -(Delta + (n-1)) u = rhs fiberwise, on the complement of degree 1.

        rhs has the fiber index first.  Returns (solution, norm of the
        degree-1 content that had to be projected away).
        """
        fh = np.fft.fft(rhs, axis=0)
        nf = self.n_nodes
        m = np.fft.fftfreq(nf, d=1.0 / nf)
        eig = m**2 - nminus1  # eigenvalue of L0 on the |m| mode
        defect = np.sqrt(np.sum(np.abs(fh[np.abs(m) == 1]) ** 2)) / nf
        out = np.zeros_like(fh)
        sel = np.abs(m) != 1
        shape = [1] * rhs.ndim
        shape[0] = nf
        eig = eig.reshape(shape)
        sel = sel.reshape(shape)
        out = np.where(sel, fh / np.where(sel, eig, 1.0), 0.0)
        return np.real(np.fft.ifft(out, axis=0)), float(defect)


class FiberSphere2:
    """Gauss-Legendre x Fourier grid on S^2, band-limited scalar calculus."""

    n = 3
    zdim = 2

    def __init__(self, n_theta=None, n_phi=None, degree_budget=8):
        L = int(degree_budget)
        self.degree_budget = L
        n_theta = n_theta or (L + 1)
        n_phi = n_phi or (2 * L + 2)
        if n_theta < L + 1 or n_phi < 2 * L + 1:
            raise ValueError("fiber grid too coarse for the degree budget")
        self.n_theta, self.n_phi = int(n_theta), int(n_phi)
        self.n_nodes = self.n_theta * self.n_phi
        u, wu = leggauss(self.n_theta)  # u = cos(theta), ascending
        th = np.arccos(u)[::-1]
        wu = wu[::-1]
        ph = np.arange(self.n_phi) * 2 * np.pi / self.n_phi
        TH, PH = np.meshgrid(th, ph, indexing="ij")
        self.z = np.stack([TH.reshape(-1), PH.reshape(-1)], axis=-1)
        st, ct = np.sin(self.z[:, 0]), np.cos(self.z[:, 0])
        sp, cp = np.sin(self.z[:, 1]), np.cos(self.z[:, 1])
        self.theta = np.stack([st * cp, st * sp, ct], axis=-1)
        d_th = np.stack([ct * cp, ct * sp, -st], axis=-1)
        d_ph = np.stack([-st * sp, st * cp, np.zeros_like(st)], axis=-1)
        self.dtheta = np.stack([d_th, d_ph], axis=1)
        d2_thth = -self.theta
        d2_thph = np.stack([-ct * sp, ct * cp, np.zeros_like(st)], axis=-1)
        d2_phph = np.stack([-st * cp, -st * sp, np.zeros_like(st)], axis=-1)
        self.d2theta = np.stack(
            [np.stack([d2_thth, d2_thph], axis=1), np.stack([d2_thph, d2_phph], axis=1)], axis=1
        )
        self.w_sigma = (wu[:, None] * (2 * np.pi / self.n_phi) * np.ones(self.n_phi)).reshape(-1)
        self.jac_sigma = st.copy()
        self._build_harmonic_matrices()

    @property
    def total_measure(self):
        return 4 * np.pi

    def _build_harmonic_matrices(self):
        L = self.degree_budget
        th = self.z[:, 0]
        ph = self.z[:, 1]
        uth = np.unique(th)
        nb = (L + 1) ** 2
        N = self.n_nodes
        Y = np.zeros((N, nb))
        Yth = np.zeros((N, nb))
        Ythth = np.zeros((N, nb))
        Yph = np.zeros((N, nb))
        Yphph = np.zeros((N, nb))
        Ythph = np.zeros((N, nb))
        degs = np.zeros(nb, dtype=int)
        # per unique colatitude: associated Legendre values and derivatives
        plm = {}
        for t in uth:
            x = np.cos(t)
            P, dP = lpmn(L, L, x)  # P[m, l], dP/dx
            plm[t] = (P, dP)
        col = 0
        for l in range(L + 1):
            for m in range(-l, l + 1):
                am = abs(m)
                from math import factorial

                norm = np.sqrt((2 * l + 1) / (4 * np.pi) * factorial(l - am) / factorial(l + am))
                if m != 0:
                    norm *= np.sqrt(2.0)
                for t in uth:
                    P, dP = plm[t]
                    x = np.cos(t)
                    st = np.sin(t)
                    pv = P[am, l]
                    dv = dP[am, l]
                    # d/dtheta = -sin(theta) d/dx; second derivative via the
                    # associated Legendre ODE:
                    # (1-x^2) P'' - 2x P' + (l(l+1) - m^2/(1-x^2)) P = 0
                    ddx = (2 * x * dv - (l * (l + 1) - am * am / (1 - x * x)) * pv) / (1 - x * x)
                    p_th = -st * dv
                    p_thth = st * st * ddx - x * dv
                    mask = th == t
                    if m > 0:
                        f, fp, fpp = np.cos(m * ph[mask]), -m * np.sin(m * ph[mask]), -m * m * np.cos(m * ph[mask])
                    elif m < 0:
                        f, fp, fpp = np.sin(am * ph[mask]), am * np.cos(am * ph[mask]), -am * am * np.sin(am * ph[mask])
                    else:
                        f, fp, fpp = np.ones(mask.sum()), np.zeros(mask.sum()), np.zeros(mask.sum())
                    Y[mask, col] = norm * pv * f
                    Yth[mask, col] = norm * p_th * f
                    Ythth[mask, col] = norm * p_thth * f
                    Yph[mask, col] = norm * pv * fp
                    Yphph[mask, col] = norm * pv * fpp
                    Ythph[mask, col] = norm * p_th * fp
                degs[col] = l
                col += 1
        analysis = Y.T * self.w_sigma  # (nb, N): exact on the band limit
        self._Y = Y
        self._analysis = analysis
        self._degs = degs
        self.band_projector = Y @ analysis
        self.D = [Yth @ analysis, Yph @ analysis]
        self.D2 = [
            [Ythth @ analysis, Ythph @ analysis],
            [Ythph @ analysis, Yphph @ analysis],
        ]
        self.lap = Y @ (-(degs * (degs + 1))[:, None] * analysis)
        sel1 = degs == 1
        self.proj_S = Y[:, sel1] @ analysis[sel1]
        self.avg = Y[:, degs == 0] @ analysis[degs == 0]

    def harmonic_degrees(self):
        return [(l, float(l * (l + 1)), 2 * l + 1) for l in range(self.degree_budget + 1)]

    def eigenvalue(self, l):
        return float(l * (l + 1))

    def invert_l0(self, rhs, nminus1, exclude_tol=None):
        """Solve -(Delta + (n-1)) u = rhs on the degree-1 complement (band-limited)."""
        coeff = np.tensordot(self._analysis, rhs, axes=([1], [0]))  # (nb, ...)
        eig = self._degs * (self._degs + 1) - nminus1
        sel = self._degs != 1
        defect = float(np.sqrt(np.sum(coeff[~sel] ** 2)))
        shape = [1] * rhs.ndim
        shape[0] = len(eig)
        coeff = np.where(sel.reshape(shape), coeff / np.where(sel, eig, 1.0).reshape(shape), 0.0)
        return np.tensordot(self._Y, coeff, axes=([1], [0])), defect


def make_fiber(n, fiber_nodes=None, degree_budget=8):
    """Fiber discretization of S^{n-1} for codimension n."""
    if n == 2:
        return FiberCircle(n_nodes=fiber_nodes or 24, degree_budget=degree_budget)
    if n == 3:
        if fiber_nodes is None:
            return FiberSphere2(degree_budget=degree_budget)
        return FiberSphere2(n_theta=fiber_nodes[0], n_phi=fiber_nodes[1], degree_budget=degree_budget)
    raise NotImplementedError("fibers are provided for n = 2 and n = 3")
