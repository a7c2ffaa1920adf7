"""Chart-based ambient Riemannian manifolds.

A manifold is presented as a single working chart (plus optional covering
charts with transition maps, used internally by the integrators) together
with a smooth metric and, when available, closed-form derivative data.

Index conventions used throughout the package:

* ``christoffel(x)[..., a, b, c]`` is ``Gamma^a_{bc}``.
* ``dmetric(x)[..., c, a, b]`` is ``d g_{ab} / d x^c``.
* ``dchristoffel(x)[..., e, a, b, c]`` is ``d Gamma^a_{bc} / d x^e``.
* Curvature: ``R(e_c, e_d) e_b = riemann[..., a, b, c, d] e_a`` for the
  curvature operator ``R(X, Y) = [nabla_X, nabla_Y] - nabla_[X,Y]``.  With
  this sign the sectional curvature ``g(R(X,Y)Y, X)`` of the unit round
  sphere equals +1, and ``Ric(X, Y) = -g(R(X, e_g) Y, e_g)`` is positive
  on spheres.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

__all__ = [
    "AmbientManifold",
    "CurvatureData",
    "GeodesicState",
    "DegenerateMetricError",
    "ChartDomainError",
    "StepSizeError",
]


class DegenerateMetricError(ValueError):
    """Metric failed to be symmetric positive definite at a queried point."""


class ChartDomainError(ValueError):
    """A geodesic or query point left the covered chart domain."""


class StepSizeError(ValueError):
    """A finite-difference step underflowed the chart scale."""


@dataclass
class GeodesicState:
    """Carrier for a point of an integrated geodesic."""

    position: np.ndarray
    velocity: np.ndarray
    arc_param: float


@dataclass
class CurvatureData:
    """Riemann and Ricci tensors at a chart point.

    ``riemann[a, b, c, d] = R^a_{bcd}``; ``riemann_lowered`` has the first
    index lowered with the metric; ``ricci`` follows the convention
    ``Ric(X, Y) = -g(R(X, e_g) Y, e_g)`` (positive on round spheres).
    """

    point: np.ndarray
    riemann: np.ndarray
    riemann_lowered: np.ndarray
    ricci: np.ndarray

    def operator(self, X, Y, Z):
        """R(X, Y) Z as a chart vector."""
        return np.einsum("...abcd,...b,...c,...d->...a", self.riemann, Z, X, Y)

    def sectional(self, metric, X, Y):
        """Sectional curvature of the plane spanned by X, Y (need not be orthonormal)."""
        gXX = np.einsum("...ab,...a,...b->...", metric, X, X)
        gYY = np.einsum("...ab,...a,...b->...", metric, Y, Y)
        gXY = np.einsum("...ab,...a,...b->...", metric, X, Y)
        RXYY = self.operator(X, Y, Y)
        num = np.einsum("...ab,...a,...b->...", metric, RXYY, X)
        return num / (gXX * gYY - gXY**2)


def _fd_weights_4(step):
    # 4th-order central difference: f' ~ (-f(2h) + 8 f(h) - 8 f(-h) + f(-2h)) / 12h
    return np.array([-2.0, -1.0, 1.0, 2.0]) * step, np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * step)


class AmbientManifold:
    """The ambient (M^{m+1}, g) of the construction, presented in a chart.

    Parameters
    ----------
    dim : int
        Chart dimension m+1.
    chart_metric : callable
        Maps an (..., dim) array of chart points to (..., dim, dim)
        symmetric positive definite matrices.
    dmetric, christoffel_fn, dchristoffel_fn, curvature_fn : callable, optional
        Closed-form derivative data.  Missing pieces fall back to 4th-order
        central differences with step ``fd_step * chart_scale``.
    periods : array, optional
        Periods of a global periodic chart (flat torus style).
    is_flat : bool
        Marks identically-Euclidean charts; enables exact geodesics.
    chart_radius : float
        Radius of validity of the working chart; integrators raise
        ``ChartDomainError`` beyond it unless a transition map is given.
    transition : callable, optional
        Maps (x, list-of-vectors) to the overlapping chart, used by the
        integrators when a trajectory leaves ``switch_radius``.
    """

    def __init__(
        self,
        dim: int,
        chart_metric: Callable,
        *,
        dmetric: Optional[Callable] = None,
        christoffel_fn: Optional[Callable] = None,
        dchristoffel_fn: Optional[Callable] = None,
        curvature_fn: Optional[Callable] = None,
        fd_step: float = 1e-3,
        chart_scale: float = 1.0,
        periods: Optional[np.ndarray] = None,
        is_flat: bool = False,
        catalog_id: Optional[str] = None,
        chart_radius: float = np.inf,
        switch_radius: float = np.inf,
        transition: Optional[Callable] = None,
        embedding: Optional[Callable] = None,
        distance_fn: Optional[Callable] = None,
        steps_per_unit: int = 256,
        accel_fn: Optional[Callable] = None,
        daccel_fn: Optional[Callable] = None,
    ):
        self.dim = int(dim)
        self._metric = chart_metric
        self._dmetric = dmetric
        self._christoffel = christoffel_fn
        self._dchristoffel = dchristoffel_fn
        self._curvature = curvature_fn
        self.fd_step = float(fd_step)
        self.chart_scale = float(chart_scale)
        self.periods = None if periods is None else np.asarray(periods, dtype=float)
        self.is_flat = bool(is_flat)
        self.catalog_id = catalog_id
        self.chart_radius = float(chart_radius)
        self.switch_radius = float(switch_radius)
        self.transition = transition
        self.embedding = embedding
        self._distance = distance_fn
        self.steps_per_unit = int(steps_per_unit)
        self._accel_fn = accel_fn
        self._daccel_fn = daccel_fn

    # ------------------------------------------------------------------
    # metric and derivatives

    def metric(self, x):
        x = np.asarray(x, dtype=float)
        g = self._metric(x)
        return np.asarray(g, dtype=float)

    def metric_inverse(self, x):
        return np.linalg.inv(self.metric(x))

    def check_spd(self, x):
        """Raise DegenerateMetricError unless g(x) is SPD (smallest eigenvalue > 0)."""
        g = self.metric(x)
        if not np.allclose(g, np.swapaxes(g, -1, -2), atol=1e-12 * (1 + np.abs(g).max())):
            raise DegenerateMetricError("metric is not symmetric")
        w = np.linalg.eigvalsh(g)
        if np.min(w) <= 0:
            raise DegenerateMetricError(f"metric not positive definite (min eig {np.min(w):.3e})")
        return float(np.min(w))

    def dmetric(self, x):
        """(..., c, a, b) array of d g_{ab} / d x^c."""
        x = np.asarray(x, dtype=float)
        if self._dmetric is not None:
            return self._dmetric(x)
        h = self.fd_step * self.chart_scale
        if h <= 0 or h < 1e-300:
            raise StepSizeError("finite-difference step underflow")
        offs, wts = _fd_weights_4(h)
        out = np.zeros(x.shape[:-1] + (self.dim, self.dim, self.dim))
        for c in range(self.dim):
            acc = 0.0
            for o, wt in zip(offs, wts):
                xs = x.copy()
                xs[..., c] += o
                acc = acc + wt * self.metric(xs)
            out[..., c, :, :] = acc
        return out

    def christoffel(self, x):
        """Gamma^a_{bc}(x), symmetric in (b, c)."""
        x = np.asarray(x, dtype=float)
        if self._christoffel is not None:
            return self._christoffel(x)
        dg = self.dmetric(x)
        ginv = self.metric_inverse(x)
        # Gamma^a_{bc} = 1/2 g^{ad} (d_b g_{dc} + d_c g_{db} - d_d g_{bc})
        term = np.einsum("...bdc->...dbc", dg) + np.einsum("...cdb->...dbc", dg) - dg
        return 0.5 * np.einsum("...ad,...dbc->...abc", ginv, term)

    def dchristoffel(self, x):
        """(..., e, a, b, c) array of d Gamma^a_{bc} / d x^e."""
        x = np.asarray(x, dtype=float)
        if self._dchristoffel is not None:
            return self._dchristoffel(x)
        h = self.fd_step * self.chart_scale
        offs, wts = _fd_weights_4(h)
        out = np.zeros(x.shape[:-1] + (self.dim,) * 4)
        for e in range(self.dim):
            acc = 0.0
            for o, wt in zip(offs, wts):
                xs = x.copy()
                xs[..., e] += o
                acc = acc + wt * self.christoffel(xs)
            out[..., e, :, :, :] = acc
        return out

    def curvature(self, x) -> CurvatureData:
        """Riemann and Ricci tensors assembled from Gamma and its derivative."""
        x = np.asarray(x, dtype=float)
        if self._curvature is not None:
            R = self._curvature(x)
        else:
            G = self.christoffel(x)
            dG = self.dchristoffel(x)
            # R^a_{bcd} = d_c Gamma^a_{db} - d_d Gamma^a_{cb}
            #             + Gamma^a_{ce} Gamma^e_{db} - Gamma^a_{de} Gamma^e_{cb}
            R = (
                np.einsum("...cadb->...abcd", dG)
                - np.einsum("...dacb->...abcd", dG)
                + np.einsum("...ace,...edb->...abcd", G, G)
                - np.einsum("...ade,...ecb->...abcd", G, G)
            )
        g = self.metric(x)
        R_low = np.einsum("...ae,...ebcd->...abcd", g, R)
        ginv = self.metric_inverse(x)
        # Ric(X, Y) = -g(R(X, e_g) Y, e_g); in indices -R_low[g, b, a, d] g^{gd}
        ric = -np.einsum("...gbad,...gd->...ab", R_low, ginv)
        return CurvatureData(point=x, riemann=R, riemann_lowered=R_low, ricci=ric)

    def sectional(self, x, X, Y):
        return self.curvature(x).sectional(self.metric(x), X, Y)

    # ------------------------------------------------------------------
    # inner products

    def inner(self, x, u, v):
        return np.einsum("...ab,...a,...b->...", self.metric(x), u, v)

    def norm(self, x, v):
        return np.sqrt(np.maximum(self.inner(x, v, v), 0.0))

    # ------------------------------------------------------------------
    # geodesics

    def _accel(self, x, v):
        if self._accel_fn is not None:
            return self._accel_fn(x, v)
        G = self.christoffel(x)
        return -np.einsum("...abc,...b,...c->...a", G, v, v)

    def _daccel(self, x, v, JX, JV):
        """Variational derivative of the geodesic acceleration along seed columns."""
        if self._daccel_fn is not None:
            return self._daccel_fn(x, v, JX, JV)
        G = self.christoffel(x)
        dG = self.dchristoffel(x)
        ja = -np.einsum("...eabc,...se,...b,...c->...sa", dG, JX, v, v)
        return ja - 2.0 * np.einsum("...abc,...b,...sc->...sa", G, v, JV)

    def _apply_transitions(self, x, v, extra=None):
        """Map points with |x| > switch_radius to the covering chart in place."""
        if self.transition is None:
            return None
        r = np.linalg.norm(x, axis=-1)
        mask = r > self.switch_radius
        if not np.any(mask):
            return None
        vecs = [v] if extra is None else [v] + extra
        xn, vecs_n = self.transition(x[mask], [w[mask] for w in vecs])
        x[mask] = xn
        v[mask] = vecs_n[0]
        if extra is not None:
            for w, wn in zip(extra, vecs_n[1:]):
                w[mask] = wn
        return mask

    def n_steps(self, speed):
        return max(16, int(np.ceil(float(np.max(speed)) * self.steps_per_unit)))

    def exp_map(self, p, v, n_steps=None, return_state=False, track_energy=False):
        """Riemannian exponential: follow the geodesic with initial data (p, v) for unit time.

        Batched over leading axes.  Flat charts short-circuit to p + v.
        """
        p = np.asarray(p, dtype=float).copy()
        v = np.asarray(v, dtype=float).copy()
        if self.is_flat:
            q = p + v
            if self.periods is not None:
                q = np.mod(q, self.periods)
            if return_state:
                return q, GeodesicState(q, v, float(np.mean(self.norm(q, v))))
            return q
        speed = self.norm(p, v)
        if np.max(speed) == 0.0:
            return (p, GeodesicState(p, v, 0.0)) if return_state else p
        n = n_steps or self.n_steps(speed)
        h = 1.0 / n
        x, u = p, v
        e0 = self.inner(x, u, u)
        parity = np.zeros(x.shape[:-1], dtype=bool)
        for _ in range(n):
            k1x, k1v = u, self._accel(x, u)
            k2x, k2v = u + 0.5 * h * k1v, self._accel(x + 0.5 * h * k1x, u + 0.5 * h * k1v)
            k3x, k3v = u + 0.5 * h * k2v, self._accel(x + 0.5 * h * k2x, u + 0.5 * h * k2v)
            k4x, k4v = u + h * k3v, self._accel(x + h * k3x, u + h * k3v)
            x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
            u = u + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
            mask = self._apply_transitions(x, u)
            if mask is not None:
                parity ^= mask
        if track_energy:
            drift = np.max(np.abs(self.inner(x, u, u) - e0) / np.maximum(e0, 1e-300))
        # try to report every point in the working chart
        if np.any(parity):
            if self.transition is None:
                raise ChartDomainError("geodesic left the chart domain")
            xb, vecs = self.transition(x[parity], [u[parity]])
            rb = np.linalg.norm(xb, axis=-1)
            ok = rb <= self.chart_radius
            if not np.all(ok):
                raise ChartDomainError("endpoint not representable in the working chart")
            x[parity], u[parity] = xb, vecs[0]
        if np.any(np.linalg.norm(x, axis=-1) > self.chart_radius):
            raise ChartDomainError("geodesic left the chart domain")
        if self.periods is not None:
            x = np.mod(x, self.periods)
        if track_energy:
            return x, u, drift
        if return_state:
            return x, GeodesicState(x, u, float(np.mean(speed)))
        return x

    def exp_with_jacobian(self, p, v, jx0, jv0, n_steps=None):
        """Exponential map together with derivatives along seed variations.

        ``jx0``, ``jv0``: (..., s, dim) arrays of initial variations of the
        start point and start velocity.  Returns (endpoint, endpoint jacobian
        columns (..., s, dim)), computed by integrating the variational
        (Jacobi) equations alongside the geodesic; avoids finite-difference
        cancellation entirely.
        """
        p = np.asarray(p, dtype=float).copy()
        v = np.asarray(v, dtype=float).copy()
        jx = np.asarray(jx0, dtype=float).copy()
        jv = np.asarray(jv0, dtype=float).copy()
        if self.is_flat:
            return p + v, jx + jv
        speed = self.norm(p, v)
        n = n_steps or self.n_steps(speed)
        h = 1.0 / n

        def rhs(x, u, JX, JV):
            # d/dt JV^a = -dGamma^a_{bc}/dx^e JX^e u^b u^c - 2 Gamma^a_{bc} u^b JV^c
            return u, self._accel(x, u), JV, self._daccel(x, u, JX, JV)

        x, u = p, v
        for _ in range(n):
            k1 = rhs(x, u, jx, jv)
            k2 = rhs(x + 0.5 * h * k1[0], u + 0.5 * h * k1[1], jx + 0.5 * h * k1[2], jv + 0.5 * h * k1[3])
            k3 = rhs(x + 0.5 * h * k2[0], u + 0.5 * h * k2[1], jx + 0.5 * h * k2[2], jv + 0.5 * h * k2[3])
            k4 = rhs(x + h * k3[0], u + h * k3[1], jx + h * k3[2], jv + h * k3[3])
            x = x + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            u = u + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            jx = jx + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
            jv = jv + (h / 6.0) * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
            mask = self._apply_transitions(x, u, extra=None)
            if mask is not None:
                # transition must also map the variation columns
                raise ChartDomainError(
                    "variational integration crossed a chart boundary; "
                    "shrink the normal radius or recenter the chart"
                )
        if np.any(np.linalg.norm(x, axis=-1) > self.chart_radius):
            raise ChartDomainError("geodesic left the chart domain")
        return x, jx

    def geodesic_flow(self, p, v, t_final=1.0, n_steps=None, record=False):
        """Integrate the geodesic flow for time t_final; optionally record the path."""
        p = np.asarray(p, dtype=float).copy()
        v = np.asarray(v, dtype=float).copy()
        speed = self.norm(p, v)
        n = n_steps or self.n_steps(speed * t_final)
        h = t_final / n
        xs = [p.copy()] if record else None
        vs = [v.copy()] if record else None
        x, u = p, v
        for _ in range(n):
            k1x, k1v = u, self._accel(x, u)
            k2x, k2v = u + 0.5 * h * k1v, self._accel(x + 0.5 * h * k1x, u + 0.5 * h * k1v)
            k3x, k3v = u + 0.5 * h * k2v, self._accel(x + 0.5 * h * k2x, u + 0.5 * h * k2v)
            k4x, k4v = u + h * k3v, self._accel(x + h * k3x, u + h * k3v)
            x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
            u = u + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
            if record:
                xs.append(x.copy())
                vs.append(u.copy())
        if record:
            return np.array(xs), np.array(vs)
        return x, u

    # ------------------------------------------------------------------
    # parallel transport

    def parallel_transport(self, curve, v0, n_steps=None, closed=False):
        """Transport v0 along a sampled path (N, dim) by integrating the transport ODE.

        The path is interpolated with a cubic spline in its sample parameter
        (periodic when ``closed``); energy g(v, v) is conserved to integrator
        accuracy and the map is linear in v0.
        """
        curve = np.asarray(curve, dtype=float)
        v = np.asarray(v0, dtype=float).copy()
        npts = curve.shape[0]
        t = np.linspace(0.0, 1.0, npts)
        if closed:
            pts = np.vstack([curve, curve[:1]])
            t = np.linspace(0.0, 1.0, npts + 1)
            spl = CubicSpline(t, pts, axis=0, bc_type="periodic")
        else:
            spl = CubicSpline(t, curve, axis=0)
        dspl = spl.derivative()
        n = n_steps or max(64, 4 * npts)
        h = 1.0 / n

        def dv(tt, vv):
            x = spl(tt)
            xd = dspl(tt)
            G = self.christoffel(x)
            return -np.einsum("abc,b,...c->...a", G, xd, vv)

        tt = 0.0
        for _ in range(n):
            k1 = dv(tt, v)
            k2 = dv(tt + 0.5 * h, v + 0.5 * h * k1)
            k3 = dv(tt + 0.5 * h, v + 0.5 * h * k2)
            k4 = dv(tt + h, v + h * k3)
            v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            tt += h
        return v

    # ------------------------------------------------------------------
    # distances

    def distance(self, p, q):
        """Geodesic distance for catalog geometries with a closed form."""
        if self._distance is not None:
            return self._distance(np.asarray(p, float), np.asarray(q, float))
        if self.is_flat:
            d = np.asarray(q, float) - np.asarray(p, float)
            if self.periods is not None:
                d = np.remainder(d + self.periods / 2, self.periods) - self.periods / 2
            return np.linalg.norm(d, axis=-1)
        raise NotImplementedError("no closed-form distance for this geometry")
