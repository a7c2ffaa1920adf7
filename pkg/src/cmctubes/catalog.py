"""Geometry catalog: built-in metrics addressed by string ids.

Supported ids::

    euclidean(d)
    flat_torus(L1, ..., Ld)
    round_sphere(d, r)
    ellipsoid(a, b, c)
    product(id1, id2)
    conformal(id, eps, bump)

``conformal`` multiplies the base metric by exp(2 * eps * chi) where chi is a
named built-in bump or a bump table passed programmatically.  Every
conformally-flat geometry (euclidean, torus, sphere and their conformal
perturbations) carries closed-form Christoffel symbols, their first
derivatives and the curvature tensor, assembled algebraically from the
gradient and Hessian of the log conformal factor.

User metrics come from a config dict with a polynomial/trigonometric term
table per component; see :func:`manifold_from_config`.
"""

from __future__ import annotations

import re

import numpy as np

from .geometry import AmbientManifold, ChartDomainError

__all__ = [
    "make_geometry",
    "parse_geometry_id",
    "manifold_from_config",
    "BUILTIN_BUMPS",
    "TrigBump",
]


# ----------------------------------------------------------------------
# conformally flat machinery: g = exp(2 phi) * delta


class PhiField:
    """Log conformal factor with gradient and Hessian (batched)."""

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError


class ZeroPhi(PhiField):
    def value(self, x):
        return np.zeros(x.shape[:-1])

    def grad(self, x):
        return np.zeros(x.shape)

    def hess(self, x):
        d = x.shape[-1]
        return np.zeros(x.shape[:-1] + (d, d))


class SpherePhi(PhiField):
    """Stereographic log-factor of the round d-sphere of radius r.

    phi = log(2 r^2) - log(r^2 + |x|^2), so g = (2 r^2 / (r^2 + |x|^2))^2 delta.
    """

    def __init__(self, radius):
        self.r2 = float(radius) ** 2

    def value(self, x):
        s = self.r2 + np.sum(x**2, axis=-1)
        return np.log(2.0 * self.r2) - np.log(s)

    def grad(self, x):
        s = self.r2 + np.sum(x**2, axis=-1)
        return -2.0 * x / s[..., None]

    def hess(self, x):
        d = x.shape[-1]
        s = self.r2 + np.sum(x**2, axis=-1)
        eye = np.eye(d)
        return (-2.0 * eye / s[..., None, None]) + 4.0 * x[..., :, None] * x[..., None, :] / (s**2)[..., None, None]


class TrigBump(PhiField):
    """eps * sum_t c_t * trig(k_t . x + shift_t) with integer frequency rows k_t.

    ``terms``: list of (coef, freqs, kind, shift) with kind in {"cos", "sin"};
    frequencies are in radians per unit chart length (callers divide by the
    torus periods as needed).
    """

    def __init__(self, eps, terms):
        self.eps = float(eps)
        self.terms = [(float(c), np.asarray(k, dtype=float), kind, float(sh)) for c, k, kind, sh in terms]

    def value(self, x):
        out = np.zeros(x.shape[:-1])
        for c, k, kind, sh in self.terms:
            arg = np.tensordot(x, k, axes=([-1], [0])) + sh
            out += c * (np.cos(arg) if kind == "cos" else np.sin(arg))
        return self.eps * out

    def grad(self, x):
        out = np.zeros(x.shape)
        for c, k, kind, sh in self.terms:
            arg = np.tensordot(x, k, axes=([-1], [0])) + sh
            d = -np.sin(arg) if kind == "cos" else np.cos(arg)
            out += c * d[..., None] * k
        return self.eps * out

    def hess(self, x):
        d_ = x.shape[-1]
        out = np.zeros(x.shape[:-1] + (d_, d_))
        for c, k, kind, sh in self.terms:
            arg = np.tensordot(x, k, axes=([-1], [0])) + sh
            dd = -np.cos(arg) if kind == "cos" else -np.sin(arg)
            out += c * dd[..., None, None] * (k[:, None] * k[None, :])
        return self.eps * out


class SumPhi(PhiField):
    def __init__(self, *fields):
        self.fields = fields

    def value(self, x):
        return sum(f.value(x) for f in self.fields)

    def grad(self, x):
        return sum(f.grad(x) for f in self.fields)

    def hess(self, x):
        return sum(f.hess(x) for f in self.fields)


def _conformal_callables(phi: PhiField, dim: int):
    eye = np.eye(dim)

    def metric(x):
        lam = np.exp(2.0 * phi.value(x))
        return lam[..., None, None] * eye

    def christoffel(x):
        dp = phi.grad(x)
        # Gamma^k_{ij} = delta_ik phi_j + delta_jk phi_i - delta_ij phi_k
        return (
            np.einsum("ki,...j->...kij", eye, dp)
            + np.einsum("kj,...i->...kij", eye, dp)
            - np.einsum("ij,...k->...kij", eye, dp)
        )

    def dchristoffel(x):
        H = phi.hess(x)
        # d_l Gamma^k_{ij} = delta_ik phi_{jl} + delta_jk phi_{il} - delta_ij phi_{kl}
        return (
            np.einsum("ki,...jl->...lkij", eye, H)
            + np.einsum("kj,...il->...lkij", eye, H)
            - np.einsum("ij,...kl->...lkij", eye, H)
        )

    def dmetric(x):
        lam = np.exp(2.0 * phi.value(x))
        dp = phi.grad(x)
        return 2.0 * lam[..., None, None, None] * np.einsum("...c,ab->...cab", dp, eye)

    def curvature(x):
        G = christoffel(x)
        dG = dchristoffel(x)
        return (
            np.einsum("...cadb->...abcd", dG)
            - np.einsum("...dacb->...abcd", dG)
            + np.einsum("...ace,...edb->...abcd", G, G)
            - np.einsum("...ade,...ecb->...abcd", G, G)
        )

    def accel(x, v):
        # -Gamma(v, v) = |v|^2 grad(phi) - 2 (grad(phi) . v) v
        dp = phi.grad(x)
        pv = np.einsum("...a,...a->...", dp, v)
        v2 = np.einsum("...a,...a->...", v, v)
        return v2[..., None] * dp - 2.0 * pv[..., None] * v

    def daccel(x, v, JX, JV):
        dp = phi.grad(x)
        H = phi.hess(x)
        pv = np.einsum("...a,...a->...", dp, v)
        v2 = np.einsum("...a,...a->...", v, v)
        HJ = np.einsum("...ab,...sb->...sa", H, JX)
        vHJ = np.einsum("...a,...sa->...s", v, HJ)
        pJv = np.einsum("...a,...sa->...s", dp, JV)
        vJv = np.einsum("...a,...sa->...s", v, JV)
        out = v2[..., None, None] * HJ - 2.0 * vHJ[..., None] * v[..., None, :]
        out += 2.0 * vJv[..., None] * dp[..., None, :]
        out -= 2.0 * (pJv[..., None] * v[..., None, :] + pv[..., None, None] * JV)
        return out

    return metric, dmetric, christoffel, dchristoffel, curvature, accel, daccel


# ----------------------------------------------------------------------
# builders


def _euclidean(d):
    phi = ZeroPhi()
    metric, dmetric, G, dG, R, acc, dacc = _conformal_callables(phi, d)
    return AmbientManifold(
        d, metric, dmetric=dmetric, christoffel_fn=G, dchristoffel_fn=dG,
        curvature_fn=R, is_flat=True, catalog_id=f"euclidean({d})",
        accel_fn=acc, daccel_fn=dacc,
    )


def _flat_torus(periods):
    periods = np.asarray(periods, dtype=float)
    d = len(periods)
    phi = ZeroPhi()
    metric, dmetric, G, dG, R, acc, dacc = _conformal_callables(phi, d)
    return AmbientManifold(
        d, metric, dmetric=dmetric, christoffel_fn=G, dchristoffel_fn=dG,
        curvature_fn=R, is_flat=True, periods=periods,
        catalog_id="flat_torus(" + ",".join(f"{L:g}" for L in periods) + ")",
        chart_scale=float(np.min(periods)) / (2 * np.pi),
        accel_fn=acc, daccel_fn=dacc,
    )


def _sphere_embedding(r):
    def emb(x):
        s = r**2 + np.sum(x**2, axis=-1)
        X = np.concatenate([2 * r**2 * x, (r * (np.sum(x**2, axis=-1) - r**2))[..., None]], axis=-1)
        return X / s[..., None]

    return emb


def _round_sphere(d, r):
    phi = SpherePhi(r)
    metric, dmetric, G, dG, R, acc, dacc = _conformal_callables(phi, d)
    emb = _sphere_embedding(r)

    def dist(p, q):
        X, Y = emb(p), emb(q)
        c = np.clip(np.sum(X * Y, axis=-1) / r**2, -1.0, 1.0)
        return r * np.arccos(c)

    def transition(x, vecs):
        # stereographic projections from antipodal poles: x' = r^2 x / |x|^2
        s = np.sum(x**2, axis=-1)
        xn = r**2 * x / s[..., None]
        out = []
        for w in vecs:
            xw = np.sum(x * w, axis=-1)
            out.append(r**2 * (w / s[..., None] - 2.0 * xw[..., None] * x / (s**2)[..., None]))
        return xn, out

    return AmbientManifold(
        d, metric, dmetric=dmetric, christoffel_fn=G, dchristoffel_fn=dG,
        curvature_fn=R, catalog_id=f"round_sphere({d},{r:g})", chart_scale=float(r),
        chart_radius=25.0 * r, switch_radius=4.0 * r, transition=transition,
        embedding=emb, distance_fn=dist, accel_fn=acc, daccel_fn=dacc,
    )


def _conformal(base: AmbientManifold, eps, bump: PhiField):
    if base.catalog_id and base.catalog_id.startswith("round_sphere"):
        m = re.match(r"round_sphere\((\d+),([^)]+)\)", base.catalog_id)
        base_phi = SpherePhi(float(m.group(2)))
    elif base.is_flat:
        base_phi = ZeroPhi()
    else:
        raise ValueError("conformal perturbations support flat and round-sphere bases")
    if isinstance(bump, TrigBump):
        bump = TrigBump(eps * bump.eps, bump.terms) if eps != 1.0 else bump
    phi = SumPhi(base_phi, bump)
    d = base.dim
    metric, dmetric, G, dG, R, acc, dacc = _conformal_callables(phi, d)
    return AmbientManifold(
        d, metric, dmetric=dmetric, christoffel_fn=G, dchristoffel_fn=dG,
        curvature_fn=R, periods=base.periods, catalog_id=f"conformal[{base.catalog_id}]",
        chart_scale=base.chart_scale, chart_radius=base.chart_radius,
        switch_radius=base.switch_radius, transition=base.transition,
        accel_fn=acc, daccel_fn=dacc,
    )


def _ellipsoid(a, b, c):
    """Surface x^2/a^2 + y^2/b^2 + z^2/c^2 = 1 with the induced metric.

    Chart: stereographic coordinates v of the unit sphere, mapped to the
    surface by (x, y, z) = (a u1, b u2, c u3).  Metric derivatives use the
    finite-difference mode; the curvature oracle is the closed-form Gauss
    curvature 1 / (a b c)^2 / h^4.
    """
    semi = np.array([a, b, c], dtype=float)

    def unit_sphere_point(v):
        s = 1.0 + np.sum(v**2, axis=-1)
        return np.concatenate([2 * v, (np.sum(v**2, axis=-1) - 1.0)[..., None]], axis=-1) / s[..., None]

    def emb(v):
        return unit_sphere_point(v) * semi

    def metric(v):
        v = np.asarray(v, dtype=float)
        n = v.shape[-1]
        eye = np.eye(n)
        s = (1.0 + np.sum(v**2, axis=-1))[..., None, None]
        # d/dv_j of 2 v_i / s = 2 delta_ij / s - 4 v_i v_j / s^2
        J1 = 2 * eye / s - 4 * v[..., :, None] * v[..., None, :] / s**2
        # d/dv_j of (|v|^2 - 1)/s = 4 v_j / s^2
        J2 = (4 * v / np.squeeze(s**2, axis=-1))[..., None, :]
        J = np.concatenate([J1, J2], axis=-2) * semi[..., :, None]  # (..., 3, n)
        return np.einsum("...ki,...kj->...ij", J, J)

    def transition(x, vecs):
        s = np.sum(x**2, axis=-1)
        xn = x / s[..., None]
        out = []
        for w in vecs:
            xw = np.sum(x * w, axis=-1)
            out.append(w / s[..., None] - 2.0 * xw[..., None] * x / (s**2)[..., None])
        return xn, out

    M = AmbientManifold(
        2, metric, catalog_id=f"ellipsoid({a:g},{b:g},{c:g})", fd_step=2e-3,
        chart_scale=1.0, chart_radius=25.0, switch_radius=4.0,
        transition=transition, embedding=emb,
    )
    M.semi_axes = semi
    return M


def _product(M1: AmbientManifold, M2: AmbientManifold):
    d1, d2 = M1.dim, M2.dim
    d = d1 + d2

    def metric(x):
        g = np.zeros(x.shape[:-1] + (d, d))
        g[..., :d1, :d1] = M1.metric(x[..., :d1])
        g[..., d1:, d1:] = M2.metric(x[..., d1:])
        return g

    def christoffel(x):
        G = np.zeros(x.shape[:-1] + (d, d, d))
        G[..., :d1, :d1, :d1] = M1.christoffel(x[..., :d1])
        G[..., d1:, d1:, d1:] = M2.christoffel(x[..., d1:])
        return G

    def dchristoffel(x):
        dG = np.zeros(x.shape[:-1] + (d, d, d, d))
        dG[..., :d1, :d1, :d1, :d1] = M1.dchristoffel(x[..., :d1])
        dG[..., d1:, d1:, d1:, d1:] = M2.dchristoffel(x[..., d1:])
        return dG

    def curvature(x):
        R = np.zeros(x.shape[:-1] + (d, d, d, d))
        R[..., :d1, :d1, :d1, :d1] = M1.curvature(x[..., :d1]).riemann
        R[..., d1:, d1:, d1:, d1:] = M2.curvature(x[..., d1:]).riemann
        return R

    periods = None
    if M1.periods is not None and M2.periods is not None:
        periods = np.concatenate([M1.periods, M2.periods])
    return AmbientManifold(
        d, metric, christoffel_fn=christoffel, dchristoffel_fn=dchristoffel,
        curvature_fn=curvature, is_flat=M1.is_flat and M2.is_flat, periods=periods,
        catalog_id=f"product({M1.catalog_id},{M2.catalog_id})",
        chart_scale=min(M1.chart_scale, M2.chart_scale),
    )


# ----------------------------------------------------------------------
# named bumps for conformal(...) ids

BUILTIN_BUMPS = {
    # generic anisotropic bump with a nondegenerate critical circle along axis 0
    # at (x2, x3) = (0, 0); periodic with period 2*pi in each coordinate
    "bump1": TrigBump(1.0, [(1.0, [0.0, 1.0, 0.0], "cos", 0.0), (0.5, [0.0, 0.0, 2.0], "cos", 0.0)]),
    # a bump that destroys minimality of the axis-0 coordinate circle at the origin
    "tilted": TrigBump(1.0, [(1.0, [0.0, 1.0, 0.0], "sin", 0.0), (0.5, [0.0, 0.0, 1.0], "cos", 0.3)]),
}


# ----------------------------------------------------------------------
# id parsing

_NUM = {"pi": np.pi, "2pi": 2 * np.pi, "-pi": -np.pi}


def _to_number(tok):
    tok = tok.strip()
    if tok in _NUM:
        return _NUM[tok]
    return float(tok)


def _split_args(body):
    args, depth, cur = [], 0, []
    for ch in body:
        if ch == "(":
            depth += 1
            cur.append(ch)
        elif ch == ")":
            depth -= 1
            cur.append(ch)
        elif ch == "," and depth == 0:
            args.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if cur:
        args.append("".join(cur).strip())
    return args


def parse_geometry_id(gid):
    gid = gid.strip()
    m = re.match(r"^([a-zA-Z_][a-zA-Z0-9_]*)\((.*)\)$", gid)
    if not m:
        if gid in ("great_circle",):
            raise ValueError(f"{gid!r} is a submanifold id, not a geometry id")
        raise ValueError(f"cannot parse geometry id {gid!r}")
    return m.group(1), _split_args(m.group(2))


def make_geometry(gid, bumps=None):
    """Build a catalog geometry from its string id."""
    name, args = parse_geometry_id(gid)
    if name == "euclidean":
        return _euclidean(int(_to_number(args[0])))
    if name == "flat_torus":
        return _flat_torus([_to_number(a) for a in args])
    if name == "round_sphere":
        return _round_sphere(int(_to_number(args[0])), _to_number(args[1]))
    if name == "ellipsoid":
        return _ellipsoid(*[_to_number(a) for a in args])
    if name == "product":
        return _product(make_geometry(args[0], bumps), make_geometry(args[1], bumps))
    if name == "conformal":
        base = make_geometry(args[0], bumps)
        eps = _to_number(args[1])
        bump_name = args[2] if len(args) > 2 else "bump1"
        table = dict(BUILTIN_BUMPS)
        if bumps:
            table.update(bumps)
        if bump_name not in table:
            raise ValueError(f"unknown bump {bump_name!r}")
        return _conformal(base, eps, table[bump_name])
    raise ValueError(f"unknown geometry {name!r}")


# ----------------------------------------------------------------------
# user metrics from a config table


def _term_value(term, x):
    val = np.full(x.shape[:-1], float(term.get("coef", 1.0)))
    powers = term.get("powers")
    if powers:
        for i, p in enumerate(powers):
            if p:
                val = val * x[..., i] ** p
    if "cos" in term:
        val = val * np.cos(np.tensordot(x, np.asarray(term["cos"], float), axes=([-1], [0])))
    if "sin" in term:
        val = val * np.sin(np.tensordot(x, np.asarray(term["sin"], float), axes=([-1], [0])))
    return val


def manifold_from_config(cfg):
    """Build a user metric from a config dict.

    Schema::

        {"dim": d,
         "periods": [...]          # optional
         "metric": {"0,0": [ {"coef": 1.0, "powers": [0,...],
                              "cos": [k1,...], "sin": [...]} , ...], ...}}

    Unlisted components default to delta_{ab}; derivatives use the
    finite-difference mode.
    """
    d = int(cfg["dim"])
    table = {}
    for key, terms in cfg.get("metric", {}).items():
        i, j = (int(t) for t in key.split(","))
        table[(i, j)] = terms

    def metric(x):
        g = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()
        for (i, j), terms in table.items():
            val = sum(_term_value(t, x) for t in terms)
            if i == j:
                g[..., i, j] = val
            else:
                g[..., i, j] = val
                g[..., j, i] = val
        return g

    periods = cfg.get("periods")
    return AmbientManifold(
        d, metric, periods=None if periods is None else np.asarray(periods, float),
        fd_step=float(cfg.get("fd_step", 1e-3)), catalog_id=cfg.get("name", "user_metric"),
        chart_scale=float(cfg.get("chart_scale", 1.0)),
    )
