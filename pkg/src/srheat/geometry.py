"""Contact-structure calculus on R^3 in coordinates (x, y, w).

A structure is given by an orthonormal-by-declaration pair of vector
fields (f1, f2) spanning a contact distribution.  This module computes
Lie brackets, the Reeb field, the structure constants

    [f1, f0] = c01_1 f1 + c01_2 f2
    [f2, f0] = c02_1 f1 + c02_2 f2
    [f2, f1] = c12_1 f1 + c12_2 f2 + f0

and the two local invariants chi and kappa, plus the sub-Laplacian,
Popp-volume divergence, horizontal gradient, frame rotations and the
weighted (epsilon and nilpotent) approximations.

Structure constants are obtained from 3x3 linear solves at each queried
point; their directional derivatives come from implicit differentiation
of the solve, dc = A^{-1}(db - dA c), with every matrix entry
differentiated symbolically.  Finite differences of solves are never
used: kappa is second order in the frame data and nested numeric
differencing would lose roughly half the digits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as E
from .expr import Expr, Number, Var, differentiate, evaluate, substitute, to_callable

#: Points where cond([f1 f2 f0]) exceeds this are rejected as degenerate:
#: the implicit differentiation downstream amplifies ill-conditioning.
CONDITION_LIMIT = 1e8


class GeometryError(ValueError):
    pass


class DegenerateFrameError(GeometryError):
    """The moving frame fails (or nearly fails) to span R^3 at a point."""


class InconsistentInvariantError(GeometryError):
    """-det C came out significantly negative; the frame data is numerically inconsistent."""


def _as_expr(c):
    if isinstance(c, Expr):
        return c
    if isinstance(c, str):
        return E.parse(c)
    return Number(c)


class VectorField:
    """First-order differential operator cx*d/dx + cy*d/dy + cw*d/dw."""

    def __init__(self, cx, cy, cw):
        self.cx = _as_expr(cx)
        self.cy = _as_expr(cy)
        self.cw = _as_expr(cw)
        self._fns = None

    @property
    def coeffs(self):
        return (self.cx, self.cy, self.cw)

    def __repr__(self):
        return f"VectorField({self.cx}, {self.cy}, {self.cw})"

    def __call__(self, q):
        """Evaluate the coefficient vector at a point."""
        if self._fns is None:
            self._fns = tuple(to_callable(c) for c in self.coeffs)
        x, y, w = q
        return np.array([f(x, y, w) for f in self._fns], dtype=float)

    def apply(self, phi):
        """Directional derivative X(phi) as an Expr."""
        phi = _as_expr(phi)
        return E.add(
            E.add(E.mul(self.cx, differentiate(phi, "x")),
                  E.mul(self.cy, differentiate(phi, "y"))),
            E.mul(self.cw, differentiate(phi, "w")),
        )

    def __add__(self, other):
        return VectorField(E.add(self.cx, other.cx),
                           E.add(self.cy, other.cy),
                           E.add(self.cw, other.cw))

    def __sub__(self, other):
        return VectorField(E.sub(self.cx, other.cx),
                           E.sub(self.cy, other.cy),
                           E.sub(self.cw, other.cw))

    def __neg__(self):
        return VectorField(E.neg(self.cx), E.neg(self.cy), E.neg(self.cw))

    def scale(self, factor):
        """Multiply by a scalar Expr (or number)."""
        factor = _as_expr(factor)
        return VectorField(E.mul(factor, self.cx),
                           E.mul(factor, self.cy),
                           E.mul(factor, self.cw))


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """[X, Y]^k = sum_j (X^j d_j Y^k - Y^j d_j X^k), exactly."""
    out = []
    for k in range(3):
        acc = Number(0.0)
        for j, v in enumerate(("x", "y", "w")):
            acc = E.add(acc, E.mul(X.coeffs[j], differentiate(Y.coeffs[k], v)))
            acc = E.sub(acc, E.mul(Y.coeffs[j], differentiate(X.coeffs[k], v)))
        out.append(acc)
    return VectorField(*out)


def _det3(u: VectorField, v: VectorField, t: VectorField) -> Expr:
    """Determinant of the 3x3 matrix with columns u, v, t (symbolic)."""
    def minor(a, b, i, j):
        return E.sub(E.mul(a.coeffs[i], b.coeffs[j]), E.mul(a.coeffs[j], b.coeffs[i]))
    return E.add(
        E.sub(E.mul(u.cx, minor(v, t, 1, 2)), E.mul(v.cx, minor(u, t, 1, 2))),
        E.mul(t.cx, minor(u, v, 1, 2)),
    )


def reeb_field(F: "Frame") -> VectorField:
    """The Reeb field f0 = v + alpha f1 + beta f2 with v = [f2, f1].

    alpha = omega([v, f2]) and beta = -omega([v, f1]), where omega is
    the covector annihilating f1, f2 and normalised by omega(v) = 1.
    omega is never materialised: its pairings are determinant ratios,
    omega(u) = det(f1, f2, u) / det(f1, f2, v).
    """
    return F.reeb


@dataclass(frozen=True)
class StructureConstants:
    c01_1: float
    c01_2: float
    c02_1: float
    c02_2: float
    c12_1: float
    c12_2: float
    #: directional derivatives f2(c12_1) and f1(c12_2)
    d_c12_1_along_f2: float
    d_c12_2_along_f1: float


@dataclass(frozen=True)
class Invariants:
    chi: float
    kappa: float


class Frame:
    """A contact frame (f1, f2) with its derived Reeb field and solver caches."""

    def __init__(self, f1: VectorField, f2: VectorField):
        self.f1 = f1
        self.f2 = f2
        self._reeb = None
        self._c12_symbolic = None
        self._mach = None

    @property
    def reeb(self) -> VectorField:
        if self._reeb is None:
            f1, f2 = self.f1, self.f2
            v = lie_bracket(f2, f1)
            den = _det3(f1, f2, v)
            alpha = E.div(_det3(f1, f2, lie_bracket(v, f2)), den)
            beta = E.neg(E.div(_det3(f1, f2, lie_bracket(v, f1)), den))
            # [f2, f1] = c12_1 f1 + c12_2 f2 + f0 with f0 = v + alpha f1
            # + beta f2 forces c12_1 = -alpha, c12_2 = -beta.
            self._c12_symbolic = (E.neg(alpha), E.neg(beta))
            self._reeb = v + f1.scale(alpha) + f2.scale(beta)
        return self._reeb

    @property
    def c12_symbolic(self):
        """(c12_1, c12_2) as Exprs; used to assemble the diffusion drift."""
        self.reeb  # populate the cache
        return self._c12_symbolic

    # -- solver machinery ---------------------------------------------------

    def _machinery(self):
        if self._mach is not None:
            return self._mach
        f0 = self.reeb
        fields = (self.f1, self.f2, f0)
        # A has the frame fields as columns; row index is the coordinate.
        a_exprs = [[fields[j].coeffs[i] for j in range(3)] for i in range(3)]
        b21 = lie_bracket(self.f2, self.f1).coeffs
        b10 = lie_bracket(self.f1, f0).coeffs
        b20 = lie_bracket(self.f2, f0).coeffs

        def compile_matrix(rows):
            return [[to_callable(e) for e in row] for row in rows]

        def compile_vec(es):
            return [to_callable(e) for e in es]

        mach = {
            "A": compile_matrix(a_exprs),
            "dA": {v: compile_matrix([[differentiate(e, v) for e in row]
                                      for row in a_exprs]) for v in ("x", "y", "w")},
            "b21": compile_vec(b21),
            "db21": {v: compile_vec([differentiate(e, v) for e in b21])
                     for v in ("x", "y", "w")},
            "b10": compile_vec(b10),
            "b20": compile_vec(b20),
            "df": {v: (compile_vec([differentiate(e, v) for e in self.f1.coeffs]),
                       compile_vec([differentiate(e, v) for e in self.f2.coeffs]))
                   for v in ("x", "y", "w")},
        }
        self._mach = mach
        return mach

    def basis_matrix(self, q):
        """[f1(q) f2(q) f0(q)] as columns, with the degeneracy guard."""
        mach = self._machinery()
        x, y, w = q
        A = np.array([[fn(x, y, w) for fn in row] for row in mach["A"]], dtype=float)
        if not np.all(np.isfinite(A)):
            raise DegenerateFrameError(f"frame is singular at {tuple(q)}")
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise DegenerateFrameError(
                f"frame condition number {cond:.3g} exceeds {CONDITION_LIMIT:.0e} at {tuple(q)}")
        return A

    def contact_check(self, q) -> bool:
        """True when det[f1, f2, [f1, f2]](q) is usable (not nearly singular)."""
        try:
            self.basis_matrix(q)
        except DegenerateFrameError:
            return False
        return True


def heisenberg_frame() -> Frame:
    """f1 = d/dx - (y/2) d/dw,  f2 = d/dy + (x/2) d/dw."""
    f1 = VectorField(1.0, 0.0, E.neg(E.div(Var("y"), Number(2.0))))
    f2 = VectorField(0.0, 1.0, E.div(Var("x"), Number(2.0)))
    return Frame(f1, f2)


def _eval_vec(fns, x, y, w):
    return np.array([fn(x, y, w) for fn in fns], dtype=float)


def _eval_mat(fns, x, y, w):
    return np.array([[fn(x, y, w) for fn in row] for row in fns], dtype=float)


def structure_constants(F: Frame, q) -> StructureConstants:
    """Structure constants at q, with the derivative fields needed by kappa.

    Solves A(q) c = b(q) for each of [f1,f0], [f2,f0], [f2,f1] in the
    basis (f1, f2, f0); the c12 derivatives use implicit differentiation
    of the third system along the directions f2(q) and f1(q).
    """
    mach = F._machinery()
    x, y, w = (float(q[0]), float(q[1]), float(q[2]))
    A = F.basis_matrix((x, y, w))

    b10 = _eval_vec(mach["b10"], x, y, w)
    b20 = _eval_vec(mach["b20"], x, y, w)
    b21 = _eval_vec(mach["b21"], x, y, w)
    sol = np.linalg.solve(A, np.column_stack([b10, b20, b21]))
    c10, c20, c21 = sol[:, 0], sol[:, 1], sol[:, 2]

    dA = {v: _eval_mat(mach["dA"][v], x, y, w) for v in ("x", "y", "w")}
    db21 = {v: _eval_vec(mach["db21"][v], x, y, w) for v in ("x", "y", "w")}

    def directional_dc21(direction):
        dAu = sum(direction[i] * dA[v] for i, v in enumerate(("x", "y", "w")))
        dbu = sum(direction[i] * db21[v] for i, v in enumerate(("x", "y", "w")))
        return np.linalg.solve(A, dbu - dAu @ c21)

    along_f2 = directional_dc21(A[:, 1])
    along_f1 = directional_dc21(A[:, 0])

    return StructureConstants(
        c01_1=float(c10[0]), c01_2=float(c10[1]),
        c02_1=float(c20[0]), c02_2=float(c20[1]),
        c12_1=float(c21[0]), c12_2=float(c21[1]),
        d_c12_1_along_f2=float(along_f2[0]),
        d_c12_2_along_f1=float(along_f1[1]),
    )


def chi(F: Frame, q) -> float:
    """First invariant: sqrt(-det C) from the symmetrised c0 matrix."""
    sc = structure_constants(F, q)
    off = 0.5 * (sc.c01_2 + sc.c02_1)
    minus_det = off * off - sc.c01_1 * sc.c02_2
    if minus_det < -1e-9:
        raise InconsistentInvariantError(
            f"-det C = {minus_det:.3e} < 0 at {tuple(q)}: inconsistent frame data")
    return float(np.sqrt(max(minus_det, 0.0)))


def kappa(F: Frame, q) -> float:
    """Second invariant.

    Built from D = f2(c12_1) - f1(c12_2), S = c12_1^2 + c12_2^2 and
    R = (c01_2 - c02_1)/2 as (D - S + R)/3.  The 1/3 normalisation is
    pinned by two requirements that hold for (D - S + R) alone in no
    other scaling: invariance under position-dependent frame rotations,
    and the closed form kappa(0) = 2(a+c) for the quadratic model.
    """
    sc = structure_constants(F, q)
    d = sc.d_c12_1_along_f2 - sc.d_c12_2_along_f1
    s = sc.c12_1 ** 2 + sc.c12_2 ** 2
    r = 0.5 * (sc.c01_2 - sc.c02_1)
    return float((d - s + r) / 3.0)


def invariants(F: Frame, q) -> Invariants:
    return Invariants(chi=chi(F, q), kappa=kappa(F, q))


def sublaplacian_apply(F: Frame, phi, q) -> float:
    """(f1^2 + f2^2 + c12_2 f1 - c12_1 f2) phi at q, symbolically composed."""
    phi = _as_expr(phi)
    sc = structure_constants(F, q)
    d1 = F.f1.apply(phi)
    d2 = F.f2.apply(phi)
    qq = tuple(float(c) for c in q)
    return (evaluate(F.f1.apply(d1), qq) + evaluate(F.f2.apply(d2), qq)
            + sc.c12_2 * evaluate(d1, qq) - sc.c12_1 * evaluate(d2, qq))


def sublaplacian_apply_values(F: Frame, q, grad, hess) -> float:
    """Sub-Laplacian applied to a function known only through its
    gradient (3,) and Hessian (3,3) values at q.

    Used to act on functions that are not Exprs (for instance integral
    representations differentiated under the integral sign).
    """
    mach = F._machinery()
    x, y, w = (float(q[0]), float(q[1]), float(q[2]))
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    sc = structure_constants(F, (x, y, w))
    c1 = F.f1((x, y, w))
    c2 = F.f2((x, y, w))
    dc1 = np.column_stack([_eval_vec(mach["df"][v][0], x, y, w) for v in ("x", "y", "w")])
    dc2 = np.column_stack([_eval_vec(mach["df"][v][1], x, y, w) for v in ("x", "y", "w")])
    # f(f(h)) = sum_jk c^j (d_j c^k) h_k + c^j c^k h_jk
    total = 0.0
    for c, dc in ((c1, dc1), (c2, dc2)):
        total += float(c @ dc.T @ grad)  # dc[k, j] = d_j c^k
        total += float(c @ hess @ c)
    total += sc.c12_2 * float(c1 @ grad) - sc.c12_1 * float(c2 @ grad)
    return total


def divergence(F: Frame, X: VectorField, q) -> float:
    """Popp-volume divergence via coframe pairings:
    div X = <nu1, [f1, X]> + <nu2, [f2, X]> + <nu0, [f0, X]>."""
    x, y, w = (float(q[0]), float(q[1]), float(q[2]))
    A = F.basis_matrix((x, y, w))
    total = 0.0
    for i, f in enumerate((F.f1, F.f2, F.reeb)):
        br = lie_bracket(f, X)
        comp = np.linalg.solve(A, br((x, y, w)))
        total += comp[i]
    return float(total)


def horizontal_gradient(F: Frame, phi) -> VectorField:
    """grad phi = f1(phi) f1 + f2(phi) f2."""
    phi = _as_expr(phi)
    return F.f1.scale(F.f1.apply(phi)) + F.f2.scale(F.f2.apply(phi))


def rotate_frame(F: Frame, theta) -> Frame:
    """Rotate by the scalar field theta: (cos t f1 + sin t f2, -sin t f1 + cos t f2)."""
    theta = _as_expr(theta)
    c, s = E.cos(theta), E.sin(theta)
    return Frame(F.f1.scale(c) + F.f2.scale(s),
                 F.f2.scale(c) + (-F.f1).scale(s))


def dilate_point(q, lam):
    """Weighted dilation (x, y, w) -> (lam x, lam y, lam^2 w)."""
    return (lam * q[0], lam * q[1], lam * lam * q[2])


def _dilation_map(lam):
    lam = float(lam)
    return {"x": E.mul(Number(lam), Var("x")),
            "y": E.mul(Number(lam), Var("y")),
            "w": E.mul(Number(lam * lam), Var("w"))}


def epsilon_approximation(X: VectorField, eps: float) -> VectorField:
    """The rescaled field X^eps with coefficients
    cx(delta_eps p), cy(delta_eps p), eps^{-1} cw(delta_eps p).

    Requires coordinates privileged at the origin (the caller's
    responsibility); eps must be positive.
    """
    eps = float(eps)
    if eps <= 0:
        raise GeometryError(f"eps must be positive, got {eps}")
    m = _dilation_map(eps)
    return VectorField(substitute(X.cx, m),
                       substitute(X.cy, m),
                       E.mul(Number(1.0 / eps), substitute(X.cw, m)))


def dilate_pushforward(X: VectorField, lam: float) -> VectorField:
    """Pushforward of X under the weighted dilation delta_lam."""
    lam = float(lam)
    if lam == 0:
        raise GeometryError("lam must be nonzero")
    m = _dilation_map(1.0 / lam)
    return VectorField(E.mul(Number(lam), substitute(X.cx, m)),
                       E.mul(Number(lam), substitute(X.cy, m)),
                       E.mul(Number(lam * lam), substitute(X.cw, m)))


def nilpotent_approximation(X: VectorField) -> VectorField:
    """Weight -1 part at the origin by weighted Taylor truncation:
    cx, cy to order 0; cw to weighted order 1 (constant + linear in x, y).

    Coefficients must be smooth at 0; non-polynomial ones are handled
    through their symbolic derivatives at the origin.
    """
    zero = (0.0, 0.0, 0.0)
    cx0 = Number(evaluate(X.cx, zero))
    cy0 = Number(evaluate(X.cy, zero))
    cw_lin = E.add(
        Number(evaluate(X.cw, zero)),
        E.add(E.mul(Number(evaluate(differentiate(X.cw, "x"), zero)), Var("x")),
              E.mul(Number(evaluate(differentiate(X.cw, "y"), zero)), Var("y"))),
    )
    return VectorField(cx0, cy0, cw_lin)
