"""Matrix transport along chords: scattering data, attenuated transforms, derivatives.

Along the chord ``gamma(t) = x + t v``, ``0 <= t <= tau``, the propagator
``U`` solves ``U' = -Phi(gamma(t)) U`` with ``U(tau) = I`` and the scattering
datum is ``C = U(0)``.  Writing ``t = s tau`` every chord of a batch shares one
relative grid in ``s`` which contains the Gauss-Legendre nodes used for the
line integrals, so a single backward RK4 sweep yields ``C`` and the samples of
``U`` needed by all derivative formulas:

* first derivative   ``dC[h]  = C int_0^tau U^-1 h U dt``
* second derivative  ``d2C[h] = 2 C int_0^tau U^-1 h dU dt`` where ``dU`` solves
  ``dU' = -Phi dU - h U``, ``dU(tau) = 0`` (integrated as a 2m x 2m block system)
* two-sided transform ``I g = C_L int_0^tau U_L^-1 g U_R dt C_R^-1`` for the
  attenuation ``A -> L A - A R``.

The RK4 update is linear in the state, so each step is applied as a
precomputed transfer matrix; building those is vectorised over chords and
steps, and only the running product is sequential.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
import math

import numpy as np

from .errors import NumericalError
from .fields import CoefficientField, MatrixField
from .geometry import BoundaryPoint, fan_beam_arrays
from .zernike import real_basis_matrix

__all__ = [
    "OdeOptions",
    "ChordSweep",
    "as_angles",
    "scattering_data",
    "integrating_factor",
    "attenuated_xray",
    "first_derivative",
    "all_basis_derivatives",
    "scattering_with_gradient",
    "second_derivative",
    "pseudolinearisation_residual",
    "expm_pade6",
]

GLANCING_TAU = 1e-10


@dataclass(frozen=True)
class OdeOptions:
    """Solver settings.

    Attributes
    ----------
    rel_step : float
        Maximal RK4 step as a fraction of the chord length.
    min_step : float
        Absolute floor on the step.
    gauss_nodes : int
        Gauss-Legendre nodes per chord for the line integrals.
    reorthogonalize : bool
        Project the propagator onto SO(m) by polar decomposition every
        ``reorth_every`` steps (skew attenuations only).
    batch_size : int
        Chords per vectorised batch.
    threads : int
        Worker threads; results never depend on it.
    """

    rel_step: float = 1e-3
    min_step: float = 1e-4
    gauss_nodes: int = 48
    reorthogonalize: bool = False
    reorth_every: int = 32
    batch_size: int = 512
    threads: int = 1

    def __post_init__(self):
        if not (self.rel_step > 0 and self.min_step > 0):
            raise ValueError("step sizes must be positive")
        if self.gauss_nodes < 1 or self.batch_size < 1 or self.threads < 1:
            raise ValueError("node, batch and thread counts must be positive")

    def halved(self) -> "OdeOptions":
        return replace(self, rel_step=self.rel_step / 2, min_step=self.min_step / 2)


def as_angles(points):
    """Normalise chord input to arrays ``alpha, beta`` plus a 'single point' flag.

    Accepts a :class:`BoundaryPoint`, a sequence of them, or an array whose last
    axis holds ``(alpha, beta)``.
    """
    if isinstance(points, BoundaryPoint):
        return np.array([points.alpha]), np.array([points.beta]), True
    if isinstance(points, (list, tuple)) and points and isinstance(points[0], BoundaryPoint):
        return (
            np.array([p.alpha for p in points]),
            np.array([p.beta for p in points]),
            False,
        )
    arr = np.asarray(points, dtype=float)
    single = arr.ndim == 1
    arr = arr.reshape(-1, 2)
    return arr[:, 0], arr[:, 1], single


@lru_cache(maxsize=32)
def _gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=32)
def _grid(h_rel: float, n_gauss: int):
    """Descending relative grid from 1 to 0 containing the Gauss nodes.

    Returns the grid, its midpoints, and the grid positions of the Gauss nodes
    (in ascending node order).
    """
    g, _ = _gauss01(n_gauss)
    marks = np.concatenate([[0.0], g, [1.0]])
    pieces = []
    for a, b in zip(marks[:-1], marks[1:]):
        k = max(1, int(math.ceil((b - a) / h_rel - 1e-9)))
        pieces.append(a + (b - a) * np.arange(k) / k)
    grid = np.concatenate(pieces + [[1.0]])[::-1].copy()
    mids = 0.5 * (grid[:-1] + grid[1:])
    K = len(grid) - 1
    # marks[1:-1] sit at the start of pieces 1..n_gauss (ascending grid index)
    starts = np.cumsum([0] + [len(p) for p in pieces])
    asc_idx = starts[1 : n_gauss + 1]
    gauss_idx = K - asc_idx
    for arr in (grid, mids, gauss_idx):
        arr.setflags(write=False)
    return grid, mids, gauss_idx


def _rk4_transfer(F0, Fm, F1, h):
    """Transfer matrices of one RK4 step for the linear ODE ``y' = F y``."""
    n = F0.shape[-1]
    eye = np.eye(n)
    hh = h[..., None, None]
    K2 = Fm @ (eye + 0.5 * hh * F0)
    K3 = Fm @ (eye + 0.5 * hh * K2)
    K4 = F1 @ (eye + hh * K3)
    return eye + (hh / 6.0) * (F0 + 2.0 * K2 + 2.0 * K3 + K4)


def _polar(U):
    w, _, vt = np.linalg.svd(U)
    return w @ vt


def _propagate(gen, grid, mids, record_idx, reorth_every=0):
    """Integrate ``y' = G(s) y`` from ``s = 1`` (``y = I``) down to ``s = 0``.

    ``gen(s)`` returns generators ``(C, S, n, n)`` at relative positions ``s``.
    Returns the states at the grid indices ``record_idx`` and at ``s = 0``.
    """
    G_grid = gen(grid)
    G_mid = gen(mids)
    if not (np.all(np.isfinite(G_grid)) and np.all(np.isfinite(G_mid))):
        raise NumericalError("non-finite field values along a chord")
    h = np.diff(grid)
    P = _rk4_transfer(G_grid[:, :-1], G_mid, G_grid[:, 1:], np.broadcast_to(h, G_mid.shape[:2]))
    C, K, n, _ = P.shape
    want = {int(j): pos for pos, j in enumerate(record_idx)}
    out = np.empty((C, len(record_idx), n, n))
    Y = np.broadcast_to(np.eye(n), (C, n, n)).copy()
    for j in range(K):
        Y = P[:, j] @ Y
        if reorth_every and (j + 1) % reorth_every == 0:
            Y = _polar(Y)
        pos = want.get(j + 1)
        if pos is not None:
            out[:, pos] = Y
    if reorth_every:
        Y = _polar(Y)
    return out, Y


@dataclass
class ChordSweep:
    """Output of one backward sweep over a batch of chords.

    Attributes
    ----------
    C : (n, m, m) scattering data
    U : (n, G, m, m) propagator at the Gauss nodes (ascending in t)
    Uinv : (n, G, m, m) inverses of ``U``
    t : (n, G) node positions along each chord
    w : (n, G) line-integral weights (sum to ``tau``)
    points : (n, G, 2) node positions in the disk
    tau : (n,) exit times
    """

    C: np.ndarray
    U: np.ndarray
    Uinv: np.ndarray
    t: np.ndarray
    w: np.ndarray
    points: np.ndarray
    tau: np.ndarray


def _batch_geometry(alpha, beta):
    x, v, tau = fan_beam_arrays(alpha, beta)
    tau = np.where(tau < GLANCING_TAU, 0.0, tau)
    return x, v, tau


def _h_rel(tau, opts: OdeOptions) -> float:
    tmax = float(np.max(tau)) if len(tau) else 0.0
    if tmax <= 0.0:
        return 1.0
    return max(opts.rel_step, opts.min_step / tmax)


def _sweep_batch(f: MatrixField, alpha, beta, opts: OdeOptions) -> ChordSweep:
    x, v, tau = _batch_geometry(alpha, beta)
    grid, mids, gidx = _grid(_h_rel(tau, opts), opts.gauss_nodes)

    def gen(s):
        return -tau[:, None, None, None] * f.along_chords(x, v, tau, s)

    every = opts.reorth_every if opts.reorthogonalize else 0
    U, C = _propagate(gen, grid, mids, gidx, every)
    g, wg = _gauss01(opts.gauss_nodes)
    t = tau[:, None] * g[None, :]
    pts = x[:, None, :] + t[:, :, None] * v[:, None, :]
    return ChordSweep(C, U, np.linalg.inv(U), t, tau[:, None] * wg[None, :], pts, tau)


def _map_batches(fn, alpha, beta, opts: OdeOptions):
    n = len(alpha)
    bs = opts.batch_size
    slices = [slice(i, min(i + bs, n)) for i in range(0, n, bs)]
    if opts.threads > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            return list(pool.map(lambda sl: fn(alpha[sl], beta[sl]), slices))
    return [fn(alpha[sl], beta[sl]) for sl in slices]


def _concat_sweeps(parts):
    return ChordSweep(*[np.concatenate([getattr(p, k) for p in parts]) for k in ChordSweep.__dataclass_fields__])


def integrating_factor(f: MatrixField, points, opts: OdeOptions = OdeOptions()) -> ChordSweep:
    """Propagator ``R(t) = U(t)`` (with ``R(tau) = I``) at the Gauss nodes of each chord."""
    alpha, beta, _ = as_angles(points)
    parts = _map_batches(lambda a, b: _sweep_batch(f, a, b, opts), alpha, beta, opts)
    return _concat_sweeps(parts)


def scattering_data(f: MatrixField, points, opts: OdeOptions = OdeOptions()):
    """Scattering data ``C_Phi`` at one boundary point ``(m, m)`` or many ``(n, m, m)``."""
    sw = integrating_factor(f, points, opts)
    _, _, single = as_angles(points)
    return sw.C[0] if single else sw.C


def _field_values(g, pts):
    """Evaluate an integrand at node positions ``(n, G, 2)``; scalars keep shape ``(n, G)``."""
    if isinstance(g, MatrixField):
        vals = g(pts.reshape(-1, 2))
        return vals.reshape(pts.shape[:2] + vals.shape[1:])
    if callable(g):
        vals = np.asarray(g(pts.reshape(-1, 2)))
        return vals.reshape(pts.shape[:2] + vals.shape[1:])
    return np.broadcast_to(np.asarray(g, dtype=float), pts.shape[:2] + np.shape(g))


def attenuated_xray(g, points, opts: OdeOptions = OdeOptions(), left=None, right=None):
    """Attenuated transform of ``g`` for the attenuation ``A -> L A - A R``.

    Parameters
    ----------
    g : MatrixField, callable or constant
        Integrand; callables map ``(P, 2)`` points to scalars ``(P,)`` or
        matrices ``(P, m, m)``.
    points : boundary points
    left, right : MatrixField, optional
        ``L`` and ``R``; omitted sides are zero.  ``left = right = Phi`` is the
        commutator attenuation ``[Phi, .]``, ``right = None`` is left
        multiplication.  With both omitted this is the plain ray transform.

    Returns
    -------
    numpy.ndarray
        ``C_L int_0^tau U_L^-1 g U_R dt C_R^-1`` per chord.
    """
    alpha, beta, single = as_angles(points)

    def one(a, b):
        if left is None and right is None:
            x, v, tau = _batch_geometry(a, b)
            gn, wg = _gauss01(opts.gauss_nodes)
            t = tau[:, None] * gn[None, :]
            pts = x[:, None, :] + t[:, :, None] * v[:, None, :]
            vals = _field_values(g, pts)
            w = tau[:, None] * wg[None, :]
            return np.einsum("cg,cg...->c...", w, vals)
        sl = _sweep_batch(left, a, b, opts) if left is not None else None
        sr = _sweep_batch(right, a, b, opts) if right is not None else None
        ref = sl if sl is not None else sr
        vals = _field_values(g, ref.points)
        if vals.ndim == 2:
            m = (left or right).m
            vals = vals[..., None, None] * np.eye(m)
        if sl is not None:
            vals = sl.Uinv @ vals
        if sr is not None:
            vals = vals @ sr.U
        acc = np.einsum("cg,cgpq->cpq", ref.w, vals)
        if sl is not None:
            acc = sl.C @ acc
        if sr is not None:
            acc = acc @ np.linalg.inv(sr.C)
        return acc

    out = np.concatenate(_map_batches(one, alpha, beta, opts))
    return out[0] if single else out


def _as_field(theta, m):
    if isinstance(theta, MatrixField):
        return theta
    if m is None:
        raise ValueError("m is required when passing raw coefficient vectors")
    return CoefficientField(theta, m)


def first_derivative(theta, h, points, opts: OdeOptions = OdeOptions(), m=None):
    """Gateaux derivative ``dC_theta[h] = C int U^-1 h U dt`` at the given chords."""
    f = _as_field(theta, m)
    hf = _as_field(h, f.m)
    alpha, beta, single = as_angles(points)

    def one(a, b):
        sw = _sweep_batch(f, a, b, opts)
        hv = _field_values(hf, sw.points)
        inner = np.einsum("cg,cgpq->cpq", sw.w, sw.Uinv @ hv @ sw.U)
        return sw.C @ inner

    out = np.concatenate(_map_batches(one, alpha, beta, opts))
    return out[0] if single else out


def _basis_derivs_from_sweep(sw: ChordSweep, field: CoefficientField):
    basis = field.basis.matrices  # (d_m, m, m)
    n, G = sw.t.shape
    E = real_basis_matrix(field.count, sw.points.reshape(-1, 2)).reshape(n, G, field.count)
    M = np.einsum("cgpr,irs,cgsq->cgipq", sw.Uinv, basis, sw.U)
    J = np.einsum("cg,cgl,cgipq->clipq", sw.w, E, M)
    dC = np.einsum("cpr,clirq->clipq", sw.C, J)
    return dC.reshape(n, field.D, field.m, field.m)


def scattering_with_gradient(field: CoefficientField, points, opts: OdeOptions = OdeOptions()):
    """``C_theta`` and all ``D`` basis derivatives from one sweep per chord.

    Returns
    -------
    C : (n, m, m)
    dC : (n, D, m, m), column ``ell * d_m + i`` is the derivative along ``e_ell A_i``.
    """
    alpha, beta, _ = as_angles(points)

    def one(a, b):
        sw = _sweep_batch(field, a, b, opts)
        return sw.C, _basis_derivs_from_sweep(sw, field)

    parts = _map_batches(one, alpha, beta, opts)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def all_basis_derivatives(theta, points, opts: OdeOptions = OdeOptions(), m=None):
    """All ``D`` first derivatives at the given chords, shape ``(n, D, m, m)``."""
    f = _as_field(theta, m)
    _, _, single = as_angles(points)
    _, dC = scattering_with_gradient(f, points, opts)
    return dC[0] if single else dC


def second_derivative(theta, h, points, opts: OdeOptions = OdeOptions(), m=None):
    """Second Gateaux derivative ``d2/dt2 C_{theta + t h}`` at ``t = 0``.

    The pair ``(U, dU)`` is propagated as the block system
    ``[[-Phi, 0], [-h, -Phi]]`` on the shared grid; then
    ``d2C = 2 C int U^-1 h dU dt`` by Gauss quadrature.
    """
    f = _as_field(theta, m)
    hf = _as_field(h, f.m)
    mm = f.m
    alpha, beta, single = as_angles(points)

    def one(a, b):
        x, v, tau = _batch_geometry(a, b)
        grid, mids, gidx = _grid(_h_rel(tau, opts), opts.gauss_nodes)

        def gen(s):
            phi = f.along_chords(x, v, tau, s)
            hv = hf.along_chords(x, v, tau, s)
            out = np.zeros(phi.shape[:2] + (2 * mm, 2 * mm))
            out[..., :mm, :mm] = phi
            out[..., mm:, mm:] = phi
            out[..., mm:, :mm] = hv
            return -tau[:, None, None, None] * out

        Y, Y0 = _propagate(gen, grid, mids, gidx)
        U = Y[..., :mm, :mm]
        dU = Y[..., mm:, :mm]
        C = Y0[..., :mm, :mm]
        g, wg = _gauss01(opts.gauss_nodes)
        t = tau[:, None] * g[None, :]
        pts = x[:, None, :] + t[:, :, None] * v[:, None, :]
        hv = _field_values(hf, pts)
        integrand = np.linalg.inv(U) @ hv @ dU
        acc = np.einsum("cg,cgpq->cpq", tau[:, None] * wg[None, :], integrand)
        return 2.0 * C @ acc

    out = np.concatenate(_map_batches(one, alpha, beta, opts))
    return out[0] if single else out


def pseudolinearisation_residual(theta_a, theta_b, points, opts: OdeOptions = OdeOptions(), m=None):
    """Frobenius norm of ``C_A C_B^-1 - I - I_{Xi(A,B)}(A - B)`` per chord."""
    fa = _as_field(theta_a, m)
    fb = _as_field(theta_b, fa.m)
    alpha, beta, single = as_angles(points)

    def one(a, b):
        sa = _sweep_batch(fa, a, b, opts)
        sb = _sweep_batch(fb, a, b, opts)
        diff = _field_values(fa, sa.points) - _field_values(fb, sa.points)
        acc = np.einsum("cg,cgpq->cpq", sa.w, sa.Uinv @ diff @ sb.U)
        Cb_inv = np.linalg.inv(sb.C)
        rhs = sa.C @ acc @ Cb_inv
        lhs = sa.C @ Cb_inv - np.eye(fa.m)
        return np.linalg.norm(lhs - rhs, axis=(-2, -1))

    out = np.concatenate(_map_batches(one, alpha, beta, opts))
    return float(out[0]) if single else out


_PADE6 = (1.0, 1.0 / 2, 5.0 / 44, 1.0 / 66, 1.0 / 792, 1.0 / 15840, 1.0 / 665280)


def expm_pade6(A) -> np.ndarray:
    """Matrix exponential by scaling and squaring with the diagonal [6/6] Pade approximant.

    Reference path for tests of the ODE solver; not used by the solver itself.
    """
    A = np.asarray(A, dtype=float)
    norm = np.linalg.norm(A, 1)
    s = max(0, int(math.ceil(math.log2(norm / 0.5))) if norm > 0.5 else 0)
    X = A / 2.0**s
    eye = np.eye(len(A))
    num = np.zeros_like(A)
    den = np.zeros_like(A)
    P = eye.copy()
    for j, c in enumerate(_PADE6):
        num = num + c * P
        den = den + c * (-1) ** j * P
        P = P @ X
    E = np.linalg.solve(den, num)
    for _ in range(s):
        E = E @ E
    return E
