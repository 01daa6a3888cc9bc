"""Linearised water-wave operator about the line soliton, per transverse frequency.

Everything is assembled for the conjugated operator L_a = e^{ax} L e^{-ax}
on an unweighted periodic grid, so no exponential weight is ever stored.
Block layout on (zeta, phi):

    L_a(eta) = [[(d_x - a)(d_c .),  G_{a,eta}[zeta_c]],
                [-w_c,              d_c (d_x - a)   ]]
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .dn_solver import (OperatorMatrix, StripGrid, apply_dn_from_derivative, dn_matrix,
                        flat_dn_matrix, multiplier_matrix, quantize)
from .soliton import (Grid1D, SolitonProfile, build_profile, dpsi_kdv, profile_norms,
                      psi_kdv)
from .symbols import Params, flat_dn_symbol, g_eta_symbol, lambda0_pm


class ContinuationError(RuntimeError):
    """The tracked eigenvalue jumped to a distant cluster."""

    def __init__(self, eta: float, message: str):
        super().__init__(f"continuation failed at eta={eta:.6g}: {message}")
        self.eta = eta


class PairingError(RuntimeError):
    """The mode/dual pairing is numerically degenerate at some eta."""


# ---------------------------------------------------------------------------
# block operators
# ---------------------------------------------------------------------------

@dataclass
class BlockOperator:
    """2x2 block operator acting on (zeta, phi) pairs."""

    b11: OperatorMatrix
    b12: OperatorMatrix
    b21: OperatorMatrix
    b22: OperatorMatrix
    eta: float
    params: Params

    def __post_init__(self):
        n = self.b11.shape[0]
        for b in (self.b11, self.b12, self.b21, self.b22):
            if b.shape != (n, n):
                raise ValueError("inconsistent block dimensions")

    @property
    def n(self) -> int:
        return self.b11.shape[0]

    def matrix(self) -> np.ndarray:
        return np.block([[self.b11.entries, self.b12.entries],
                         [self.b21.entries, self.b22.entries]])

    def apply(self, zeta: np.ndarray, phi: np.ndarray):
        return (self.b11.entries @ zeta + self.b12.entries @ phi,
                self.b21.entries @ zeta + self.b22.entries @ phi)


def _blocks(eta: float, a: float, params: Params, d, w, G: OperatorMatrix,
            grid: Grid1D) -> BlockOperator:
    Dm = multiplier_matrix(1j * grid.xi - a)
    om = lambda e: OperatorMatrix(e, eta=eta, a=a)  # noqa: E731
    return BlockOperator(om(Dm * d[None, :]), G, om(np.diag(-w).astype(complex)),
                         om(d[:, None] * Dm), eta, params)


def _assemble(eta: float, a: float, params: Params, profile: SolitonProfile,
              grids: StripGrid) -> BlockOperator:
    G = dn_matrix(eta, a, profile, grids)
    return _blocks(eta, a, params, profile.d_c, profile.w_c, G, grids.x_grid)


def assemble_La(eta: float, params: Params, profile: SolitonProfile,
                grids: StripGrid) -> BlockOperator:
    """Dense blocks of L_a(eta) with the strip Dirichlet-Neumann matrix in (1, 2)."""
    if profile.grid != grids.x_grid:
        raise ValueError("profile and strip grid must share the same x grid")
    return _assemble(eta, params.a, params, profile, grids)


def assemble_La0(eta: float, params: Params, grid: Grid1D) -> BlockOperator:
    """Constant-coefficient operator [[d_x - a, G_a[0]], [-gamma, d_x - a]]."""
    G = flat_dn_matrix(eta, params.a, grid)
    N = grid.N
    return _blocks(eta, params.a, params, np.ones(N), np.full(N, params.gamma), G, grid)


def la0_symbol(xi, eta: float, params: Params) -> np.ndarray:
    """Per-mode 2x2 symbols of L_a^0, shape (len(xi), 2, 2)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    b = 1j * xi - params.a
    out = np.empty(xi.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = b
    out[..., 0, 1] = flat_dn_symbol(xi, eta, params.a)
    out[..., 1, 0] = -params.gamma
    out[..., 1, 1] = b
    return out


def inverse_id_minus_la0(xi, eta: float, params: Params) -> np.ndarray:
    """Closed form of (Id_2 - L_a^0(xi, eta))^{-1} in terms of lambda0_pm.

    With m_pm = 1 - lambda0_pm the inverse is

        1/(m_+ m_-) [[ (m_+ + m_-)/2,  (m_+ - m_-)/2 * sqrt(-lambda_0/gamma) ],
                     [ -gamma,          (m_+ + m_-)/2 ]]

    where lambda_0 = mu_a tanh mu_a and the square root uses the same branch as
    the one inside lambda0_pm.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    g = params.gamma
    lp = lambda0_pm(xi, eta, params, +1)
    lm = lambda0_pm(xi, eta, params, -1)
    mp, mm = 1.0 - lp, 1.0 - lm
    root = (lp - lm) / 2.0  # sqrt(-gamma lambda_0) on the branch used by lambda0_pm
    off = (mp - mm) / 2.0 * (root / g)  # equals lambda_0
    det = mp * mm
    out = np.empty(xi.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = (mp + mm) / 2.0 / det
    out[..., 0, 1] = off / det
    out[..., 1, 0] = -g / det
    out[..., 1, 1] = (mp + mm) / 2.0 / det
    return out


# ---------------------------------------------------------------------------
# diagonalisation at large transverse frequency
# ---------------------------------------------------------------------------

def _op_g(eta: float, params: Params, profile: SolitonProfile, grid: Grid1D, power: int):
    if profile.is_flat:
        g = math.sqrt(profile.w_c[0]) ** power
        return OperatorMatrix(g * np.eye(grid.N, dtype=complex), eta=eta, a=params.a)
    X, XI = np.meshgrid(grid.x, grid.xi, indexing="ij")
    dz = profile.dzeta_c[:, None] + 0.0 * X
    w = profile.w_c[:, None] + 0.0 * X
    sym = g_eta_symbol(dz, w, XI, eta, params.a) ** power
    return OperatorMatrix(quantize(sym, grid), eta=eta, a=params.a, meta={"power": power})


def diagonalizers(eta: float, params: Params, profile: SolitonProfile, grid: Grid1D) -> dict:
    """P1 = [[1, 1], [Op(g), -Op(g)]], P2 = 1/2 [[1, Op(1/g)], [1, -Op(1/g)]].

    ``residual`` is the spectral norm of P2 P1 - Id on L^2 x L^2.
    """
    if abs(eta) < 2.0:
        raise ValueError(f"diagonalizers need |eta| >= 2 (got {eta}); g_eta may be unbounded")
    Og = _op_g(eta, params, profile, grid, 1).entries
    Oi = _op_g(eta, params, profile, grid, -1).entries
    I = np.eye(grid.N)
    P1 = np.block([[I, I], [Og, -Og]])
    P2 = 0.5 * np.block([[I, Oi], [I, -Oi]])
    residual = float(np.linalg.norm(P2 @ P1 - np.eye(2 * grid.N), 2))
    om = lambda e: OperatorMatrix(e, eta=eta, a=params.a)  # noqa: E731
    return {"P1": om(P1), "P2": om(P2), "residual": residual}


# ---------------------------------------------------------------------------
# generalized kernel
# ---------------------------------------------------------------------------

def _kernel_vectors(profile: SolitonProfile):
    """V0 = (zeta_c', v_c), and V1 through (c d_c zeta_c, d/dx of its second entry).

    The leading-order c-derivatives use c d_c(eps^2) = 2 gamma, so that
    c d_c zeta_c = gamma (2 Psi + t Psi'(t)) with t = eps x and
    c d_c phi_c' = gamma (2 Psi + t Psi'(t)).
    """
    eps = profile.epsilon
    t = eps * profile.grid.x
    phi10 = 2.0 * psi_kdv(t) + t * dpsi_kdv(t)
    gamma = profile.gamma
    v11 = gamma * phi10
    w12 = -profile.grid.derivative(profile.Z_c * v11) + profile.dphi_c + gamma * phi10
    return (profile.dzeta_c, profile.v_c), v11, w12


def kernel_check(params: Params, profile: SolitonProfile, grids: StripGrid) -> dict:
    """Residuals of L(0) V0 = 0 and L(0) V1 = -V0 (untransformed, eta = 0).

    res0 = ||L(0) V0|| / ||V0|| and res1 = ||L(0) V1 + V0|| / ||V0|| in
    L^2 x L^2.  The second entry of V1 tends to different constants at the
    two ends; it enters L(0) only through its derivative, which is what is
    stored.
    """
    if profile.is_flat:
        return {"res0": 0.0, "res1": 0.0, "vacuous": True}
    grid = grids.x_grid
    op = _assemble(0.0, 0.0, params, profile, grids)
    (v01, v02), v11, w12 = _kernel_vectors(profile)
    r0a, r0b = op.apply(v01.astype(complex), v02.astype(complex))
    norm0 = math.hypot(np.linalg.norm(v01), np.linalg.norm(v02))
    D = multiplier_matrix(1j * grid.xi)
    r1a = D @ (profile.d_c * v11) + apply_dn_from_derivative(w12, profile, grids) + v01
    r1b = -profile.w_c * v11 + profile.d_c * w12 + v02
    return {"res0": math.hypot(np.linalg.norm(r0a), np.linalg.norm(r0b)) / norm0,
            "res1": math.hypot(np.linalg.norm(r1a), np.linalg.norm(r1b)) / norm0,
            "vacuous": False}


def ls_coefficients(params: Params, grids) -> dict:
    """Leading-order Lyapunov-Schmidt constants from the soliton norms.

    Lambda1 = 1/sqrt(3), Lambda2 = l1^2 / (9 l2sq), kappa0 = -l1^2 / (18 l2sq)
    with l1 = ||Psi||_{L^1} and l2sq = ||Psi||_{L^2}^2.
    """
    grid = grids.x_grid if isinstance(grids, StripGrid) else grids
    n = profile_norms(params.epsilon, grid)
    ratio = n["l1_v0"] ** 2 / n["l2sq_v0"]
    return {"Lambda1": 1.0 / math.sqrt(3.0), "Lambda2": ratio / 9.0, "kappa0": -ratio / 18.0}


# ---------------------------------------------------------------------------
# resonant-mode continuation
# ---------------------------------------------------------------------------

@dataclass
class ModeCurve:
    """Traced branch lambda(eta) of the resonant pair.

    ``subspaces[i]`` is a real orthonormal basis (2N x 2) of the invariant
    subspace of the whole pair at ``eta_samples[i]``; ``conditions[i]`` is
    the eigenvalue condition number used to weight the fit.
    """

    eta_samples: np.ndarray
    lambda_samples: np.ndarray
    mode_vectors: list
    fitted: dict
    residuals: np.ndarray
    conditions: np.ndarray
    subspaces: list
    params: Params
    grid: Grid1D = None
    meta: dict = field(default_factory=dict)

    def conjugate_defect(self) -> float:
        """max |lambda(-eta) - conj(lambda(eta))| over mirrored samples."""
        worst = 0.0
        for i, e in enumerate(self.eta_samples):
            j = np.flatnonzero(np.isclose(self.eta_samples, -e, rtol=0, atol=1e-15))
            if j.size:
                worst = max(worst, abs(self.lambda_samples[j[0]] - np.conj(self.lambda_samples[i])))
        return float(worst)

    def rows(self):
        for e, lam, r in zip(self.eta_samples, self.lambda_samples, self.residuals):
            yield {"eta": float(e), "re_lambda": float(lam.real), "im_lambda": float(lam.imag),
                   "residual": float(r)}

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=["eta", "re_lambda", "im_lambda", "residual"])
            wr.writeheader()
            for row in self.rows():
                wr.writerow({k: repr(v) for k, v in row.items()})


def kernel_seed(profile: SolitonProfile, a: float) -> np.ndarray:
    """e^{ax} V0 stacked as one vector: the translation mode of L_a(0)."""
    ex = np.exp(a * profile.grid.x)
    return np.concatenate([ex * profile.dzeta_c, ex * profile.v_c]).astype(complex)


def _block_inverse_iteration(lu, A, sigma, m, trans, iterations, v0, rng):
    n = A.shape[0]
    V = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    if v0 is not None:
        V[:, 0] = v0
    for _ in range(iterations):
        V, _ = np.linalg.qr(sla.lu_solve(lu, V, trans=trans))
    B = A.T if trans else A
    vals, W = np.linalg.eig(V.conj().T @ B @ V)
    order = np.argsort(np.abs(vals - sigma))
    X = V @ W[:, order]
    return vals[order], X / np.linalg.norm(X, axis=0)


def _eig_near(A: np.ndarray, sigma: complex, k: int, v0=None, iterations: int = 12):
    """k eigenpairs of A nearest sigma by shift-invert block iteration.

    Returns Ritz values, right vectors, matching left vectors (A^T y = lambda y)
    and all Ritz values of the search block (for the gap test).
    """
    n = A.shape[0]
    lu = sla.lu_factor(A - sigma * np.eye(n))
    m = k + 4
    vals, X = _block_inverse_iteration(lu, A, sigma, m, 0, iterations, v0,
                                       np.random.default_rng(0))
    lvals, Y = _block_inverse_iteration(lu, A, sigma, m, 1, iterations, None,
                                        np.random.default_rng(1))
    right = [X[:, j] for j in range(k)]
    left = [Y[:, int(np.argmin(np.abs(lvals - vals[j])))] for j in range(k)]
    return vals[:k], right, left, vals


def _real_span(vectors) -> np.ndarray:
    """Orthonormal real basis (n x 2) of the conjugation-closed span of a pair."""
    cols = np.column_stack([f(v) for v in vectors for f in (np.real, np.imag)])
    U, _, _ = np.linalg.svd(cols, full_matrices=False)
    return U[:, :2]


def _is_real_pair(lams: np.ndarray) -> bool:
    """A conjugate pair differs along the imaginary axis, a real pair along the real one."""
    diff = lams[0] - lams[1]
    return abs(diff.imag) <= 0.5 * abs(diff)


def _pick_branch(lams: np.ndarray, positive: bool) -> int:
    """Member of the pair on the branch: larger imaginary part for eta > 0,
    smaller for eta < 0; a real pair is resolved by the larger real part."""
    if _is_real_pair(lams):
        return int(np.argmax(lams.real))
    return int(np.argmax(lams.imag) if positive else np.argmin(lams.imag))


def fit_expansion(eta: np.ndarray, lam: np.ndarray, weights: np.ndarray, epsilon: float) -> dict:
    """Weighted least squares of lambda against i eps L1 eta - L2 eta^2 / eps.

    The two unknowns decouple into the imaginary and real parts.
    """
    eta, lam, w = map(np.asarray, (eta, lam, weights))
    keep = (eta != 0) & (w > 0)
    eta, lam, w = eta[keep], lam[keep], w[keep]
    if eta.size == 0:
        raise ValueError("no nonzero eta samples to fit")
    L1 = float(np.sum(w * eta * lam.imag) / (epsilon * np.sum(w * eta**2)))
    L2 = float(-epsilon * np.sum(w * eta**2 * lam.real) / np.sum(w * eta**4))
    model = 1j * epsilon * L1 * eta - L2 * eta**2 / epsilon
    res = float(np.sqrt(np.sum(w * np.abs(lam - model) ** 2) / np.sum(w)))
    return {"Lambda1": L1, "Lambda2": L2, "fit_residual": res, "samples": int(eta.size)}


def trace_resonant_modes(params: Params, eta_list, grids: StripGrid,
                         profile: SolitonProfile | None = None, step: float | None = None,
                         max_halvings: int = 3, separation: float = 4.0) -> ModeCurve:
    """Continue the resonant eigenvalue of L_a(eta) from the kernel at eta = 0.

    L_a depends on eta only through eta^2, so each |eta| is assembled once and
    the two signs pick the two members of the pair.  A step is accepted when
    branch member is at least ``separation`` times closer to the target than
    the nearest eigenvalue outside the pair; otherwise an intermediate eta is inserted (at most
    ``max_halvings`` times).
    """
    eps = params.epsilon
    eta_max = eps**2 * params.eta_hat0
    eta_list = np.asarray(sorted(set(float(e) for e in eta_list)))
    if eta_list.size == 0 or not np.any(eta_list == 0.0):
        raise ValueError("eta_list must contain 0")
    if np.max(np.abs(eta_list)) > eta_max * (1 + 1e-12):
        raise ValueError(f"eta_list must lie in [-{eta_max:.6g}, {eta_max:.6g}]")
    if profile is None:
        profile = build_profile(eps, grids.x_grid)
    step = eta_max / 16.0 if step is None else float(step)
    a = params.a
    seed = kernel_seed(profile, a)
    mags = np.unique(np.abs(eta_list))
    cache = {}

    realness = [0.0]

    def solve_at(e, target, v0):
        A = _assemble(e, a, params, profile, grids).matrix()
        realness[0] = max(realness[0], float(np.abs(A.imag).max() / np.abs(A).max()))
        lams, right, left, ritz = _eig_near(A, target, 2, v0)
        if abs(lams[0].imag) > 0.05 * abs(lams[0]):
            # complex pair: L_a(eta) maps real functions to real functions, so the
            # partner is the exact conjugate of the Ritz value nearest the target
            lams = np.array([lams[0], np.conj(lams[0])])
            right = [right[0], np.conj(right[0])]
            left = [left[0], np.conj(left[0])]
        others = np.abs(ritz[2:] - target)
        gap = float(others.min()) if others.size else np.inf
        near = float(abs(lams[_pick_branch(lams, True)] - target))
        return A, lams, right, left, gap, near

    target, prev_vec, prev_e = 0.0 + 0.0j, seed, 0.0
    for e in mags:
        # intermediate stations at the default step, each accepted or halved
        stations = list(np.arange(prev_e + step, e, step)) + [e] if e > 0 else [0.0]
        for st in stations:
            h = st - prev_e
            for attempt in range(max_halvings + 1):
                A, lams, right, left, gap, near = solve_at(st, target, prev_vec)
                if near * separation <= gap or st == 0.0:
                    break
                if attempt == max_halvings:
                    raise ContinuationError(st, f"pair distance {near:.3e} vs gap {gap:.3e}")
                h /= 2.0
                mid = prev_e + h
                _, ml, mr, _, _, _ = solve_at(mid, target, prev_vec)
                j = _pick_branch(ml, True)
                target, prev_vec = ml[j], mr[j]
            j = _pick_branch(lams, True)
            target, prev_vec, prev_e = lams[j], right[j], st
        cache[e] = (A, lams, right, left)

    ref = seed.real
    out_eta, out_lam, out_vec, out_res, out_cond, out_sub = [], [], [], [], [], []
    for e in eta_list:
        A, lams, right, left = cache[abs(e)]
        jp = _pick_branch(lams, True)
        if e < 0:
            j = int(np.argmin(np.abs(lams - np.conj(lams[jp]))))
        else:
            j = jp
        x, y, lam = right[j], left[j], lams[j]
        x = x / (ref @ x) if abs(ref @ x) > 1e-300 else x
        res = float(np.linalg.norm(A @ x - lam * x) / np.linalg.norm(x))
        xs = x / np.linalg.norm(x)
        cond = float(1.0 / max(abs(y @ xs), 1e-300))
        out_eta.append(e)
        out_lam.append(lam)
        out_vec.append(x)
        out_res.append(res)
        out_cond.append(cond)
        out_sub.append(_real_span(right))
    out_eta = np.array(out_eta)
    out_lam = np.array(out_lam)
    cond = np.array(out_cond)
    window = np.abs(out_eta) <= eta_max / 2.0 * (1 + 1e-12)
    weights = np.where(window, 1.0 / cond**2, 0.0)
    fitted = fit_expansion(out_eta, out_lam, weights, eps)
    return ModeCurve(out_eta, out_lam, out_vec, fitted, np.array(out_res), cond, out_sub, params,
                     grids.x_grid, meta={"step": step, "weights": "1/condition^2",
                                         "fit_window": eta_max / 2.0,
                                         "imag_part_of_matrix": realness[0]})


# ---------------------------------------------------------------------------
# spectral projection onto the resonant band
# ---------------------------------------------------------------------------

@dataclass
class ProjectorPair:
    """Per-eta projectors P(eta) onto the resonant pair and Q = Id - P.

    ``basis[i]`` and ``dual[i]`` are real (2N x 2) arrays with
    h * basis^T dual = Id (bilinear L^2 pairing).  ``gram[i]`` is the 2x2
    pairing of the basis with the unnormalised swap-reflected duals, i.e.
    the renormalisation that was applied.  Outside |eta| <= eta0, P = 0.
    """

    P: list
    Q: list
    eta_samples: np.ndarray
    eta0: float
    basis: list
    dual: list
    gram: list
    h: float

    def index(self, eta: float) -> int:
        j = int(np.argmin(np.abs(self.eta_samples - eta)))
        if abs(self.eta_samples[j] - eta) > 1e-14:
            raise KeyError(f"eta={eta} is not a projector sample")
        return j

    def project(self, eta: float, state: np.ndarray, complement: bool = False) -> np.ndarray:
        j = self.index(eta)
        op = self.Q[j] if complement else self.P[j]
        return op.entries @ state

    def biorthogonality_defect(self) -> float:
        worst = 0.0
        for B, C in zip(self.basis, self.dual):
            if B is None:
                continue
            worst = max(worst, float(np.abs(self.h * B.T @ C - np.eye(2)).max()))
        return worst

    def idempotency_defect(self) -> float:
        worst = 0.0
        for Pm in self.P:
            E = Pm.entries
            worst = max(worst, float(np.linalg.norm(E @ E - E, 2)))
        return worst


def swap_reflect(v: np.ndarray, grid: Grid1D) -> np.ndarray:
    """(v1, v2)(x) -> (v2, v1)(-x) for stacked vectors (2N,) or (2N, k)."""
    n = grid.N
    r = grid.reflect_index()
    return np.concatenate([v[n:][r], v[:n][r]], axis=0)


def spectral_projection(eta0: float, curve: ModeCurve, params: Params, grids,
                        max_condition: float = 1e8) -> ProjectorPair:
    """Rank-two projectors built from the traced pair and the swap-reflected duals.

    The dual of a mode U(x) = (U1, U2)(x) is (U2, U1)(-x); under the bilinear
    pairing sum_j f_j g_j h it annihilates the rest of the spectrum.  The duals
    are renormalised by the inverse Gram matrix so biorthogonality is exact.
    """
    grid = grids.x_grid if isinstance(grids, StripGrid) else grids
    eta = np.asarray(curve.eta_samples)
    if np.min(eta) > -eta0 * (1 - 1e-12) or np.max(eta) < eta0 * (1 - 1e-12):
        raise ValueError("the traced curve must cover [-eta0, eta0]")
    n2 = 2 * grid.N
    h = grid.h
    Ps, Qs, bases, duals, grams = [], [], [], [], []
    I = np.eye(n2)
    for e, B in zip(eta, curve.subspaces):
        if abs(e) > eta0 * (1 + 1e-12):
            Z = np.zeros((n2, n2))
            Ps.append(OperatorMatrix(Z, eta=float(e), a=params.a))
            Qs.append(OperatorMatrix(I.copy(), eta=float(e), a=params.a))
            bases.append(None)
            duals.append(None)
            grams.append(None)
            continue
        C = swap_reflect(B, grid)
        M = h * B.T @ C
        if np.linalg.cond(M) > max_condition:
            raise PairingError(f"degenerate mode/dual pairing at eta={e:.6g} "
                               f"(condition {np.linalg.cond(M):.3e})")
        Cn = C @ np.linalg.inv(M)
        Pm = h * B @ Cn.T
        Ps.append(OperatorMatrix(Pm, eta=float(e), a=params.a))
        Qs.append(OperatorMatrix(I - Pm, eta=float(e), a=params.a))
        bases.append(B)
        duals.append(Cn)
        grams.append(M)
    return ProjectorPair(Ps, Qs, eta, float(eta0), bases, duals, grams, h)
