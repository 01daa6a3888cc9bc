"""Linearised KP-II operator about the KdV line soliton, in the e^{a x} frame.

Variables here are the long-wave ones (x_hat = eps x, eta_hat = eta / eps^2).
Per transverse frequency eta the transformed operator is

    L_KP^a(eta) = (d_x - a)(1 - (d_x - a)^2 / 3 - 3 Psi .) + eta^2 (d_x - a)^{-1},

whose (d_x - a)^{-1} is the bounded multiplier 1 / (i xi - a).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .dn_solver import OperatorMatrix, StripGrid, dn_matrix, multiplier_matrix
from .soliton import Grid1D, SolitonProfile, build_profile, dpsi_kdv, psi_kdv
from .symbols import A_HAT_MAX, Params, SweepReport, flat_dn_symbol

SQRT3 = math.sqrt(3.0)
# g_01(., 0) = v0' fixes the scale of the explicit mode: d^2/dxt^2 (1 - tanh) = 2 sech^2 tanh
MODE_SCALE = -SQRT3 / 4.0
# scales that make the odd combination and the two dual combinations tend to the
# closed eta = 0 limits; they absorb the x versus x_tilde = (sqrt 3 / 2) x rescaling
G02_SCALE = SQRT3 / 2.0
DUAL_SCALES = (-2.0, -4.0 / SQRT3)


class ModeNotRepresentable(ValueError):
    """The explicit mode grows at -infinity faster than the weight decays."""


@dataclass
class KpOperator:
    matrix: OperatorMatrix
    eta: float
    a_hat: float


def _check_a_hat(a_hat: float) -> None:
    if not 0.0 < a_hat < A_HAT_MAX:
        raise ValueError(f"a_hat must lie in (0, sqrt(3)/4), got {a_hat}")


def kp_symbol(xi, eta: float, a_hat: float):
    """Free symbol i k + i k^3 / 3 + eta^2 / (i k) with k = xi + i a_hat."""
    k = np.asarray(xi, dtype=float) + 1j * a_hat
    return 1j * k + 1j * k**3 / 3.0 + eta**2 / (1j * k)


def assemble_kp(eta: float, a_hat: float, grid: Grid1D) -> KpOperator:
    _check_a_hat(a_hat)
    free = multiplier_matrix(kp_symbol(grid.xi, eta, a_hat))
    D = multiplier_matrix(1j * grid.xi - a_hat)
    M = free - 3.0 * D * psi_kdv(grid.x)[None, :]
    return KpOperator(OperatorMatrix(M, eta=eta, a=a_hat, meta={"kind": "kp"}), float(eta),
                      float(a_hat))


# ---------------------------------------------------------------------------
# explicit resonant modes
# ---------------------------------------------------------------------------

def _root(eta: float, sign: int = 1) -> complex:
    return complex(np.sqrt(1.0 + sign * 4j * eta / 3.0))


def admissible(eta: float, a_hat: float) -> bool:
    """Growth of the mode at -infinity (x_tilde units) beaten by the weight with 10% room."""
    return _root(eta).real - 1.0 < (2.0 / SQRT3) * a_hat * 0.9


def _g0(x, eta: float) -> np.ndarray:
    """(1/r) d^2/dxt^2 (e^{-r xt} sech xt), r = sqrt(1 + 4i eta/3), in closed form."""
    r = _root(eta)
    xt = SQRT3 / 2.0 * np.asarray(x, dtype=float)
    th = np.tanh(xt)
    # e^{-r xt} sech xt written as exp(-(r-1) xt) * 2 / (1 + e^{2 xt}) without overflow
    f = np.exp(-(r - 1.0) * xt - np.logaddexp(0.0, 2.0 * xt) + math.log(2.0))
    # (e^{-r t} sech t)'' = e^{-r t} sech t * ((r + tanh t)^2 - sech^2 t)
    return f * ((r + th) ** 2 - (1.0 - th**2)) / r


def _g0_star(x, eta: float) -> np.ndarray:
    """(3i/(8 eta)) d/dxt (e^{r* xt} sech xt), r* = sqrt(1 - 4i eta/3)."""
    rs = _root(eta, -1)
    xt = SQRT3 / 2.0 * np.asarray(x, dtype=float)
    th = np.tanh(xt)
    f = np.exp((rs + 1.0) * xt - np.logaddexp(0.0, 2.0 * xt) + math.log(2.0))
    return 3j / (8.0 * eta) * f * (rs - th)


def _rayleigh(M: np.ndarray, g: np.ndarray) -> complex:
    return complex(np.vdot(g, M @ g) / np.vdot(g, g))


def explicit_modes(eta: float, a_hat: float, grid: Grid1D) -> dict:
    """Transformed explicit mode e^{a x} g0, its dual e^{-a x} g0*, and the
    Rayleigh quotient of the assembled operator on the sampled mode."""
    _check_a_hat(a_hat)
    if not admissible(eta, a_hat):
        raise ModeNotRepresentable(
            f"mode growth {_root(eta).real - 1.0:.4g} exceeds the weight at eta={eta}, a={a_hat}")
    x = grid.x
    g0 = np.exp(a_hat * x) * _g0(x, eta) * MODE_SCALE
    g0s = None if eta == 0 else np.exp(-a_hat * x) * _g0_star(x, eta)
    M = assemble_kp(eta, a_hat, grid).matrix.entries
    return {"g0": g0, "g0_star": g0s, "lambda_kp": _rayleigh(M, g0)}


def kp_eigenvalue_closed_form(eta: float) -> complex:
    """(2 i eta / sqrt 3) sqrt(1 + 4 i eta / 3): the L_KP eigenvalue 2 Lambda."""
    return 2j * eta / SQRT3 * _root(eta)


def expansion_fit(etas, lambdas) -> dict:
    """Im lambda ~ c1 eta + c3 eta^3 and Re lambda ~ c2 eta^2 + c4 eta^4."""
    e = np.asarray(etas, dtype=float)
    lam = np.asarray(lambdas)
    ci = np.linalg.lstsq(np.column_stack([e, e**3]), lam.imag, rcond=None)[0]
    cr = np.linalg.lstsq(np.column_stack([e**2, e**4]), lam.real, rcond=None)[0]
    return {"linear": float(ci[0]), "quadratic": float(cr[0]), "cubic": float(ci[1]),
            "quartic": float(cr[1])}


def _phi10(x):
    return 2.0 * psi_kdv(x) + x * dpsi_kdv(x)


def _phi10_primitive(x):
    """int_{-inf}^x (2 Psi + t Psi') dt = int_{-inf}^x Psi + x Psi(x)."""
    x = np.asarray(x, dtype=float)
    return 2.0 / SQRT3 * (1.0 + np.tanh(SQRT3 * x / 2.0)) + x * psi_kdv(x)


def kp_basis(eta: float, a_hat: float, grid: Grid1D) -> dict:
    """Transformed basis g01, g02 and dual basis g01*, g02*.

    At eta = 0 the closed limits are used.  Otherwise the even/odd
    combinations of the explicit modes are formed, scaled by ``G02_SCALE``
    and ``DUAL_SCALES`` so that they tend to those limits, and the duals are
    renormalised by the inverse of their 2x2 pairing with the basis; the
    pairing before renormalisation is returned as ``gram`` (identity plus
    O(eta^2)).
    """
    _check_a_hat(a_hat)
    x = grid.x
    ep, em = np.exp(a_hat * x), np.exp(-a_hat * x)
    if eta == 0.0:
        v0p = dpsi_kdv(x)
        p10 = _phi10(x)
        g01 = v0p
        g02 = -v0p / SQRT3 - p10 / 2.0
        g01s = -SQRT3 / 4.0 * _phi10_primitive(x)
        g02s = -SQRT3 / 2.0 * psi_kdv(x)
        gram = np.eye(2)
    else:
        if not admissible(eta, a_hat) or not admissible(-eta, a_hat):
            raise ModeNotRepresentable(f"eta={eta} outside the admissible window for a={a_hat}")
        gp, gm = _g0(x, eta) * MODE_SCALE, _g0(x, -eta) * MODE_SCALE
        sp, sm = _g0_star(x, eta), _g0_star(x, -eta)
        g01 = gp + gm
        g02 = G02_SCALE * (gp - gm) / (1j * eta)
        g01s = DUAL_SCALES[0] * 0.5 * (sp + sm)
        g02s = DUAL_SCALES[1] * eta / 2j * (sp - sm)
        B = np.column_stack([ep * g01, ep * g02])
        C = np.column_stack([em * g01s, em * g02s])
        gram = grid.h * B.T @ C
        C = C @ np.linalg.inv(gram)
        return {"g01": B[:, 0], "g02": B[:, 1], "g01_star": C[:, 0], "g02_star": C[:, 1],
                "gram": gram}
    return {"g01": ep * g01, "g02": ep * g02, "g01_star": em * g01s, "g02_star": em * g02s,
            "gram": gram}


def kp_projector(eta: float, a_hat: float, grid: Grid1D) -> np.ndarray:
    b = kp_basis(eta, a_hat, grid)
    B = np.column_stack([b["g01"], b["g02"]])
    C = np.column_stack([b["g01_star"], b["g02_star"]])
    C = C @ np.linalg.inv(grid.h * B.T @ C)
    return grid.h * B @ C.T


# ---------------------------------------------------------------------------
# resolvent bound
# ---------------------------------------------------------------------------

def kp_resolvent_bound(lambda_grid, eta0: float, a_hat: float, grid: Grid1D,
                       eta_samples=None, project: bool = True) -> SweepReport:
    """sup over Lambda and eta of ||(2 Lambda - L_KP^a(eta))^{-1}|| on range(Q).

    range(Q) = ker(P) is spanned by an orthonormal basis of the annihilator of
    the dual modes; since the operator commutes with Q, the restricted
    inverse norm is 1 / sigma_min of the operator on that basis.
    """
    lams = np.atleast_1d(np.asarray(lambda_grid, dtype=complex))
    etas = np.linspace(-eta0, eta0, 5) if eta_samples is None else np.asarray(eta_samples)
    worst, where = 0.0, {}
    for e in etas:
        M = assemble_kp(float(e), a_hat, grid).matrix.entries
        n = M.shape[0]
        if project and abs(e) <= eta0 * (1 + 1e-12):
            Pm = kp_projector(float(e), a_hat, grid)
            basis = sla.null_space(Pm)
        else:
            basis = np.eye(n)
        MB = M @ basis
        for lam in lams:
            A = 2.0 * lam * basis - MB
            s = np.linalg.svd(A, compute_uv=False)[-1]
            val = np.inf if s == 0 else 1.0 / s
            if val >= worst:
                worst, where = val, {"re_Lambda": float(lam.real), "im_Lambda": float(lam.imag),
                                     "eta": float(e)}
    return SweepReport("kp-resolvent", f"{lams.size} Lambda x {len(etas)} eta, project={project}",
                       min_margin=float(1.0 / worst) if worst > 0 else np.inf,
                       worst_point=where, violations=0, pass_=bool(np.isfinite(worst)),
                       extra={"sup_inverse_norm": float(worst)})


# ---------------------------------------------------------------------------
# the KP bridge
# ---------------------------------------------------------------------------

def smooth_cutoff(xi_hat, K: float) -> np.ndarray:
    """C-infinity cutoff: 1 for |xi_hat| <= 4K, 0 for |xi_hat| >= 8K."""
    t = (np.abs(np.asarray(xi_hat, dtype=float)) - 4.0 * K) / (4.0 * K)
    t = np.clip(t, 0.0, 1.0)
    bump = lambda s: np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)  # noqa: E731
    return bump(1.0 - t) / (bump(1.0 - t) + bump(t))


def _mu_branch(xi, eta, a):
    """sqrt((xi + i a)^2 + eta^2) on the branch continuous with xi + i a."""
    k = np.asarray(xi, dtype=float) + 1j * a
    return k * np.sqrt(1.0 + eta**2 / k**2)


def _s_symbol(xi, eta, a, gamma):
    """s = sqrt(-G_a[0] / gamma) on the branch making lambda0_+ = i(xi + i a) + gamma s small."""
    mu = _mu_branch(xi, eta, a)
    ratio = np.tanh(mu) / mu
    return -1j * mu * np.sqrt(ratio / gamma)


def kp_approx_parts(params: Params, grids: StripGrid, eta_hats=(0.0, 0.5, 1.0),
                    flat: bool = False, K: float | None = None,
                    r11_z_sign: float = 1.0) -> dict:
    """Pieces of the low-frequency KP identity at Lambda = 0, each divided by eps^3.

    total:       ||(-lambda0_+(D) - R11) chi - (eps^3/2)(-L_KP^a) chi||
    free:        ||(-lambda0_+(D) + (eps^3/2) Lambda_KP0(D)) chi||
    interaction: ||(-R11 - (3 eps^3/2)(d_x - a)(Psi .)/eps) chi||

    The operators act in the physical variable x; chi is the smooth cutoff
    between eps*4K and eps*8K.  R11 is the (1, 1) block of
    P^{-1}(L_a - L_a^0) P with P^{-1} = 1/2 [[1, -s], [1, s]], formed from the
    assembled matrices.  ``r11_z_sign = -1`` flips the sign of the
    s (d_c Z_c') contribution, for comparison with the other sign.  ``flat``
    replaces the soliton by zero.  Each piece is maximised over ``eta_hats``.
    """
    eps = params.epsilon
    K = params.K if K is None else float(K)
    if K**4 * eps > 1.0:
        raise ValueError(f"K^4 eps = {K**4 * eps:.3g} > 1")
    grid = grids.x_grid
    a = params.a
    gamma = params.gamma
    xi = grid.xi
    if np.max(np.abs(xi)) / eps < 8.0 * K:
        raise ValueError("grid does not resolve the cutoff band 8K/eps")
    Chi = multiplier_matrix(smooth_cutoff(xi / eps, K))
    profile = SolitonProfile.flat(grid, eps) if flat else build_profile(eps, grid)
    D = multiplier_matrix(1j * xi - a)
    psi = np.zeros(grid.N) if flat else psi_kdv(eps * grid.x)
    pot = (3.0 / eps) * D * psi[None, :]
    out = {"total": 0.0, "free": 0.0, "interaction": 0.0}
    for eh in eta_hats:
        eta = eps**2 * eh
        s = _s_symbol(xi, eta, a, gamma)
        lam_plus = multiplier_matrix(1j * (xi + 1j * a) + gamma * s)
        free = multiplier_matrix(kp_symbol(xi / eps, eh, a / eps))
        if flat:
            R11 = np.zeros((grid.N, grid.N), dtype=complex)
        else:
            G = dn_matrix(eta, a, profile, grids).entries
            G0 = multiplier_matrix(flat_dn_symbol(xi, eta, a))
            S, Si = multiplier_matrix(s), multiplier_matrix(1.0 / s)
            v, w = profile.v_c, profile.w_c
            L11 = -D * v[None, :]
            L12 = G - G0
            L21 = np.diag(gamma - w)
            L22 = -v[:, None] * D
            # (1,1) block of P^{-1} L1 P with P = [[1, 1], [-1/s, 1/s]]
            R11 = 0.5 * (L11 - L12 @ Si - r11_z_sign * S @ L21 + S @ L22 @ Si)
        lhs = (-lam_plus - R11) @ Chi
        rhs = -(eps**3 / 2.0) * (free - pot) @ Chi
        parts = {"total": lhs - rhs,
                 "free": (-lam_plus + (eps**3 / 2.0) * free) @ Chi,
                 "interaction": (-R11 - (eps**3 / 2.0) * pot) @ Chi}
        for k, M in parts.items():
            out[k] = max(out[k], float(np.linalg.norm(M, 2)) / eps**3)
    return out


def kp_approx_residual(params: Params, grids: StripGrid, eta_hats=(0.0, 0.5, 1.0),
                       flat: bool = False, K: float | None = None) -> float:
    """||R|| / eps^3 for the low-frequency KP identity at Lambda = 0.

    R = (-lambda0_+(D) - R11) chi - (eps^3 / 2)(-L_KP^a) chi; see
    :func:`kp_approx_parts` for the construction.  ``flat`` replaces the
    soliton by zero, which isolates the free-symbol expansion error.
    """
    return kp_approx_parts(params, grids, eta_hats, flat, K)["total"]
