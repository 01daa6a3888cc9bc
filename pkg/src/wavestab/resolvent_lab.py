"""Resolvent sweeps, semigroup traces, energy functionals and commutator bounds.

All norms are taken in X = L^2 x H^{1/2}_*: the second component is weighted
in Fourier space by the ``Hhalf_star`` weight of :mod:`wavestab.dn_solver`.
Matrices act on stacked (zeta, phi) samples of length 2N, one transverse
frequency eta at a time.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .dn_solver import StripGrid, multiplier_matrix, to_fourier, weights_for
from .soliton import Grid1D, SolitonProfile
from .symbols import (Params, RegionTag, branch_sqrt, flat_dn_symbol, in_singular_set, mu_a,
                      stable_tanh)
from .waveop import ProjectorPair, assemble_La

X_TAGS = ("L2", "Hhalf_star")


class ProjectionContaminationError(ValueError):
    """Initial data has a resonant component above the tolerance."""


class BandMismatchError(ValueError):
    """A state is not localised in the frequency band of the requested functional."""


# ---------------------------------------------------------------------------
# weighted Fourier coordinates
# ---------------------------------------------------------------------------

def _x_weights(grid: Grid1D, eta: float, a: float) -> np.ndarray:
    return weights_for(X_TAGS, grid.xi, eta, a, 2)


def _unitary_fft(v: np.ndarray) -> np.ndarray:
    n = v.shape[0] // 2
    return np.concatenate([np.fft.fft(v[:n], axis=0), np.fft.fft(v[n:], axis=0)]) / math.sqrt(n)


def x_norm(v: np.ndarray, grid: Grid1D, eta: float, a: float) -> float:
    """X-norm of a stacked pair, scaled so that it approximates the integral norm."""
    return float(np.linalg.norm(_x_weights(grid, eta, a) * _unitary_fft(v)) * math.sqrt(grid.h))


def weighted_matrix(L: np.ndarray, grid: Grid1D, eta: float, a: float) -> np.ndarray:
    """W F L F^{-1} W^{-1}: L in orthonormal coordinates of X."""
    w = _x_weights(grid, eta, a)
    return w[:, None] * to_fourier(L, 2) / w[None, :]


def sigma_min(B: np.ndarray, iterations: int = 60, tol: float = 1e-10, seed: int = 0) -> float:
    """Smallest singular value of a tall or square matrix.

    ||B^{-1}|| is found by power iteration on B^{-1} B^{-H}.  A square matrix
    is LU factorised; a tall one is first reduced to its triangular QR
    factor R, which has the same singular values.
    """
    m, n = B.shape
    if m == n:
        lu = sla.lu_factor(B, check_finite=False)
        if np.abs(np.diag(lu[0])).min() == 0.0:
            return 0.0

        def inv_gram(x):
            return sla.lu_solve(lu, sla.lu_solve(lu, x, trans=2))
    else:
        R = sla.qr(B, mode="r")[0][:n]
        if np.abs(np.diag(R)).min() == 0.0:
            return 0.0

        def inv_gram(x):
            return sla.solve_triangular(R, sla.solve_triangular(R, x, trans="C"))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iterations):
        y = inv_gram(x)
        new = float(np.linalg.norm(y))
        if not np.isfinite(new):
            return 0.0
        x = y / new
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return 1.0 / math.sqrt(est)


# ---------------------------------------------------------------------------
# bands
# ---------------------------------------------------------------------------

LOW_BANDS = (RegionTag.L_low, RegionTag.L_high)


def band_eta_samples(band: RegionTag, params: Params, n: int = 4) -> np.ndarray:
    """Default non-negative transverse frequencies representing a band."""
    eps = params.epsilon
    lo = params.A * eps**2
    if band == RegionTag.UH:
        return np.array([2.0, 3.0, 5.0, 8.0])[:n]
    if band in (RegionTag.I, RegionTag.S_sing, RegionTag.R_reg):
        return np.geomspace(lo, 2.0, n + 1)[:-1]
    if band in LOW_BANDS:
        return np.linspace(0.0, 0.9 * lo, n)
    raise ValueError(f"unknown band {band!r}")


def band_mask(band: RegionTag, xi: np.ndarray, eta: float, params: Params) -> np.ndarray:
    """Fourier modes (in FFT order) that belong to the band at this eta."""
    eps = params.epsilon
    inter = params.A * eps**2 <= abs(eta) < 2.0
    everything = np.ones(xi.shape, dtype=bool)
    if band in (RegionTag.UH, RegionTag.I, RegionTag.L_low):
        return everything
    if band == RegionTag.L_high:
        return np.abs(xi) >= params.K * eps
    sing = inter & in_singular_set(xi, eta, params)
    if band == RegionTag.S_sing:
        return sing
    if band == RegionTag.R_reg:
        return inter & ~sing & (np.abs(xi) <= params.delta)
    raise ValueError(f"unknown band {band!r}")


def predicted_bound(band: RegionTag, params: Params, C0: float = 1.0) -> float:
    """Order of the resolvent bound in each band (constants set to one)."""
    eps = params.epsilon
    if band == RegionTag.UH:
        return 1.0 / eps
    if band in (RegionTag.I, RegionTag.S_sing, RegionTag.R_reg):
        return 1.0 / (params.A * eps**3)
    if band == RegionTag.L_high:
        return 1.0 / (params.K**2 * eps**3)
    if band == RegionTag.L_low:
        return float(C0)
    raise ValueError(f"unknown band {band!r}")


def omega_grid(params: Params, im_max: float, n_im: int = 41, n_re: int = 3,
               re_max: float = 1.0) -> np.ndarray:
    """Rectangle Re lambda in [-beta eps^3/2, re_max], |Im lambda| <= im_max."""
    re = np.linspace(-params.beta * params.epsilon**3 / 2.0, re_max, n_re)
    im = np.linspace(-im_max, im_max, n_im)
    return (re[:, None] + 1j * im[None, :]).ravel()


# ---------------------------------------------------------------------------
# resolvent sweeps
# ---------------------------------------------------------------------------

@dataclass
class ResolventReport:
    """Resolvent norms over a lambda grid for one frequency band.

    ``norms[k]`` is the largest of 1/sigma_min over the band's eta samples at
    ``lambda_grid[k]``; ``detected`` lists (lambda, eta) where lambda - L_a
    was numerically singular on the band (an eigenvalue on the grid).
    """

    region: str
    lambda_grid: np.ndarray
    norms: np.ndarray
    sup_norm: float
    predicted_bound: float
    pass_: bool
    safety_factor: float
    eta_samples: np.ndarray
    worst_lambda: complex
    worst_eta: float
    projected: bool
    detected: list = field(default_factory=list)
    norms_by_eta: np.ndarray | None = None

    def as_dict(self, params: Params | None = None, check_id: str = "resolvent-sweep") -> dict:
        return {
            "check_id": check_id,
            "params": params.as_dict() if params is not None else None,
            "band": self.region,
            "sup_norm": self.sup_norm,
            "predicted_bound": self.predicted_bound,
            "safety_factor": self.safety_factor,
            "pass": self.pass_,
            "worst_lambda": [self.worst_lambda.real, self.worst_lambda.imag],
            "worst_eta": self.worst_eta,
            "projected": self.projected,
            "detected": [[lam.real, lam.imag, eta] for lam, eta in self.detected],
        }

    def to_json(self, path, params: Params | None = None) -> None:
        Path(path).write_text(json.dumps(self.as_dict(params), indent=2, sort_keys=True))


def _restriction(grid: Grid1D, eta: float, a: float, mask: np.ndarray,
                 projector: ProjectorPair | None) -> np.ndarray | None:
    """Orthonormal basis (weighted Fourier coordinates) of the restricted subspace.

    Fourier masking keeps the selected modes of both components.  With a
    projector the basis spans range(Q) = ker of the dual functionals, i.e.
    the null space of C^T F^{-1} W^{-1}.
    """
    n = grid.N
    full = np.concatenate([mask, mask])
    if projector is None:
        if full.all():
            return None
        return np.eye(2 * n)[:, full]
    j = projector.index(eta)
    C = projector.dual[j]
    if C is None:
        return None if full.all() else np.eye(2 * n)[:, full]
    w = _x_weights(grid, eta, a)
    # F^{-1} of a weighted-coordinate vector u: split blocks, inverse unitary DFT
    Kt = np.empty((2, 2 * n), dtype=complex)
    for i in range(2):
        c = C[:, i]
        # (c^T F^{-1} W^{-1} u) = sum conj(conj(F) c)... computed column-wise
        fc = np.concatenate([np.fft.ifft(c[:n]), np.fft.ifft(c[n:])]) * math.sqrt(n)
        Kt[i] = fc / w
    Kt = Kt[:, full]
    Q, _ = np.linalg.qr(Kt.conj().T, mode="complete")
    basis = np.zeros((2 * n, Q.shape[0] - 2), dtype=complex)
    basis[full] = Q[:, 2:]
    return basis


def resolvent_sweep(lambda_grid, band, params: Params, profile: SolitonProfile,
                    grids: StripGrid, project: bool = False,
                    projector: ProjectorPair | None = None, eta_samples=None,
                    safety_factor: float = 1e3, C0: float = 1.0,
                    singular_tol: float = 1e-10, operators: dict | None = None) -> ResolventReport:
    """Largest weighted resolvent norm of L_a(eta) over lambda_grid and the band.

    ``project=True`` restricts to range(Q(eta)) from ``projector`` and is
    mandatory for the low band.  ``operators`` may map eta to an assembled
    2N x 2N matrix to avoid reassembly across sweeps.
    """
    band = RegionTag(band)
    grid = grids.x_grid
    lam = np.atleast_1d(np.asarray(lambda_grid, dtype=complex))
    eps = params.epsilon
    if np.any(lam.real <= -params.beta * eps**3):
        raise ValueError("lambda_grid must lie in Re lambda > -beta eps^3")
    if band == RegionTag.L_low and not project:
        raise ValueError("the low band is only meaningful on range(Q): set project=True")
    if project and projector is None:
        raise ValueError("project=True needs a projector")
    if eta_samples is None:
        if project:
            e = projector.eta_samples
            eta_samples = e[e >= 0]
        else:
            eta_samples = band_eta_samples(band, params)
    eta_samples = np.asarray(eta_samples, dtype=float)
    a = params.a
    table = np.zeros((eta_samples.size, lam.size))
    detected = []
    for i, eta in enumerate(eta_samples):
        if operators is not None and float(eta) in operators:
            L = operators[float(eta)]
        else:
            L = assemble_La(float(eta), params, profile, grids).matrix()
        Lw = weighted_matrix(L, grid, float(eta), a)
        mask = band_mask(band, grid.xi, float(eta), params)
        V = _restriction(grid, float(eta), a, mask, projector if project else None)
        scale = float(np.linalg.norm(Lw, 1))
        for k, z in enumerate(lam):
            B = z * np.eye(Lw.shape[0]) - Lw
            if V is not None:
                B = B @ V
            s = sigma_min(B)
            if s <= singular_tol * max(scale, abs(z), 1.0):
                detected.append((complex(z), float(eta)))
                table[i, k] = np.inf
            else:
                table[i, k] = 1.0 / s
    norms = table.max(axis=0)
    k = int(np.argmax(norms))
    i = int(np.argmax(table[:, k]))
    sup = float(norms[k])
    bound = predicted_bound(band, params, C0)
    return ResolventReport(band.value, lam, norms, sup, bound,
                           bool(np.isfinite(sup) and sup <= bound * safety_factor),
                           float(safety_factor), eta_samples, complex(lam[k]),
                           float(eta_samples[i]), bool(project), detected, table)


def numerical_abscissa(L: np.ndarray, grid: Grid1D, eta: float, a: float) -> float:
    """max Re of the field of values of L_a(eta) in X."""
    Lw = weighted_matrix(L, grid, eta, a)
    return float(np.linalg.eigvalsh(0.5 * (Lw + Lw.conj().T)).max())


def resolvent_apply(L: np.ndarray, lam: complex, f: np.ndarray) -> np.ndarray:
    """(lambda - L)^{-1} f by LU factorisation."""
    return sla.lu_solve(sla.lu_factor(lam * np.eye(L.shape[0]) - L), f)


# ---------------------------------------------------------------------------
# semigroup traces
# ---------------------------------------------------------------------------

@dataclass
class DecayTrace:
    """X-norm of exp(t L_a) applied to initial data, summed over eta samples."""

    times: np.ndarray
    norms: np.ndarray
    fitted_rate: float
    eta_samples: np.ndarray
    fit_from: float = 0.0

    def rows(self):
        for t, n in zip(self.times, self.norms):
            yield {"t": float(t), "norm": float(n)}

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=["t", "norm"])
            wr.writeheader()
            for row in self.rows():
                wr.writerow({k: repr(v) for k, v in row.items()})


def fit_rate(times, norms, fit_from: float = 0.0) -> float:
    """Least-squares slope of log(norms) against t for t >= fit_from * t_max."""
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if np.any(norms <= 0):
        raise ValueError("norms must be positive")
    keep = times >= fit_from * times.max()
    slope, _ = np.polyfit(times[keep], np.log(norms[keep]), 1)
    return float(slope)


def semigroup_run(initial, T: float, dt: float, params: Params, profile: SolitonProfile,
                  grids: StripGrid, band=RegionTag.L_low, eta_samples=None,
                  projector: ProjectorPair | None = None, n_out: int = 64,
                  fit_from: float = 0.0, contamination_tol: float = 1e-8,
                  operators: dict | None = None) -> DecayTrace:
    """Propagate initial data with the exact dense exponential of L_a(eta).

    ``initial`` is one stacked pair (used for every eta) or an array with one
    row per eta sample.  The one-step propagator expm(dt L) is raised to the
    output stride, so outputs are exact up to rounding.  With a projector,
    each row must satisfy ||P(eta) u|| <= contamination_tol ||u||.
    """
    band = RegionTag(band)
    grid = grids.x_grid
    a = params.a
    if eta_samples is None:
        if projector is not None:
            e = projector.eta_samples
            eta_samples = e[e >= 0]
        else:
            eta_samples = band_eta_samples(band, params)
    eta_samples = np.asarray(eta_samples, dtype=float)
    init = np.asarray(initial, dtype=complex)
    if init.ndim == 1:
        init = np.broadcast_to(init, (eta_samples.size, init.size))
    if init.shape[0] != eta_samples.size:
        raise ValueError("initial must have one row per eta sample")
    steps = max(1, int(round(T / dt)))
    stride = max(1, steps // n_out)
    n_steps = steps // stride
    times = dt * stride * np.arange(n_steps + 1)
    sq = np.zeros(n_steps + 1)
    for eta, u in zip(eta_samples, init):
        if projector is not None:
            p = projector.project(float(eta), u)
            if np.linalg.norm(p) > contamination_tol * np.linalg.norm(u):
                raise ProjectionContaminationError(
                    f"||P u|| / ||u|| = {np.linalg.norm(p) / np.linalg.norm(u):.3e} at eta={eta:.6g}")
        if operators is not None and float(eta) in operators:
            L = operators[float(eta)]
        else:
            L = assemble_La(float(eta), params, profile, grids).matrix()
        lnorm = float(np.linalg.norm(weighted_matrix(L, grid, float(eta), a), 2))
        if dt * lnorm > 0.5:
            raise ValueError(f"dt * ||L_a|| = {dt * lnorm:.3g} > 0.5; reduce dt")
        E = np.linalg.matrix_power(sla.expm(dt * L), stride)
        v = u.copy()
        for k in range(n_steps + 1):
            if k:
                v = E @ v
            sq[k] += x_norm(v, grid, float(eta), a) ** 2
    norms = np.sqrt(sq)
    return DecayTrace(times, norms, fit_rate(times, norms, fit_from), eta_samples, fit_from)


# ---------------------------------------------------------------------------
# energy functionals
# ---------------------------------------------------------------------------

ENERGY_BANDS = ("s", "r")


def energy_mask(band: str, xi: np.ndarray, eta: float, params: Params) -> np.ndarray:
    if band == "s":
        return band_mask(RegionTag.S_sing, xi, eta, params)
    if band == "r":
        return band_mask(RegionTag.R_reg, xi, eta, params)
    raise ValueError(f"energy band must be 's' or 'r', got {band!r}")


def band_limit(state: np.ndarray, band: str, eta: float, params: Params, grid: Grid1D) -> np.ndarray:
    """Apply the characteristic multiplier of the band to both components."""
    m = energy_mask(band, grid.xi, eta, params)
    n = grid.N
    return np.concatenate([np.fft.ifft(m * np.fft.fft(state[:n])),
                           np.fft.ifft(m * np.fft.fft(state[n:]))])


def model_generator(eta: float, params: Params, grid: Grid1D) -> np.ndarray:
    """Constant-coefficient part [[d_x - a, -Delta_a], [-gamma, d_x - a]]."""
    b = 1j * grid.xi - params.a
    lap = b**2 - eta**2
    D = multiplier_matrix(b)
    return np.block([[D, multiplier_matrix(-lap)],
                     [-params.gamma * np.eye(grid.N), D]])


def band_generator(band: str, eta: float, params: Params, profile: SolitonProfile,
                   grids: StripGrid) -> np.ndarray:
    """Generator of the homogeneous band evolution.

    s: the constant-coefficient part restricted to the band (it commutes with
    the band multiplier).  r: pi_r L_a pi_r with the assembled L_a.
    """
    grid = grids.x_grid
    n = grid.N
    m = energy_mask(band, grid.xi, eta, params).astype(float)
    Pi = multiplier_matrix(m)
    Pi2 = np.block([[Pi, np.zeros((n, n))], [np.zeros((n, n)), Pi]])
    if band == "s":
        return Pi2 @ model_generator(eta, params, grid)
    L = assemble_La(eta, params, profile, grids).matrix()
    return Pi2 @ L @ Pi2


def _energy_form(band: str, U: np.ndarray, V: np.ndarray, eta: float, params: Params,
                 profile: SolitonProfile, grid: Grid1D) -> complex:
    """Sesquilinear form B with E(V) = B(V, V)."""
    n = grid.N
    h = grid.h
    g = params.gamma
    b = 1j * grid.xi - params.a
    ft = np.fft.fft
    ift = np.fft.ifft
    u1, u2, v1, v2 = U[:n], U[n:], V[:n], V[n:]
    first = g * np.vdot(v1, u1)
    if band == "s":
        gu, gv = ft(u2), ft(v2)
        grad = (np.vdot(b * gv, b * gu) + eta**2 * np.vdot(gv, gu)) / n
        return 0.5 * h * (first + grad)
    sym = branch_sqrt(flat_dn_symbol(grid.xi, eta, params.a))
    su, sv = ift(sym * ft(u2)), ift(sym * ft(v2))
    mu = mu_a(grid.xi, eta, params.a)
    q = branch_sqrt(1.0 - stable_tanh(mu) ** 2)
    qu, qv = ft(u2) * q, ft(v2) * q
    zeta = profile.zeta_c
    dqu, dqv = ift(b * qu), ift(b * qv)
    yu, yv = ift(qu), ift(qv)
    extra = np.vdot(dqv, zeta * dqu) + eta**2 * np.vdot(yv, zeta * yu)
    return 0.5 * h * (first + np.vdot(sv, su) + extra)


def energy_functionals(state: np.ndarray, band: str, params: Params, profile: SolitonProfile,
                       grids: StripGrid, eta: float, generator: np.ndarray | None = None,
                       band_tol: float = 1e-8) -> dict:
    """E_s or E_r of a stacked state and its time derivative along the band evolution.

    ``dissipation`` is 2 Re B(V, G V) with G the band generator (see
    :func:`band_generator`).
    """
    if band not in ENERGY_BANDS:
        raise ValueError(f"energy band must be 's' or 'r', got {band!r}")
    grid = grids.x_grid
    V = np.asarray(state, dtype=complex)
    nrm = np.linalg.norm(V)
    if nrm == 0.0:
        return {"value": 0.0, "dissipation": 0.0}
    off = V - band_limit(V, band, eta, params, grid)
    if np.linalg.norm(off) > band_tol * nrm:
        raise BandMismatchError(f"state has {np.linalg.norm(off) / nrm:.3e} of its norm "
                                f"outside the {band}-band at eta={eta:.6g}")
    G = band_generator(band, eta, params, profile, grids) if generator is None else generator
    value = _energy_form(band, V, V, eta, params, profile, grid).real
    diss = 2.0 * _energy_form(band, G @ V, V, eta, params, profile, grid).real
    return {"value": float(value), "dissipation": float(diss)}


def energy_trace(state: np.ndarray, band: str, times, params: Params, profile: SolitonProfile,
                 grids: StripGrid, eta: float) -> dict:
    """Functional and its derivative along exp(t G) state at the given times."""
    G = band_generator(band, eta, params, profile, grids)
    times = np.asarray(times, dtype=float)
    values, diss = [], []
    V = np.asarray(state, dtype=complex)
    for t in times:
        Vt = sla.expm(t * G) @ V
        r = energy_functionals(Vt, band, params, profile, grids, eta, generator=G)
        values.append(r["value"])
        diss.append(r["dissipation"])
    return {"times": times, "value": np.array(values), "dissipation": np.array(diss)}


def random_band_state(band: str, eta: float, params: Params, grid: Grid1D,
                      seed: int = 0) -> np.ndarray:
    """Random complex state with Fourier support in the band."""
    rng = np.random.default_rng(seed)
    n = grid.N
    v = rng.standard_normal(2 * n) + 1j * rng.standard_normal(2 * n)
    out = band_limit(v, band, eta, params, grid)
    if np.linalg.norm(out) == 0.0:
        raise BandMismatchError(f"the {band}-band is empty on this grid at eta={eta:.6g}")
    return out


# ---------------------------------------------------------------------------
# commutator estimate
# ---------------------------------------------------------------------------

Multiplier = Callable[[np.ndarray], np.ndarray]


def _symbol_values(m, xi: np.ndarray) -> np.ndarray:
    if callable(m):
        return np.asarray(m(xi), dtype=complex) * np.ones(xi.shape)
    return np.broadcast_to(np.asarray(m, dtype=complex), xi.shape).copy()


def commutator_check(A, B, W, f: np.ndarray, s: float, grid: Grid1D) -> dict:
    """Operator norm of A [B, f] W against the Schur-type bound C_s C_{f,s}.

    Symbols are callables of xi (FFT order) or arrays.  On the periodic grid
    multiplication by f is a circular convolution, so the frequency distance
    in C_s is taken modulo the grid period and C_{f,s} is the discrete sum
    sum_k |xi_k|^s |c_k| of the Fourier coefficients c_k of f; with these
    definitions the bound holds exactly on the grid.
    """
    xi = grid.xi
    n = grid.N
    a_, b_, w_ = (_symbol_values(m, xi) for m in (A, B, W))
    if not np.all(np.isfinite(np.concatenate([a_, b_, w_]))):
        return {"measured": float("nan"), "bound": float("inf"), "C_s": float("inf"),
                "C_fs": float("nan"), "finite": False}
    F = np.asarray(f, dtype=complex)
    Mf = np.diag(F)
    Bm = multiplier_matrix(b_)
    op = multiplier_matrix(a_) @ (Bm @ Mf - Mf @ Bm) @ multiplier_matrix(w_)
    measured = float(np.linalg.norm(op, 2))
    k = np.arange(n)
    diff = xi[(k[:, None] - k[None, :]) % n]
    num = np.abs(a_[:, None] * (b_[:, None] - b_[None, :]) * w_[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(num == 0.0, 0.0, num / np.abs(diff) ** s)
    Cs = float(np.max(ratio))
    coeff = np.abs(np.fft.fft(F)) / n
    Cfs = float(np.sum(np.where(xi == 0.0, 0.0 if s > 0 else 1.0, np.abs(xi) ** s) * coeff))
    finite = bool(np.isfinite(Cs))
    return {"measured": measured, "bound": Cs * Cfs if finite else float("inf"),
            "C_s": Cs, "C_fs": Cfs, "finite": finite}
