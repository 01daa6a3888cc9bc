"""Pointwise symbols, frequency regions and sign-inequality sweeps.

Every function here is a pure, vectorised evaluation.  Scalars go in and
scalars come out; arrays broadcast the usual numpy way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .soliton import SolitonProfile

SQRT3 = math.sqrt(3.0)
A_HAT_MAX = SQRT3 / 4.0


@dataclass(frozen=True)
class Params:
    """Small-amplitude parameters and the region constants of the analysis.

    ``gamma`` is derived (``1 - epsilon**2``) and cannot be set directly.
    """

    epsilon: float
    a_hat: float
    beta: float = 0.01
    A: float = 6.0
    K: float = 1.5
    delta: float = 0.5
    eta_hat0: float = 0.2
    gamma: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "gamma", 1.0 - self.epsilon**2)
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self) -> list[str]:
        eps = self.epsilon
        out = []
        if not (0.0 < eps <= 0.2):
            out.append(f"epsilon must lie in (0, 0.2], got {eps}")
        if not (0.0 < self.a_hat < A_HAT_MAX):
            out.append(f"a_hat must lie in (0, sqrt(3)/4), got {self.a_hat}")
        if self.A * eps**2 >= 1.0:
            out.append(f"A*epsilon^2 must be < 1, got {self.A * eps**2}")
        if self.K**4 * eps > 1.0:
            out.append(f"K^4*epsilon must be <= 1, got {self.K**4 * eps}")
        if not (0.0 < self.delta < 1.0):
            out.append(f"delta must lie in (0, 1), got {self.delta}")
        if self.beta <= 0.0:
            out.append(f"beta must be positive, got {self.beta}")
        if self.eta_hat0 <= 0.0:
            out.append(f"eta_hat0 must be positive, got {self.eta_hat0}")
        return out

    @property
    def a(self) -> float:
        """Physical weight rate a = a_hat * epsilon."""
        return self.a_hat * self.epsilon

    def replace(self, **changes) -> "Params":
        values = {k: getattr(self, k) for k in
                  ("epsilon", "a_hat", "beta", "A", "K", "delta", "eta_hat0")}
        values.update(changes)
        return Params(**values)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("epsilon", "a_hat", "gamma", "beta", "A", "K", "delta", "eta_hat0")}


class RegionTag(str, Enum):
    UH = "UH"
    I = "I"  # noqa: E741
    L_high = "L_high"
    L_low = "L_low"
    S_sing = "S_sing"
    R_reg = "R_reg"


@dataclass
class SweepReport:
    check_id: str
    grid_description: str
    min_margin: float
    worst_point: tuple[float, float, float] | dict
    violations: int
    pass_: bool
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        wp = self.worst_point
        if not isinstance(wp, dict):
            wp = {"x": wp[0], "xi": wp[1], "eta": wp[2]}
        out = {
            "check_id": self.check_id,
            "grid_description": self.grid_description,
            "min_margin": self.min_margin,
            "worst_point": wp,
            "violations": self.violations,
            "pass": self.pass_,
        }
        out.update(self.extra)
        return out


# ---------------------------------------------------------------------------
# scalar symbols
# ---------------------------------------------------------------------------

def branch_sqrt(c):
    """Square root with non-negative real part.

    On the negative real axis the value is the limit from the upper half
    plane, i.e. ``+i*sqrt(|c|)``.  numpy's principal root already has
    ``Re >= 0``; the only fix-up needed is for a signed-zero imaginary part.
    """
    c = np.asarray(c, dtype=complex)
    r = np.sqrt(c)
    on_cut = (c.imag == 0.0) & (c.real < 0.0)
    if np.any(on_cut):
        r = np.where(on_cut, 1j * np.sqrt(np.abs(c.real)), r)
    return r[()] if r.ndim == 0 else r


def stable_tanh(mu):
    """tanh that does not overflow for large real part."""
    mu = np.asarray(mu, dtype=complex)
    big = mu.real > 20.0
    out = np.tanh(np.where(big, 0.0, mu))
    if np.any(big):
        e = np.exp(-2.0 * np.where(big, mu, 0.0))
        out = np.where(big, (1.0 - e) / (1.0 + e), out)
    return out[()] if out.ndim == 0 else out


def mu_a(xi, eta, a):
    """mu_a(xi, eta) = sqrt((xi + i a)^2 + eta^2) on the Re >= 0 branch."""
    xi = np.asarray(xi, dtype=float)
    return branch_sqrt((xi + 1j * a) ** 2 + np.asarray(eta, dtype=float) ** 2)


def flat_dn_symbol(xi, eta, a):
    """Symbol mu tanh(mu) of the flat transformed Dirichlet-Neumann operator.

    mu*tanh(mu) is even in mu, hence analytic in mu^2 and branch independent.
    At mu = 0 it simply evaluates to 0 (its limit behaves like mu^2).
    """
    mu = mu_a(xi, eta, a)
    return mu * stable_tanh(mu)


def lambda0_pm(xi, eta, params: Params, sign: int):
    """Eigenvalues i(xi + i a) +/- sqrt(-gamma mu tanh mu) of the flat operator."""
    _check_sign(sign)
    a = params.a
    root = branch_sqrt(-params.gamma * flat_dn_symbol(xi, eta, a))
    return 1j * (np.asarray(xi, dtype=float) + 1j * a) + sign * root


def _lambda1_from_slope(dzeta, xi, eta, a):
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return branch_sqrt((xi + 1j * a) ** 2 + eta**2 * (1.0 + np.asarray(dzeta) ** 2))


def lambda1_zc(x, xi, eta, a, profile: "SolitonProfile"):
    """Principal symbol sqrt((xi+ia)^2 + eta^2 (1 + zeta_c'(x)^2))."""
    return _lambda1_from_slope(profile.sample("dzeta_c", x), xi, eta, a)


def _lambda1_pm_from_fields(dzeta, d, w, xi, eta, a, sign):
    lam = _lambda1_from_slope(dzeta, xi, eta, a)
    inner = branch_sqrt(lam * stable_tanh(lam))
    xi = np.asarray(xi, dtype=float)
    return 1j * (d * (xi + 1j * a) + sign * np.sqrt(w) * inner)


def lambda1_pm(x, xi, eta, params: Params, profile: "SolitonProfile", sign: int):
    """i(d_c (xi+ia) +/- sqrt(w_c) sqrt(lambda1 tanh lambda1)) at the point x.

    With a flat profile the pair {lambda1_+, lambda1_-} coincides with the
    pair {lambda0_+, lambda0_-}; the labels may be swapped depending on the
    sign of xi because lambda0 is labelled by the sign of the real part.
    """
    _check_sign(sign)
    dz = profile.sample("dzeta_c", x)
    d = profile.sample("d_c", x)
    w = profile.sample("w_c", x)
    return _lambda1_pm_from_fields(dz, d, w, xi, eta, params.a, sign)


def g_eta_symbol(dzeta, w, xi, eta, a):
    """Diagonaliser symbol sqrt(w mu tanh mu / (lambda1 tanh lambda1))."""
    lam = _lambda1_from_slope(dzeta, xi, eta, a)
    ratio = w * flat_dn_symbol(xi, eta, a) / (lam * stable_tanh(lam))
    return branch_sqrt(ratio)


def _check_sign(sign):
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign!r}")


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

def in_singular_set(xi, eta, params: Params):
    """Membership in {|xi| <= K eps, delta <= |eta|/|xi + i a| <= 2}."""
    xi = np.abs(np.asarray(xi, dtype=float))
    eta = np.abs(np.asarray(eta, dtype=float))
    ratio = eta / np.hypot(xi, params.a)
    return (xi <= params.K * params.epsilon) & (ratio >= params.delta) & (ratio <= 2.0)


def classify_region(xi, eta, params: Params, refine: bool = False):
    """Frequency region of (xi, eta).

    Boundary points go to the first region in the order UH, I, L_high, L_low.
    With ``refine=True`` the intermediate region is split further into the
    singular set S_sing and its regular complement R_reg.
    """
    xi_abs = abs(float(xi))
    eta_abs = abs(float(eta))
    eps = params.epsilon
    if eta_abs >= 2.0:
        return RegionTag.UH
    if eta_abs >= params.A * eps**2:
        if refine:
            return RegionTag.S_sing if bool(in_singular_set(xi, eta, params)) else RegionTag.R_reg
        return RegionTag.I
    if xi_abs >= params.K * eps:
        return RegionTag.L_high
    return RegionTag.L_low


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid3D:
    """Tensor grid over (x, xi, eta) used by :func:`sweep_inequality`.

    ``x`` values are taken from the profile grid so that fields are read at
    nodes; ``x_index=None`` means all profile nodes.
    """

    xi: np.ndarray
    eta: np.ndarray
    x_index: np.ndarray | None = None

    def describe(self) -> str:
        nx = "all" if self.x_index is None else len(self.x_index)
        return (f"x: {nx} profile nodes; xi: {len(self.xi)} in "
                f"[{self.xi.min():.4g}, {self.xi.max():.4g}]; eta: {len(self.eta)} in "
                f"[{self.eta.min():.4g}, {self.eta.max():.4g}]")


def frequency_axis(limit: float, n_uniform: int = 201, n_log: int = 60,
                   uniform_limit: float = 10.0, avoid: float = 0.0) -> np.ndarray:
    """Symmetric 1D frequency axis: uniform up to ``uniform_limit``, logarithmic beyond.

    Points closer than 1e-6 to ``+/-avoid`` are nudged away (used to keep
    eta samples off the branch points of mu_a).
    """
    inner = np.linspace(0.0, min(limit, uniform_limit), n_uniform)
    parts = [inner]
    if limit > uniform_limit:
        parts.append(np.geomspace(uniform_limit, limit, n_log)[1:])
    half = np.unique(np.concatenate(parts))
    axis = np.concatenate([-half[::-1], half[1:]])
    if avoid > 0.0:
        close = np.abs(np.abs(axis) - avoid) < 1e-6
        axis = np.where(close, axis + np.where(axis >= 0.0, 2e-6, -2e-6), axis)
    return axis


def band_axis(lo: float, hi: float, n: int) -> np.ndarray:
    """Symmetric axis covering lo <= |t| <= hi."""
    half = np.linspace(lo, hi, n)
    return np.concatenate([-half[::-1], half])


CHECK_IDS = ("lem-ev-HT", "im-three-fifths", "lem-sym-Ga0-UH", "lem-sym-Ga0-I",
             "relambdapm", "lampm1-minus", "g-eta-bounded")

# Constants the analysis leaves implicit; see the notes in the README.
SYM_GA0_C = 0.01
G_ETA_BOUND = 2.0


def _region_mask(check_id: str, XI, ETA, params: Params):
    eps, a, K, delta, A = params.epsilon, params.a, params.K, params.delta, params.A
    axi, aeta = np.abs(XI), np.abs(ETA)
    if check_id in ("lem-ev-HT", "im-three-fifths", "g-eta-bounded"):
        return aeta >= 2.0
    if check_id == "lem-sym-Ga0-UH":
        high = (axi >= delta) & (aeta <= 2.0)
        sing = (axi <= K * eps) & (aeta >= delta * np.hypot(XI, a)) & (aeta <= 2.0)
        return high | sing
    if check_id == "lem-sym-Ga0-I":
        mid = (axi >= K * eps) & (axi <= delta) & (aeta <= 2.0)
        low = (axi <= K * eps) & (aeta >= A * eps**2) & (aeta <= delta * np.hypot(XI, a))
        return mid | low
    if check_id == "lampm1-minus":
        return aeta <= 2.0
    if check_id == "relambdapm":
        return np.ones_like(XI, dtype=bool)
    raise ValueError(f"unknown check_id {check_id!r}; expected one of {CHECK_IDS}")


def _margins(check_id: str, fields, XI, ETA, params: Params):
    """Margin (bound - quantity), >= 0 iff the inequality holds.

    ``fields`` holds (dzeta, d, w) broadcast against XI/ETA, or None for the
    constant-coefficient checks.
    """
    a, eps = params.a, params.epsilon
    if check_id == "lem-ev-HT":
        dz, d, w = fields
        worst = np.maximum(_lambda1_pm_from_fields(dz, d, w, XI, ETA, a, 1).real,
                           _lambda1_pm_from_fields(dz, d, w, XI, ETA, a, -1).real)
        return -a / 4.0 - worst
    if check_id == "im-three-fifths":
        dz, _, _ = fields
        lam = _lambda1_from_slope(dz, XI, ETA, a)
        return 0.6 * a - np.abs(branch_sqrt(lam * stable_tanh(lam)).imag)
    if check_id == "g-eta-bounded":
        dz, _, w = fields
        g = np.abs(g_eta_symbol(dz, w, XI, ETA, a))
        return np.minimum(G_ETA_BOUND - g, G_ETA_BOUND - 1.0 / g)
    re_root = branch_sqrt(-flat_dn_symbol(XI, ETA, a)).real
    if check_id == "lem-sym-Ga0-UH":
        return np.minimum(re_root, a * (1.0 - SYM_GA0_C * params.delta) - re_root)
    if check_id == "lem-sym-Ga0-I":
        return np.minimum(re_root, a * (1.0 - SYM_GA0_C * params.A * eps**2) - re_root)
    if check_id == "relambdapm":
        worst = np.maximum(lambda0_pm(XI, ETA, params, 1).real, lambda0_pm(XI, ETA, params, -1).real)
        return -a * eps**2 / 4.0 - worst
    if check_id == "lampm1-minus":
        # worst admissible lambda has Re lambda = -beta eps^3
        lhs = -params.beta * eps**3 - lambda0_pm(XI, ETA, params, -1).real
        return lhs - (a - params.beta * eps**3)
    raise ValueError(f"unknown check_id {check_id!r}")


_PROFILE_CHECKS = ("lem-ev-HT", "im-three-fifths", "g-eta-bounded")


def sweep_inequality(check_id: str, grid: Grid3D, params: Params,
                     profile: "SolitonProfile | None" = None,
                     chunk: int = 64) -> SweepReport:
    """Evaluate one sign inequality over a grid and report the worst margin.

    Raises ``ValueError`` if any grid point lies outside the region in which
    the inequality is asserted.  The reduction is a plain global minimum with ties
    broken lexicographically on (x, xi, eta), so the result does not depend
    on traversal order or chunking.
    """
    if check_id not in CHECK_IDS:
        raise ValueError(f"unknown check_id {check_id!r}; expected one of {CHECK_IDS}")
    XI, ETA = np.meshgrid(np.asarray(grid.xi, float), np.asarray(grid.eta, float), indexing="ij")
    mask = _region_mask(check_id, XI, ETA, params)
    if not np.all(mask):
        k = np.argwhere(~mask)[0]
        raise ValueError(f"{check_id}: grid point (xi={XI[tuple(k)]:.6g}, eta={ETA[tuple(k)]:.6g}) "
                         "lies outside the region where the inequality is asserted")

    best = (np.inf, (0.0, 0.0, 0.0))
    violations = 0
    if check_id in _PROFILE_CHECKS:
        if profile is None:
            raise ValueError(f"{check_id} needs a soliton profile")
        idx = np.arange(profile.grid.N) if grid.x_index is None else np.asarray(grid.x_index)
        xs = profile.grid.x[idx]
        for start in range(0, len(idx), chunk):
            sl = idx[start:start + chunk]
            f = tuple(getattr(profile, name)[sl][:, None, None] for name in ("dzeta_c", "d_c", "w_c"))
            m = _margins(check_id, f, XI[None], ETA[None], params)
            violations += int(np.count_nonzero(m < 0))
            best = _merge(best, m, lambda k: (float(xs[start + k[0]]), float(XI[k[1], k[2]]),
                                              float(ETA[k[1], k[2]])))
    else:
        m = _margins(check_id, None, XI, ETA, params)
        violations = int(np.count_nonzero(m < 0))
        best = _merge(best, m, lambda k: (0.0, float(XI[k]), float(ETA[k])))

    return SweepReport(check_id=check_id, grid_description=grid.describe(),
                       min_margin=float(best[0]), worst_point=best[1],
                       violations=violations, pass_=violations == 0)


def _merge(best, margins, locate):
    flat_min = margins.min()
    if flat_min > best[0]:
        return best
    candidates = [locate(tuple(k)) for k in np.argwhere(margins == flat_min)]
    point = min(candidates)
    if flat_min < best[0]:
        return (float(flat_min), point)
    return (best[0], min(best[1], point))


def default_grids(check_id: str, params: Params, n_xi: int = 41, n_eta: int = 49,
                  x_index=None) -> list[Grid3D]:
    """Tensor grids covering the region of each check at desk scale.

    Regions that are not tensor products are covered by several rectangles;
    empty pieces are dropped.
    """
    eps, a, K, delta, A = params.epsilon, params.a, params.K, params.delta, params.A
    half = n_xi // 2
    if check_id in _PROFILE_CHECKS:
        return [Grid3D(np.linspace(-20.0, 20.0, n_xi), band_axis(2.0, 10.0, n_eta // 2), x_index)]
    if check_id == "relambdapm":
        return [Grid3D(frequency_axis(50.0, n_uniform=half + 1, n_log=half // 2),
                       frequency_axis(50.0, n_uniform=n_eta // 2 + 1, n_log=n_eta // 4))]
    if check_id == "lampm1-minus":
        return [Grid3D(frequency_axis(50.0, n_uniform=half + 1, n_log=half // 2),
                       np.linspace(-2.0, 2.0, n_eta))]
    pieces = []
    if check_id == "lem-sym-Ga0-UH":
        pieces.append((band_axis(delta, 50.0, half), np.linspace(-2.0, 2.0, n_eta)))
        lo = delta * math.hypot(K * eps, a)
        if lo < 2.0:
            pieces.append((np.linspace(-K * eps, K * eps, n_xi), band_axis(lo, 2.0, n_eta // 2)))
    elif check_id == "lem-sym-Ga0-I":
        pieces.append((band_axis(K * eps, delta, half), np.linspace(-2.0, 2.0, n_eta)))
        hi = delta * a
        if A * eps**2 < hi:
            pieces.append((np.linspace(-K * eps, K * eps, n_xi),
                           band_axis(A * eps**2, hi, n_eta // 2)))
    else:
        raise ValueError(f"unknown check_id {check_id!r}; expected one of {CHECK_IDS}")
    return [Grid3D(xi, eta) for xi, eta in pieces]


def verify(check_id: str, params: Params, profile: "SolitonProfile | None" = None,
           grids: list[Grid3D] | None = None, **grid_options) -> SweepReport:
    """Run :func:`sweep_inequality` over several grids and merge the reports."""
    grids = default_grids(check_id, params, **grid_options) if grids is None else grids
    reports = [sweep_inequality(check_id, g, params, profile) for g in grids]
    worst = min(reports, key=lambda r: r.min_margin)
    return SweepReport(check_id=check_id,
                       grid_description=" | ".join(r.grid_description for r in reports),
                       min_margin=worst.min_margin, worst_point=worst.worst_point,
                       violations=sum(r.violations for r in reports),
                       pass_=all(r.pass_ for r in reports))
