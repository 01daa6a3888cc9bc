"""Leading-order line solitary wave and the coefficient fields it induces.

The exact profile of the full water-wave problem has no closed form.  For
small amplitude it is, to leading order, a rescaled KdV soliton

    zeta_c(x) = eps^2 Psi(eps x),   Psi(t) = sech^2(sqrt(3) t / 2),

and everything the linearised operator needs is derived from that.  A
higher-order profile can be supplied by constructing :class:`SolitonProfile`
directly with the same fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT3 = math.sqrt(3.0)
_K = SQRT3 / 2.0
FIELDS = ("zeta_c", "dzeta_c", "ddzeta_c", "dphi_c", "Z_c", "dZ_c", "v_c", "d_c", "w_c")


@dataclass(frozen=True)
class Grid1D:
    """Periodic, symmetric grid x_j = -X + j h, h = 2X/N."""

    X: float
    N: int

    def __post_init__(self):
        if self.N < 2 or (self.N & (self.N - 1)):
            raise ValueError(f"N must be a power of two, got {self.N}")
        if self.X <= 0:
            raise ValueError(f"X must be positive, got {self.X}")

    @property
    def h(self) -> float:
        return 2.0 * self.X / self.N

    @property
    def x(self) -> np.ndarray:
        return -self.X + self.h * np.arange(self.N)

    @property
    def xi(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)

    def reflect_index(self) -> np.ndarray:
        """Index map j -> index of -x_j (exact on the symmetric periodic grid)."""
        return (-np.arange(self.N)) % self.N

    def derivative(self, f: np.ndarray, order: int = 1) -> np.ndarray:
        fh = np.fft.fft(f, axis=-1)
        fh *= (1j * self.xi) ** order
        if order % 2 == 1 and self.N % 2 == 0:
            fh[..., self.N // 2] = 0.0
        out = np.fft.ifft(fh, axis=-1)
        return out.real if np.isrealobj(f) else out


def psi_kdv(x):
    """KdV soliton sech^2(sqrt(3) x / 2), written to avoid overflow in the tails."""
    e = np.exp(-2.0 * _K * np.abs(np.asarray(x, dtype=float)))
    return 4.0 * e / (1.0 + e) ** 2


def dpsi_kdv(x):
    x = np.asarray(x, dtype=float)
    return -SQRT3 * psi_kdv(x) * np.tanh(_K * x)


def ddpsi_kdv(x):
    p = psi_kdv(x)
    return 3.0 * p - 4.5 * p**2


@dataclass(frozen=True, eq=False)
class SolitonProfile:
    """Sampled profile fields on a :class:`Grid1D`.

    Invariants: ``d_c = 1 - v_c`` and ``w_c = gamma - d_c * dZ_c``.
    ``ddzeta_c`` and ``dZ_c`` are stored because the curved-strip solver and
    ``w_c`` need them.
    """

    grid: Grid1D
    epsilon: float
    zeta_c: np.ndarray
    dzeta_c: np.ndarray
    ddzeta_c: np.ndarray
    dphi_c: np.ndarray
    Z_c: np.ndarray
    dZ_c: np.ndarray
    v_c: np.ndarray
    d_c: np.ndarray
    w_c: np.ndarray

    @property
    def gamma(self) -> float:
        return 1.0 - self.epsilon**2

    @property
    def is_flat(self) -> bool:
        return not np.any(self.zeta_c) and not np.any(self.v_c) and not np.any(self.dZ_c)

    def sample(self, name: str, x=None):
        """Field value at x.  Grid nodes are read directly; other points use
        trigonometric interpolation of the periodic samples."""
        if name not in FIELDS:
            raise KeyError(name)
        values = getattr(self, name)
        if x is None:
            return values
        x = np.asarray(x, dtype=float)
        pos = (x + self.grid.X) / self.grid.h
        idx = np.rint(pos)
        if np.all(np.abs(pos - idx) < 1e-9):
            return values[idx.astype(int) % self.grid.N]
        coeff = np.fft.fft(values) / self.grid.N
        phase = np.exp(1j * np.multiply.outer(x + self.grid.X, self.grid.xi))
        return (phase @ coeff).real

    @classmethod
    def flat(cls, grid: Grid1D, epsilon: float = 0.0) -> "SolitonProfile":
        """Zero surface: d_c = 1, w_c = gamma."""
        z = np.zeros(grid.N)
        gamma = 1.0 - epsilon**2
        return cls(grid, epsilon, z, z, z, z, z, z, z, np.ones(grid.N), np.full(grid.N, gamma))


def build_profile(epsilon: float, grid: Grid1D, min_tail: float = 20.0) -> SolitonProfile:
    """Leading-order profile fields.

    zeta_c = dphi_c = eps^2 Psi(eps x) and Z_c = -eps^3 Psi'(eps x), the
    leading order of the kinematic profile equation.  The remaining fields
    follow from v_c = dphi_c - Z_c zeta_c', d_c = 1 - v_c and
    w_c = gamma - d_c Z_c'.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    if epsilon == 0.0:
        return SolitonProfile.flat(grid, 0.0)
    if epsilon * grid.X < min_tail:
        raise ValueError(f"epsilon*X = {epsilon * grid.X:.3g} < {min_tail}: "
                         "the soliton tail is not resolved by the periodic box")
    t = epsilon * grid.x
    psi, dpsi, ddpsi = psi_kdv(t), dpsi_kdv(t), ddpsi_kdv(t)
    e2, e3, e4 = epsilon**2, epsilon**3, epsilon**4
    zeta = e2 * psi
    dzeta = e3 * dpsi
    ddzeta = e4 * ddpsi
    dphi = e2 * psi
    Z = -e3 * dpsi
    dZ = -e4 * ddpsi
    v = dphi - Z * dzeta
    d = 1.0 - v
    w = (1.0 - e2) - d * dZ
    return SolitonProfile(grid, float(epsilon), zeta, dzeta, ddzeta, dphi, Z, dZ, v, d, w)


def profile_norms(epsilon: float, grid: Grid1D) -> dict:
    """L1 norm and squared L2 norm of the rescaled leading-order v_0 = Psi.

    Quadrature is the trapezoidal rule on the rescaled nodes eps*x_j, which is
    spectrally accurate for the exponentially decaying integrand.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    t = epsilon * grid.x
    w = epsilon * grid.h
    psi = psi_kdv(t)
    return {"l1_v0": float(np.sum(np.abs(psi)) * w), "l2sq_v0": float(np.sum(psi**2) * w)}


def decay_length(epsilon: float) -> float:
    """Tail e-folding length 1/(sqrt(3) eps) assumed for truncation heuristics."""
    return 1.0 / (SQRT3 * epsilon)
