"""Transformed Dirichlet-Neumann operator on the line x, per transverse frequency eta.

The fluid domain {-1 < z < zeta_c(x)} is flattened onto the strip
-1 < s < 0 with s = (z - zeta_c)/(1 + zeta_c).  In these coordinates the
conjugated Laplace problem

    ((d_x - a)^2 - eta^2 + d_z^2) Phi = 0,  Phi(s=0) = f,  d_s Phi(s=-1) = 0

becomes a variable-coefficient elliptic equation.  It is discretised with
Fourier collocation in x and Chebyshev-Gauss-Lobatto collocation in s, and
solved by a preconditioned fixed-point iteration whose preconditioner is the
flat-strip operator (diagonal in the Fourier index, one small dense block per
mode).  The coefficient perturbation is O(eps^2), so a handful of sweeps
reach round-off.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .soliton import Grid1D, SolitonProfile
from .symbols import Params, flat_dn_symbol, mu_a, stable_tanh, _lambda1_from_slope

NORM_TAGS = ("L2", "Hhalf_star", "H1")


class SingularSystemError(RuntimeError):
    """The flat-strip block of some Fourier mode is singular (cosh(mu) = 0)."""


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

def cheb_nodes(M: int) -> np.ndarray:
    """Chebyshev-Gauss-Lobatto nodes on [-1, 0], ordered from s=0 down to s=-1."""
    t = np.cos(np.pi * np.arange(M) / (M - 1))
    return (t - 1.0) / 2.0


def cheb_diff(M: int) -> np.ndarray:
    """Differentiation matrix for :func:`cheb_nodes` (Trefethen's construction)."""
    n = M - 1
    t = np.cos(np.pi * np.arange(M) / n)
    c = np.ones(M)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(M)
    T = np.tile(t, (M, 1)).T
    dT = T - T.T
    D = np.outer(c, 1.0 / c) / (dT + np.eye(M))
    D -= np.diag(D.sum(axis=1))
    return 2.0 * D  # d/ds = 2 d/dt


@dataclass(frozen=True)
class StripGrid:
    x_grid: Grid1D
    M: int = 32

    def __post_init__(self):
        if self.M < 16:
            raise ValueError(f"M must be at least 16, got {self.M}")

    @property
    def z_nodes(self) -> np.ndarray:
        return cheb_nodes(self.M)


@dataclass
class PotentialField:
    """Solution Psi(x_j, s_m) on the flattened strip, with solver diagnostics."""

    values: np.ndarray
    trace_ok: bool
    residual: float
    iterations: int


@dataclass
class OperatorMatrix:
    """Dense matrix in the physical (collocation) basis plus norm tags.

    ``src_norm``/``dst_norm`` are a tag or a tuple of tags, one per block
    component for block operators.
    """

    entries: np.ndarray
    src_norm: str | tuple = "L2"
    dst_norm: str | tuple = "L2"
    eta: float = 0.0
    a: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for tags in (self.src_norm, self.dst_norm):
            for t in (tags,) if isinstance(tags, str) else tags:
                if t not in NORM_TAGS:
                    raise ValueError(f"unknown norm tag {t!r}")

    @property
    def shape(self):
        return self.entries.shape

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            return OperatorMatrix(self.entries @ other.entries, other.src_norm, self.dst_norm,
                                  self.eta, self.a)
        return self.entries @ other


# ---------------------------------------------------------------------------
# Fourier helpers
# ---------------------------------------------------------------------------

def norm_weight(tag: str, xi: np.ndarray, eta: float, a: float) -> np.ndarray:
    """Diagonal Fourier weight realising the tagged norm."""
    if tag == "L2":
        return np.ones_like(xi)
    r2 = xi**2 + eta**2
    if tag == "Hhalf_star":
        return np.sqrt(r2 / np.sqrt(1.0 + r2) + a**2)
    if tag == "H1":
        return np.sqrt(1.0 + r2)
    raise ValueError(f"unknown norm tag {tag!r}")


def to_fourier(A: np.ndarray, nblocks: int = 1) -> np.ndarray:
    """Similarity F A F^{-1} applied blockwise (F the unitary DFT)."""
    n = A.shape[0] // nblocks
    out = np.empty(A.shape, dtype=complex)
    for i in range(nblocks):
        for j in range(nblocks):
            blk = A[i * n:(i + 1) * n, j * n:(j + 1) * n]
            out[i * n:(i + 1) * n, j * n:(j + 1) * n] = np.fft.fft(np.fft.ifft(blk, axis=1), axis=0)
    return out


def from_fourier(B: np.ndarray, nblocks: int = 1) -> np.ndarray:
    n = B.shape[0] // nblocks
    out = np.empty(B.shape, dtype=complex)
    for i in range(nblocks):
        for j in range(nblocks):
            blk = B[i * n:(i + 1) * n, j * n:(j + 1) * n]
            out[i * n:(i + 1) * n, j * n:(j + 1) * n] = np.fft.ifft(np.fft.fft(blk, axis=1), axis=0)
    return out


def multiplier_matrix(symbol: np.ndarray) -> np.ndarray:
    """Physical-space matrix of the Fourier multiplier with values ``symbol`` (FFT order)."""
    n = symbol.shape[0]
    return np.fft.ifft(symbol[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0)


def quantize(symbol_xk: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Standard (left) quantisation: (Op(b) f)(x_j) = sum_k b(x_j, xi_k) f_k e^{i xi_k x_j}.

    ``symbol_xk[j, k]`` is b(x_j, xi_k) with xi in FFT order.
    """
    E = np.exp(1j * np.outer(grid.x, grid.xi))
    return (symbol_xk * E) @ (E.conj().T / grid.N)


def weights_for(tags, xi, eta, a, nblocks):
    tags = (tags,) * nblocks if isinstance(tags, str) else tuple(tags)
    if len(tags) != nblocks:
        raise ValueError("number of norm tags does not match the block structure")
    return np.concatenate([norm_weight(t, xi, eta, a) for t in tags])


def weighted_fourier(A: OperatorMatrix, xi: np.ndarray) -> np.ndarray:
    """W_dst F A F^{-1} W_src^{-1}."""
    n = xi.shape[0]
    nblocks = A.shape[0] // n
    B = to_fourier(np.asarray(A.entries, dtype=complex), nblocks)
    wd = weights_for(A.dst_norm, xi, A.eta, A.a, nblocks)
    ws = weights_for(A.src_norm, xi, A.eta, A.a, nblocks)
    return wd[:, None] * B / ws[None, :]


def operator_norm(A: OperatorMatrix, xi: np.ndarray | None = None, method: str = "auto",
                  iterations: int = 20, restarts: int = 3, seed: int = 0) -> float:
    """Largest singular value of W_dst F A F^{-1} W_src^{-1}.

    ``xi`` defaults to the FFT wavenumbers of a unit-spacing grid only when
    both tags are L2 (weights are then irrelevant).  ``method`` is ``"svd"``,
    ``"power"`` (randomised power iteration) or ``"auto"`` (SVD up to
    dimension 1024).
    """
    if xi is None:
        if not (_all_l2(A.src_norm) and _all_l2(A.dst_norm)):
            raise ValueError("weighted norms need the grid wavenumbers")
        B = np.asarray(A.entries, dtype=complex)
    else:
        B = weighted_fourier(A, xi)
    if method == "auto":
        method = "svd" if B.shape[0] <= 1024 else "power"
    if method == "svd":
        return float(np.linalg.norm(B, 2))
    if method == "power":
        rng = np.random.default_rng(seed)
        best = 0.0
        for _ in range(restarts):
            v = rng.standard_normal(B.shape[1]) + 1j * rng.standard_normal(B.shape[1])
            v /= np.linalg.norm(v)
            s = 0.0
            for _ in range(iterations):
                w = B.conj().T @ (B @ v)
                s = np.linalg.norm(w)
                if s == 0.0:
                    break
                v = w / s
            best = max(best, float(np.sqrt(s)))
        return best
    raise ValueError(f"unknown method {method!r}")


def _all_l2(tags) -> bool:
    return tags == "L2" if isinstance(tags, str) else all(t == "L2" for t in tags)


# ---------------------------------------------------------------------------
# flat surface
# ---------------------------------------------------------------------------

def apply_flat_dn(f: np.ndarray, eta: float, a: float, grid: Grid1D) -> np.ndarray:
    """Multiply by mu_a tanh mu_a in Fourier space."""
    sym = flat_dn_symbol(grid.xi, eta, a)
    return np.fft.ifft(sym * np.fft.fft(f, axis=-1), axis=-1)


def flat_dn_matrix(eta: float, a: float, grid: Grid1D) -> OperatorMatrix:
    return OperatorMatrix(multiplier_matrix(flat_dn_symbol(grid.xi, eta, a)), eta=eta, a=a)


# ---------------------------------------------------------------------------
# curved strip
# ---------------------------------------------------------------------------

class _StripSolver:
    """Reusable factorisation for one (eta, a, profile, strip) combination."""

    def __init__(self, eta: float, a: float, profile: SolitonProfile, grid: StripGrid):
        if profile.grid != grid.x_grid:
            raise ValueError("profile and strip grid must share the same x grid")
        self.grid = grid
        self.eta, self.a = float(eta), float(a)
        xg = grid.x_grid
        M = grid.M
        self.xi = xg.xi
        s = grid.z_nodes
        D = cheb_diff(M)
        self.D, self.D2 = D, D @ D

        mu2 = (self.xi + 1j * a) ** 2 + eta**2
        blocks = np.broadcast_to(self.D2.astype(complex), (xg.N, M, M)).copy()
        blocks -= mu2[:, None, None] * np.eye(M)[None]
        blocks[:, 0, :] = 0.0
        blocks[:, 0, 0] = 1.0
        blocks[:, M - 1, :] = D[M - 1]
        cond = np.linalg.cond(blocks)
        if not np.all(np.isfinite(cond)) or np.max(cond) > 1e13:
            k = int(np.argmax(np.where(np.isfinite(cond), cond, np.inf)))
            raise SingularSystemError(
                f"flat strip block singular at xi={self.xi[k]:.6g} (eta={eta}, a={a}); "
                "cosh(mu_a) vanishes there")
        self.inv = np.linalg.inv(blocks)  # (N, M, M)

        z, dz, ddz = profile.zeta_c, profile.dzeta_c, profile.ddzeta_c
        self.flat = bool(profile.is_flat)
        one_s = (1.0 + s)[None, :]
        inv1z = (1.0 / (1.0 + z))[:, None]
        kappa = dz[:, None] * one_s * inv1z
        kappa_s = (dz / (1.0 + z))[:, None]
        kappa_x = one_s * (ddz[:, None] * inv1z - (dz**2)[:, None] * inv1z**2)
        self.c_xs = -2.0 * kappa
        self.c_ss = kappa**2 + inv1z**2 - 1.0
        self.c_s = 2.0 * a * kappa + kappa * kappa_s - kappa_x
        self.flux_s = (1.0 + dz**2) / (1.0 + z)
        self.dz = dz

    # arrays have layout (N, M, R): x index, s index, right-hand sides
    def _perturbation(self, u_hat):
        u = np.fft.ifft(u_hat, axis=0)
        ux = np.fft.ifft(1j * self.xi[:, None, None] * u_hat, axis=0)
        us = self.D @ u
        return (self.c_xs[..., None] * (self.D @ ux) + self.c_ss[..., None] * (self.D2 @ u)
                + self.c_s[..., None] * us)

    def _flat_part(self, u_hat):
        mu2 = (self.xi + 1j * self.a) ** 2 + self.eta**2
        return np.fft.ifft(self.D2 @ u_hat - mu2[:, None, None] * u_hat, axis=0)

    def solve(self, f: np.ndarray, tol: float = 1e-13, max_iter: int = 80, forcing=None):
        """Return u_hat (N, M, R) for Dirichlet data f of shape (N, R).

        ``forcing`` (N, M, R), if given, is an interior source: L u = forcing.
        """
        N, M = self.grid.x_grid.N, self.grid.M
        f_hat = np.fft.fft(f, axis=0)
        if forcing is None:
            forcing = np.zeros((N, M, f.shape[1]), dtype=complex)
        rhs = np.fft.fft(forcing, axis=0)
        rhs[:, 0, :] = f_hat
        rhs[:, M - 1, :] = 0.0
        u_hat = self.inv @ rhs
        if self.flat:
            return u_hat, 0, 0.0
        scale = max(np.linalg.norm(u_hat), 1e-300)
        it = 0
        for it in range(1, max_iter + 1):
            r = forcing - self._perturbation(u_hat)
            rhs = np.fft.fft(r, axis=0)
            rhs[:, 0, :] = f_hat
            rhs[:, M - 1, :] = 0.0
            new = self.inv @ rhs
            change = np.linalg.norm(new - u_hat) / scale
            u_hat = new
            if change < tol:
                break
        else:
            raise RuntimeError(f"strip iteration did not converge (last change {change:.3e})")
        return u_hat, it, change

    def residual(self, u_hat) -> float:
        """Backward-error style residual ||L u|| / (||L|| ||u||) at interior nodes."""
        full = self._flat_part(u_hat) + self._perturbation(u_hat)
        interior = slice(1, self.grid.M - 1)
        u = np.fft.ifft(u_hat, axis=0)
        scale = (np.linalg.norm(self.D2, 2) + np.max(self.xi**2) + self.a**2 + self.eta**2
                 + 2.0 * abs(self.a) * np.max(np.abs(self.xi)))
        den = scale * np.linalg.norm(u) + 1e-300
        return float(np.linalg.norm(full[:, interior]) / den)

    def flux(self, u_hat, shift: bool = True) -> np.ndarray:
        """(1+zeta'^2)/(1+zeta) d_s Psi - zeta' (d_x - a) Psi at s = 0."""
        us0 = np.fft.ifft(np.einsum("m,nmr->nr", self.D[0], u_hat), axis=0)
        top_hat = u_hat[:, 0, :]
        shift_a = self.a if shift else 0.0
        ux0 = np.fft.ifft((1j * self.xi - shift_a)[:, None] * top_hat, axis=0)
        return self.flux_s[:, None] * us0 - self.dz[:, None] * ux0


def solve_elliptic_strip(f: np.ndarray, eta: float, a: float, profile: SolitonProfile,
                         grid: StripGrid, tol: float = 1e-13) -> PotentialField:
    """Potential on the flattened strip for surface datum f."""
    solver = _StripSolver(eta, a, profile, grid)
    f = np.asarray(f, dtype=complex)
    u_hat, its, _ = solver.solve(f[:, None], tol=tol)
    res = solver.residual(u_hat)
    values = np.fft.ifft(u_hat[:, :, 0], axis=0)
    trace_ok = bool(np.allclose(values[:, 0], f, atol=1e-10 * max(1.0, np.abs(f).max())))
    return PotentialField(values=values, trace_ok=trace_ok, residual=res, iterations=its)


def apply_dn(f: np.ndarray, eta: float, a: float, profile: SolitonProfile, grid: StripGrid,
             flux_shift: bool = True) -> np.ndarray:
    """G_{a,eta}[zeta_c] f via the strip solve and the boundary flux.

    ``flux_shift=False`` uses d_x instead of (d_x - a) in the flux, for
    comparison with the unshifted way of writing the flux.
    """
    solver = _StripSolver(eta, a, profile, grid)
    f = np.asarray(f, dtype=complex)
    u_hat, _, _ = solver.solve(f[:, None])
    return solver.flux(u_hat, shift=flux_shift)[:, 0]


def apply_dn_from_derivative(df: np.ndarray, profile: SolitonProfile, grid: StripGrid,
                             tol: float = 1e-13) -> np.ndarray:
    """G[zeta_c] f at a = eta = 0 for f known only through f' = ``df``.

    f itself may tend to different constants at the two ends, so it has no
    periodic representation.  The Dirichlet datum is lifted as u0(x, s) = f(x);
    the periodic remainder solves the strip problem with source -f'' and zero
    trace.  Constants are in the kernel of G, so only f' is needed.
    """
    solver = _StripSolver(0.0, 0.0, profile, grid)
    xg = grid.x_grid
    df = np.asarray(df, dtype=complex)
    ddf = np.fft.ifft(1j * xg.xi * np.fft.fft(df))
    forcing = np.broadcast_to(-ddf[:, None, None], (xg.N, grid.M, 1)).copy()
    u_hat, _, _ = solver.solve(np.zeros((xg.N, 1), dtype=complex), tol=tol, forcing=forcing)
    us0 = np.fft.ifft(np.einsum("m,nmr->nr", solver.D[0], u_hat), axis=0)[:, 0]
    wx0 = np.fft.ifft(1j * xg.xi * u_hat[:, 0, 0])
    return solver.flux_s * us0 - solver.dz * (df + wx0)


def dn_matrix(eta: float, a: float, profile: SolitonProfile, grid: StripGrid,
              flux_shift: bool = True, batch: int = 64) -> OperatorMatrix:
    """Dense matrix of G_{a,eta}[zeta_c] in the physical basis."""
    N = grid.x_grid.N
    if profile.is_flat:
        return flat_dn_matrix(eta, a, grid.x_grid)
    solver = _StripSolver(eta, a, profile, grid)
    G = np.empty((N, N), dtype=complex)
    eye = np.eye(N)
    for start in range(0, N, batch):
        cols = eye[:, start:start + batch].astype(complex)
        u_hat, _, _ = solver.solve(cols)
        G[:, start:start + batch] = solver.flux(u_hat, shift=flux_shift)
    return OperatorMatrix(G, eta=eta, a=a, meta={"kind": "strip", "M": grid.M})


# ---------------------------------------------------------------------------
# pseudodifferential approximations
# ---------------------------------------------------------------------------

DN_APPROX_KINDS = ("principal", "modified", "first_order")


def dn_approx_symbol(eta: float, params: Params, profile: SolitonProfile, kind: str,
                     grid: Grid1D, printed_sign: bool = False) -> np.ndarray:
    """b(x_j, xi_k) for the requested approximation (xi in FFT order).

    ``first_order`` is mu tanh mu + zeta_c mu^2 (1 - tanh^2 mu), the shape
    derivative of the flat operator; ``printed_sign=True`` flips the sign of
    the correction for comparison.
    """
    if kind not in DN_APPROX_KINDS:
        raise ValueError(f"kind must be one of {DN_APPROX_KINDS}")
    a = params.a
    X, XI = np.meshgrid(grid.x, grid.xi, indexing="ij")
    if kind in ("principal", "modified"):
        if abs(eta) < 2.0:
            raise ValueError("principal/modified symbols are used for |eta| >= 2 only")
        lam = _lambda1_from_slope(profile.dzeta_c[:, None], XI, eta, a)
        return lam if kind == "principal" else lam * stable_tanh(lam)
    if abs(eta) > 2.0:
        raise ValueError("first_order symbol is used for |eta| <= 2 only")
    mu = mu_a(grid.xi, eta, a)[None, :]
    th = stable_tanh(mu)
    corr = profile.zeta_c[:, None] * mu**2 * (1.0 - th**2)
    return mu * th + (-corr if printed_sign else corr)


def dn_approx(eta: float, params: Params, profile: SolitonProfile, kind: str, grid: Grid1D,
              printed_sign: bool = False) -> OperatorMatrix:
    """Standard quantisation of a Dirichlet-Neumann symbol approximation."""
    b = dn_approx_symbol(eta, params, profile, kind, grid, printed_sign)
    return OperatorMatrix(quantize(b, grid), eta=eta, a=params.a, meta={"kind": kind})


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------

_MAGIC = b"WSOPMAT1"


def dump_matrix(path: str | Path, op: OperatorMatrix) -> None:
    """Write ``op`` as: magic, uint32 header length, JSON header, row-major complex128 (LE)."""
    ent = np.ascontiguousarray(op.entries, dtype="<c16")
    header = json.dumps({"rows": ent.shape[0], "cols": ent.shape[1],
                         "src_norm": op.src_norm, "dst_norm": op.dst_norm,
                         "eta": op.eta, "a": op.a}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(ent.tobytes(order="C"))


def load_matrix(path: str | Path) -> OperatorMatrix:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not an operator-matrix file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        data = np.frombuffer(fh.read(), dtype="<c16")
    ent = data.reshape(header["rows"], header["cols"]).copy()
    tag = lambda t: t if isinstance(t, str) else tuple(t)  # noqa: E731
    return OperatorMatrix(ent, tag(header["src_norm"]), tag(header["dst_norm"]),
                          header["eta"], header["a"])


def composed_weights(xi: np.ndarray, eta: float, a: float, tags: Sequence[str]) -> np.ndarray:
    return np.concatenate([norm_weight(t, xi, eta, a) for t in tags])
