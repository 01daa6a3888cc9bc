"""Batch driver: YAML configuration, check orchestration and report emission.

Every check returns a JSON-ready result, a pass flag, the citation strings of
the code it exercised and optional CSV side tables.  ``run`` executes the
checks listed in a configuration file; the other subcommands build a
one-check configuration from flags.

Exit status: 0 all checks pass, 1 some check fails, 2 invalid configuration
or usage, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import dn_solver, kp2, resolvent_lab, soliton, symbols, waveop
from .symbols import CHECK_IDS, Params, RegionTag

log = logging.getLogger("wavestab")

WORKERS_ENV = "WAVESTAB_WORKERS"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# configuration schema
# ---------------------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ParamsModel(_Strict):
    epsilon: float = Field(gt=0.0, le=0.2)
    a_hat: float = Field(default=0.4, gt=0.0, lt=symbols.A_HAT_MAX)
    beta: float = Field(default=0.01, gt=0.0)
    A: float = Field(default=6.0, gt=0.0)
    K: float = Field(default=1.5, gt=0.0)
    delta: float = Field(default=0.5, gt=0.0, lt=1.0)
    eta_hat0: float = Field(default=0.2, gt=0.0)

    @model_validator(mode="after")
    def _consistent(self):
        problems = Params.violations(self.to_params(check=False))
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def to_params(self, check: bool = True) -> Params:
        if check:
            return Params(**self.model_dump())
        # bypass validation so cross-field problems can be reported by name
        p = object.__new__(Params)
        for k, v in self.model_dump().items():
            object.__setattr__(p, k, v)
        object.__setattr__(p, "gamma", 1.0 - self.epsilon**2)
        return p


class LambdaRect(_Strict):
    im_max: float = Field(default=10.0, gt=0.0)
    n_im: int = Field(default=41, ge=1)
    n_re: int = Field(default=2, ge=1)
    re_max: float = 1.0


class GridsModel(_Strict):
    X: float | None = Field(default=None, gt=0.0)
    N: int = Field(default=512, ge=16)
    M: int = Field(default=24, ge=16)
    eta_samples: int = Field(default=17, ge=3)
    lambda_rect: LambdaRect = Field(default_factory=LambdaRect)

    @field_validator("N")
    @classmethod
    def _power_of_two(cls, n):
        if n & (n - 1):
            raise ValueError(f"N must be a power of two, got {n}")
        return n

    @field_validator("eta_samples")
    @classmethod
    def _odd(cls, n):
        if n % 2 == 0:
            raise ValueError(f"eta_samples must be odd so that eta = 0 is a sample, got {n}")
        return n


class CheckEntry(_Strict):
    id: str
    options: dict[str, Any] = Field(default_factory=dict)

    @field_validator("id")
    @classmethod
    def _known(cls, v):
        if v not in CHECKS:
            raise ValueError(f"unknown check {v!r}; known checks: {', '.join(sorted(CHECKS))}")
        return v


class Config(_Strict):
    params: ParamsModel
    grids: GridsModel = Field(default_factory=GridsModel)
    checks: list[CheckEntry] = Field(default_factory=list)
    output_dir: str = "reports"
    seed: int = 0
    workers: int | None = Field(default=None, ge=1)

    @field_validator("checks", mode="before")
    @classmethod
    def _strings(cls, v):
        if v is None:
            return []
        return [{"id": c} if isinstance(c, str) else c for c in v]


def load_config(path) -> Config:
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError("configuration must be a mapping")
    return Config.model_validate(data)


# ---------------------------------------------------------------------------
# shared context
# ---------------------------------------------------------------------------

@dataclass
class Context:
    """Objects derived from a configuration, built lazily and cached."""

    config: Config
    _cache: dict = field(default_factory=dict)

    @property
    def params(self) -> Params:
        return self.config.params.to_params()

    def grid(self, params: Params | None = None) -> soliton.Grid1D:
        p = params or self.params
        X = self.config.grids.X or 30.0 / p.epsilon
        return soliton.Grid1D(X, self.config.grids.N)

    def strip(self, params: Params | None = None) -> dn_solver.StripGrid:
        return dn_solver.StripGrid(self.grid(params), self.config.grids.M)

    def profile(self, params: Params | None = None) -> soliton.SolitonProfile:
        p = params or self.params
        key = ("profile", p.epsilon, self.grid(p))
        if key not in self._cache:
            self._cache[key] = soliton.build_profile(p.epsilon, self.grid(p))
        return self._cache[key]

    def curve(self, params: Params | None = None) -> waveop.ModeCurve:
        p = params or self.params
        key = ("curve", p, self.grid(p), self.config.grids.M, self.config.grids.eta_samples)
        if key not in self._cache:
            em = p.epsilon**2 * p.eta_hat0
            etas = np.linspace(-em, em, self.config.grids.eta_samples)
            self._cache[key] = waveop.trace_resonant_modes(p, etas, self.strip(p), self.profile(p))
        return self._cache[key]

    def projector(self, params: Params | None = None) -> waveop.ProjectorPair:
        p = params or self.params
        return waveop.spectral_projection(p.epsilon**2 * p.eta_hat0, self.curve(p), p,
                                          self.strip(p))


@dataclass
class CheckResult:
    result: dict
    passed: bool
    citations: list[str]
    tables: dict[str, list[dict]] = field(default_factory=dict)


Check = Callable[[Context, dict], CheckResult]
CHECKS: dict[str, Check] = {}


def check(name: str):
    def register(fn: Check) -> Check:
        CHECKS[name] = fn
        return fn
    return register


def _opt(options: dict, key: str, default):
    return options.get(key, default)


def _with(params: Params, options: dict, *keys) -> Params:
    changes = {k: options[k] for k in keys if k in options}
    return params.replace(**changes) if changes else params


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

_SYMBOL_STATEMENTS = {
    "lem-ev-HT": "max Re lambda1_pm(x, xi, eta) <= -a/4 for |eta| >= 2",
    "im-three-fifths": "|Im sqrt(lambda1 tanh lambda1)| <= 3a/5 for |eta| >= 2",
    "lem-sym-Ga0-UH": "0 <= Re sqrt(-mu_a tanh mu_a) <= a(1 - c delta)",
    "lem-sym-Ga0-I": "0 <= Re sqrt(-mu_a tanh mu_a) <= a(1 - c A eps^2)",
    "relambdapm": "max Re lambda0_pm(xi, eta) <= -a eps^2/4",
    "lampm1-minus": "Re(lambda - lambda0_-) >= a - beta eps^3 on Omega",
    "g-eta-bounded": "1/2 <= |g_eta(x, xi, eta)| <= 2 for |eta| >= 2",
}


def _symbol_check(check_id: str) -> Check:
    def run(ctx: Context, options: dict) -> CheckResult:
        p = _with(ctx.params, options, "epsilon", "a_hat")
        profile = ctx.profile(p) if check_id in ("lem-ev-HT", "im-three-fifths",
                                                 "g-eta-bounded") else None
        rep = symbols.verify(check_id, p, profile, n_xi=int(_opt(options, "n_xi", 41)),
                             n_eta=int(_opt(options, "n_eta", 49)))
        return CheckResult(rep.as_dict(), rep.pass_,
                           [f"wavestab.symbols.verify[{check_id}]", _SYMBOL_STATEMENTS[check_id]])
    return run


for _cid in CHECK_IDS:
    CHECKS[f"symbols/{_cid}"] = _symbol_check(_cid)


@check("dn/flat-equivalence")
def _dn_flat(ctx: Context, options: dict) -> CheckResult:
    p = ctx.params
    grid = ctx.grid()
    strip = ctx.strip()
    eta = float(_opt(options, "eta", 3.0))
    tol = float(_opt(options, "tol", 1e-8))
    x = grid.x
    f = np.exp(-(x * p.epsilon / 5.0) ** 2) * np.cos(p.epsilon * x)
    flat = soliton.SolitonProfile.flat(grid, p.epsilon)
    g = dn_solver.apply_dn(f, eta, p.a, flat, strip)
    g0 = dn_solver.apply_flat_dn(f, eta, p.a, grid)
    rel = float(np.linalg.norm(g - g0) / np.linalg.norm(g0))
    return CheckResult({"eta": eta, "relative_difference": rel, "tolerance": tol}, rel <= tol,
                       ["wavestab.dn_solver.apply_dn", "G_a[0] f = F^{-1} mu_a tanh(mu_a) F f"])


@check("dn/approx-order")
def _dn_order(ctx: Context, options: dict) -> CheckResult:
    eta = float(_opt(options, "eta", 3.0))
    eps_list = [float(e) for e in _opt(options, "epsilons", [0.1, 0.05, 0.025])]
    need = float(_opt(options, "min_order", 1.8))
    errors = []
    for e in eps_list:
        p = ctx.params.replace(epsilon=e)
        G = dn_solver.dn_matrix(eta, p.a, ctx.profile(p), ctx.strip(p)).entries
        Ap = dn_solver.dn_approx(eta, p, ctx.profile(p), "modified", ctx.grid(p)).entries
        errors.append(float(np.linalg.norm(G - Ap, 2)))
    order = float(np.polyfit(np.log(eps_list), np.log(errors), 1)[0])
    return CheckResult({"eta": eta, "epsilons": eps_list, "errors": errors, "order": order,
                        "min_order": need}, order >= need,
                       ["wavestab.dn_solver.dn_matrix", "wavestab.dn_solver.dn_approx[modified]",
                        "||G_{a,eta}[zeta_c] - Op(lambda1 tanh lambda1)||_{B(L2)} = O(eps^2)"])


@check("dn/matrix")
def _dn_matrix(ctx: Context, options: dict) -> CheckResult:
    p = ctx.params
    eta = float(_opt(options, "eta", 3.0))
    op = dn_solver.dn_matrix(eta, p.a, ctx.profile(), ctx.strip())
    path = options.get("dump")
    if path:
        dn_solver.dump_matrix(path, op)
    finite = bool(np.all(np.isfinite(op.entries)))
    return CheckResult({"eta": eta, "shape": list(op.shape), "dump": path,
                        "norm_L2": float(np.linalg.norm(op.entries, 2)), "finite": finite},
                       finite, ["wavestab.dn_solver.dn_matrix", "wavestab.dn_solver.dump_matrix",
                                "G_{a,eta}[zeta_c] from the curved strip solve"])


@check("waveop/kernel")
def _kernel(ctx: Context, options: dict) -> CheckResult:
    p = ctx.params
    r = waveop.kernel_check(p, ctx.profile(), ctx.strip())
    factor = float(_opt(options, "factor", 10.0))
    ok = r["res0"] <= factor * p.epsilon**2
    return CheckResult({**r, "bound": factor * p.epsilon**2}, bool(ok),
                       ["wavestab.waveop.kernel_check", "L(0) V0 = 0, L(0) V1 = -V0"])


@check("waveop/ls-coefficients")
def _ls(ctx: Context, options: dict) -> CheckResult:
    c = waveop.ls_coefficients(ctx.params, ctx.grid())
    expect = {"Lambda1": 1 / math.sqrt(3), "Lambda2": 2 * math.sqrt(3) / 9,
              "kappa0": -math.sqrt(3) / 9}
    err = {k: abs(c[k] - expect[k]) for k in expect}
    return CheckResult({"computed": c, "expected": expect, "errors": err},
                       max(err.values()) <= 1e-9,
                       ["wavestab.waveop.ls_coefficients",
                        "Lambda2 = ||v0||_1^2 / (9 ||v0||_2^2), kappa0 = -Lambda2/2"])


@check("modes/trace")
def _trace(ctx: Context, options: dict) -> CheckResult:
    p = _with(ctx.params, options, "epsilon", "a_hat", "eta_hat0")
    curve = ctx.curve(p)
    f = curve.fitted
    tol = float(_opt(options, "tol", 0.15))
    e1 = f["Lambda1"] ** 2 - 1.0 / 3.0
    e2 = f["Lambda2"] - 2 * math.sqrt(3) / 9
    res = {"fitted": f, "Lambda1_sq_error": e1, "Lambda2_error": e2, "tolerance": tol,
           "conjugate_defect": curve.conjugate_defect(),
           "max_residual": float(np.max(curve.residuals)), "meta": curve.meta}
    return CheckResult(res, abs(e1) <= tol and abs(e2) <= tol,
                       ["wavestab.waveop.trace_resonant_modes",
                        "lambda(eta) = i eps Lambda1 eta - Lambda2 eta^2 / eps + ..."],
                       {"modes": list(curve.rows())})


@check("projection/build")
def _projection(ctx: Context, options: dict) -> CheckResult:
    p = ctx.params
    pp = ctx.projector(p)
    curve = ctx.curve(p)
    reality = 0.0
    for Pm in pp.P:
        reality = max(reality, float(np.abs(Pm.entries.imag).max()))
    res = {"idempotency": pp.idempotency_defect(), "biorthogonality": pp.biorthogonality_defect(),
           "reality": reality, "samples": len(pp.P),
           "gram_condition": max(float(np.linalg.cond(g)) for g in pp.gram if g is not None),
           "conjugate_defect": curve.conjugate_defect()}
    ok = res["idempotency"] <= 1e-6 and res["biorthogonality"] <= 1e-6 and reality <= 1e-8
    return CheckResult(res, ok, ["wavestab.waveop.spectral_projection",
                                 "P = sum_k U_k <., U_k*>, <U_j, U_k*> = delta_jk"])


def _resolvent_check(band: RegionTag) -> Check:
    def run(ctx: Context, options: dict) -> CheckResult:
        p = _with(ctx.params, options, "epsilon")
        rect = ctx.config.grids.lambda_rect
        lam = resolvent_lab.omega_grid(p, float(_opt(options, "im_max", rect.im_max)),
                                       int(_opt(options, "n_im", rect.n_im)),
                                       int(_opt(options, "n_re", rect.n_re)),
                                       float(_opt(options, "re_max", rect.re_max)))
        project = band == RegionTag.L_low
        projector = ctx.projector(p) if project else None
        etas = options.get("eta_samples")
        rep = resolvent_lab.resolvent_sweep(
            lam, band, p, ctx.profile(p), ctx.strip(p), project=project, projector=projector,
            eta_samples=etas, safety_factor=float(_opt(options, "safety_factor", 1e3)),
            C0=float(_opt(options, "C0", 1.0)))
        d = rep.as_dict(p, f"resolvent/{band.value}")
        d["norms"] = rep.norms.tolist()
        d["eta_samples"] = rep.eta_samples.tolist()
        rows = [{"re_lambda": z.real, "im_lambda": z.imag, "norm": n}
                for z, n in zip(rep.lambda_grid, rep.norms)]
        return CheckResult(d, rep.pass_, ["wavestab.resolvent_lab.resolvent_sweep",
                                          f"sup ||(lambda - L_a)^-1|| on band {band.value}"],
                           {"resolvent": rows})
    return run


for _band in (RegionTag.UH, RegionTag.I, RegionTag.L_high, RegionTag.L_low,
              RegionTag.S_sing, RegionTag.R_reg):
    CHECKS[f"resolvent/{_band.value}"] = _resolvent_check(_band)


@check("semigroup/q-random")
def _semigroup(ctx: Context, options: dict) -> CheckResult:
    p = ctx.params
    pp = ctx.projector(p)
    grid = ctx.grid()
    eta_hat = float(_opt(options, "eta_hat", p.eta_hat0))
    eta = float(pp.eta_samples[np.argmin(np.abs(pp.eta_samples - eta_hat * p.epsilon**2))])
    rng = np.random.default_rng(ctx.config.seed)
    u = pp.project(eta, rng.standard_normal(2 * grid.N), complement=True)
    T = float(_opt(options, "T", 4e5))
    dt = float(_opt(options, "dt", 0.2))
    trace = resolvent_lab.semigroup_run(u, T, dt, p, ctx.profile(), ctx.strip(), eta_samples=[eta],
                                        projector=pp, fit_from=float(_opt(options, "fit_from", 0.5)))
    floor = -p.a_hat * p.epsilon**3 / 8.0
    return CheckResult({"eta": eta, "fitted_rate": trace.fitted_rate, "rate_floor": floor,
                        "fitted_rate_over_eps3": trace.fitted_rate / p.epsilon**3},
                       trace.fitted_rate <= floor,
                       ["wavestab.resolvent_lab.semigroup_run",
                        "||exp(t L_a) Q|| <= C exp(-beta eps^3 t)"],
                       {"decay": list(trace.rows())})


@check("energy/s-band")
def _energy(ctx: Context, options: dict) -> CheckResult:
    p = ctx.params
    eta = float(_opt(options, "eta", p.epsilon))
    state = resolvent_lab.random_band_state("s", eta, p, ctx.grid(), seed=ctx.config.seed)
    times = np.linspace(0.0, float(_opt(options, "T", 2000.0)), int(_opt(options, "n_times", 9)))
    tr = resolvent_lab.energy_trace(state, "s", times, p, ctx.profile(), ctx.strip(), eta)
    ratio = tr["dissipation"] / tr["value"]
    bound = -p.delta**2 * p.a / 8.0
    return CheckResult({"eta": eta, "times": times.tolist(), "ratio": ratio.tolist(),
                        "bound": bound, "worst_ratio": float(ratio.max())},
                       bool(np.all(ratio <= bound)),
                       ["wavestab.resolvent_lab.energy_trace",
                        "d/dt E_s <= -(delta^2 a / 4) E_s for the homogeneous band evolution"])


@check("commutator/w_c")
def _commutator(ctx: Context, options: dict) -> CheckResult:
    p = ctx.params
    grid = ctx.grid()
    eta = float(_opt(options, "eta", 0.5))
    cap = 1.0 / p.epsilon

    def A(x):
        return np.where(np.abs(x) <= cap,
                        symbols.branch_sqrt(symbols.flat_dn_symbol(x, eta, -p.a)), 0.0)

    def cut(x):
        return (np.abs(x) >= p.delta).astype(float)

    r = resolvent_lab.commutator_check(A, cut, cut, ctx.profile().w_c, 0.0, grid)
    return CheckResult(r, bool(r["finite"] and r["measured"] <= r["bound"]),
                       ["wavestab.resolvent_lab.commutator_check",
                        "||A [B, f] W|| <= C_s C_{f,s}"])


@check("kp2/modes")
def _kp_modes(ctx: Context, options: dict) -> CheckResult:
    eta = float(_opt(options, "eta", 0.1))
    a_hat = float(_opt(options, "a_hat", 0.3))
    grid = soliton.Grid1D(float(_opt(options, "X", 80.0)), int(_opt(options, "N", 1024)))
    m = kp2.explicit_modes(eta, a_hat, grid)
    lam = complex(m["lambda_kp"])
    closed = kp2.kp_eigenvalue_closed_form(eta)
    ok = lam.real < 0 if eta != 0 else abs(lam) <= 1e-8
    return CheckResult({"eta": eta, "a_hat": a_hat, "lambda_kp": [lam.real, lam.imag],
                        "closed_form": [closed.real, closed.imag]}, bool(ok),
                       ["wavestab.kp2.explicit_modes",
                        "Rayleigh quotient of L_KP on the explicit resonant mode"])


@check("kp2/resolvent")
def _kp_resolvent(ctx: Context, options: dict) -> CheckResult:
    a_hat = float(_opt(options, "a_hat", 0.3))
    eta0 = float(_opt(options, "eta0", 0.1))
    grid = soliton.Grid1D(float(_opt(options, "X", 80.0)), int(_opt(options, "N", 1024)))
    im_max = float(_opt(options, "im_max", 5.0))
    lam = 1j * np.linspace(-im_max, im_max, int(_opt(options, "n_im", 21)))
    rep = kp2.kp_resolvent_bound(lam, eta0, a_hat, grid)
    return CheckResult(rep.as_dict(), bool(rep.pass_),
                       ["wavestab.kp2.kp_resolvent_bound",
                        "sup ||(2 Lambda - L_KP^a)^-1|| on range(Q_KP)"])


@check("kp2/bridge")
def _kp_bridge(ctx: Context, options: dict) -> CheckResult:
    p = ctx.params
    K = float(_opt(options, "K", 1.0))
    parts = [kp2.kp_approx_parts(p, ctx.strip(), K=k) for k in (K, 2 * K)]
    ratio = parts[0]["total"] / parts[1]["total"]
    return CheckResult({"K": [K, 2 * K], "parts": parts, "shrink_ratio": ratio,
                        "expected_ratio": [4.0, 12.0]}, 4.0 <= ratio <= 12.0,
                       ["wavestab.kp2.kp_approx_parts",
                        "(-lambda0_+ - R11) chi = (eps^3/2)(-L_KP^a) chi + R"])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _clean(obj):
    """JSON-ready copy: numpy scalars unwrapped, complex as [re, im], non-finite as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [_clean(float(obj.real)), _clean(float(obj.imag))]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, RegionTag):
        return obj.value
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def _snapshot(config: Config, entry: CheckEntry) -> dict:
    data = config.model_dump(exclude={"checks", "output_dir", "workers"})
    flat = dict(data.pop("params"))
    flat.update({"grids": data["grids"], "seed": data["seed"], "options": entry.options})
    return flat


def _report_name(check_id: str) -> str:
    return check_id.replace("/", "__")


def _run_one(ctx: Context, entry: CheckEntry) -> tuple[dict, dict, bool]:
    try:
        res = CHECKS[entry.id](ctx, dict(entry.options))
        report = {"check_id": entry.id, "params": _snapshot(ctx.config, entry), "result": res.result,
                  "pass": bool(res.passed), "citations": res.citations}
        return report, res.tables, False
    except Exception as exc:  # noqa: BLE001  reported as an internal error
        log.exception("check %s raised", entry.id)
        report = {"check_id": entry.id, "params": _snapshot(ctx.config, entry),
                  "result": {"error": f"{type(exc).__name__}: {exc}"}, "pass": False,
                  "citations": []}
        return report, {}, True


def _write_table(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        for row in rows:
            wr.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                         for k, v in row.items()})


def worker_count(config: Config) -> int:
    if config.workers:
        return config.workers
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return 1


def execute(config: Config, write: bool = True, echo_json: bool = False,
            csv_path: str | None = None, out=None) -> int:
    """Run the configured checks; returns the exit status."""
    out = out or sys.stdout
    ctx = Context(config)
    outdir = Path(config.output_dir)
    if write:
        outdir.mkdir(parents=True, exist_ok=True)
    entries = config.checks
    workers = worker_count(config)
    if workers > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: _run_one(ctx, s), entries))
    else:
        results = [_run_one(ctx, s) for s in entries]
    errored = False
    failed = 0
    summary = []
    for entry, (report, tables, err) in zip(entries, results):
        errored |= err
        failed += 0 if report["pass"] else 1
        name = _report_name(entry.id)
        text = dumps(report)
        if write:
            (outdir / f"{name}.json").write_text(text)
            for tname, rows in tables.items():
                _write_table(outdir / f"{name}.{tname}.csv", rows)
        if csv_path:
            for rows in tables.values():
                _write_table(Path(csv_path), rows)
                break
        if echo_json:
            out.write(text)
        else:
            status = "ERROR" if err else ("PASS" if report["pass"] else "FAIL")
            out.write(f"{status} {entry.id}\n")
        summary.append({"check_id": entry.id, "pass": report["pass"], "error": err})
    if write:
        (outdir / "summary.json").write_text(dumps({"checks": summary, "total": len(entries),
                                                    "failed": failed}))
    if not echo_json:
        out.write(f"{len(entries) - failed}/{len(entries)} checks passed\n" if entries
                  else "no checks configured\n")
    if errored:
        return EXIT_INTERNAL
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def parse_grid(text: str) -> dict:
    """'N=256,X=600,M=24' -> {'N': 256, 'X': 600.0, 'M': 24}."""
    out = {}
    for part in filter(None, (s.strip() for s in text.split(","))):
        key, sep, value = part.partition("=")
        if not sep or key not in ("N", "X", "M"):
            raise ValueError(f"bad --grid entry {part!r}; expected N=..., X=... or M=...")
        out[key] = float(value) if key == "X" else int(value)
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, params: bool = True) -> None:
    if params:
        p.add_argument("--epsilon", type=float, default=0.05)
        p.add_argument("--a-hat", type=float, default=0.4)
        p.add_argument("--eta-hat0", type=float, default=None)
    p.add_argument("--grid", default=None, help="grid overrides, e.g. N=256,X=600,M=24")
    p.add_argument("--json", action="store_true", help="print the JSON report")
    p.add_argument("--csv", default=None, metavar="PATH", help="write the check's CSV table")
    p.add_argument("--output-dir", default=None, help="also write reports to this directory")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wavestab", description="transverse stability checks for line solitary waves")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run the checks of a YAML configuration")
    p.add_argument("config")
    p.add_argument("--json", action="store_true")

    sym = sub.add_parser("symbols").add_subparsers(dest="action", required=True,
                                                   parser_class=_Parser)
    p = sym.add_parser("verify")
    p.add_argument("--check", required=True, choices=CHECK_IDS)
    _common(p)

    dn = sub.add_parser("dn").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = dn.add_parser("check")
    p.add_argument("--kind", choices=("flat-equivalence", "approx-order", "matrix"),
                   default="flat-equivalence")
    p.add_argument("--eta", type=float, default=3.0)
    p.add_argument("--dump", default=None, metavar="PATH",
                   help="with --kind matrix, write the matrix in the binary container format")
    _common(p)

    modes = sub.add_parser("modes").add_subparsers(dest="action", required=True,
                                                   parser_class=_Parser)
    p = modes.add_parser("trace")
    p.add_argument("--samples", type=int, default=17)
    _common(p)

    proj = sub.add_parser("projection").add_subparsers(dest="action", required=True,
                                                       parser_class=_Parser)
    _common(proj.add_parser("build"))

    res = sub.add_parser("resolvent").add_subparsers(dest="action", required=True,
                                                     parser_class=_Parser)
    p = res.add_parser("sweep")
    p.add_argument("--band", required=True, choices=[t.value for t in RegionTag])
    p.add_argument("--im-max", type=float, default=10.0)
    p.add_argument("--n-im", type=int, default=41)
    _common(p)

    semi = sub.add_parser("semigroup").add_subparsers(dest="action", required=True,
                                                      parser_class=_Parser)
    p = semi.add_parser("run")
    p.add_argument("--T", type=float, default=4e5)
    p.add_argument("--dt", type=float, default=0.2)
    p.add_argument("--eta-hat", type=float, default=None)
    _common(p)

    kp = sub.add_parser("kp2").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = kp.add_parser("modes")
    p.add_argument("--eta", type=float, default=0.1)
    _common(p)
    p = kp.add_parser("resolvent")
    p.add_argument("--eta0", type=float, default=0.1)
    p.add_argument("--im-max", type=float, default=5.0)
    _common(p)
    p = kp.add_parser("bridge")
    p.add_argument("--K", type=float, default=1.0)
    _common(p)

    rep = sub.add_parser("report").add_subparsers(dest="action", required=True,
                                                  parser_class=_Parser)
    p = rep.add_parser("summarize")
    p.add_argument("directory")
    p.add_argument("--json", action="store_true")
    return parser


def _single(args, check_id: str, options: dict, **grid_fields) -> Config:
    params = {"epsilon": args.epsilon, "a_hat": args.a_hat}
    if args.eta_hat0 is not None:
        params["eta_hat0"] = args.eta_hat0
    grids = parse_grid(args.grid) if args.grid else {}
    grids.update(grid_fields)
    return Config.model_validate({"params": params, "grids": grids,
                                  "checks": [{"id": check_id, "options": options}],
                                  "output_dir": args.output_dir or ".", "seed": args.seed})


def _config_from_args(args) -> Config:
    cmd, action = args.command, getattr(args, "action", None)
    if cmd == "symbols":
        return _single(args, f"symbols/{args.check}", {})
    if cmd == "dn":
        opts = {"eta": args.eta}
        if args.dump:
            opts["dump"] = args.dump
        return _single(args, f"dn/{args.kind}", opts)
    if cmd == "modes":
        return _single(args, "modes/trace", {}, eta_samples=args.samples)
    if cmd == "projection":
        return _single(args, "projection/build", {})
    if cmd == "resolvent":
        return _single(args, f"resolvent/{args.band}", {"im_max": args.im_max, "n_im": args.n_im})
    if cmd == "semigroup":
        opts = {"T": args.T, "dt": args.dt}
        if args.eta_hat is not None:
            opts["eta_hat"] = args.eta_hat
        return _single(args, "semigroup/q-random", opts)
    if cmd == "kp2":
        if action == "modes":
            return _single(args, "kp2/modes", {"eta": args.eta, "a_hat": args.a_hat})
        if action == "resolvent":
            return _single(args, "kp2/resolvent", {"eta0": args.eta0, "a_hat": args.a_hat,
                                                   "im_max": args.im_max})
        return _single(args, "kp2/bridge", {"K": args.K})
    raise ValueError(f"unknown command {cmd!r}")


def summarize(directory, echo_json: bool = False, out=None) -> int:
    out = out or sys.stdout
    reports = []
    for path in sorted(Path(directory).glob("*.json")):
        if path.name == "summary.json":
            continue
        data = json.loads(path.read_text())
        if not {"check_id", "pass"} <= set(data):
            continue
        reports.append({"check_id": data["check_id"], "pass": bool(data["pass"]),
                        "error": "error" in data.get("result", {})})
    failed = sum(not r["pass"] for r in reports)
    if echo_json:
        out.write(dumps({"checks": reports, "total": len(reports), "failed": failed}))
    else:
        for r in reports:
            out.write(f"{'PASS' if r['pass'] else 'FAIL'} {r['check_id']}\n")
        out.write(f"{len(reports) - failed}/{len(reports)} checks passed\n")
    if any(r["error"] for r in reports):
        return EXIT_INTERNAL
    return EXIT_FAIL if failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            config = load_config(args.config)
            return execute(config, write=True, echo_json=args.json)
        if args.command == "report":
            return summarize(args.directory, echo_json=args.json)
        config = _config_from_args(args)
        return execute(config, write=args.output_dir is not None, echo_json=args.json,
                       csv_path=args.csv)
    except ValidationError as exc:
        for err in exc.errors():
            loc = ".".join(str(x) for x in err["loc"]) or "config"
            sys.stderr.write(f"invalid configuration: {loc}: {err['msg']}\n")
        return EXIT_CONFIG
    except (ValueError, OSError, yaml.YAMLError) as exc:
        sys.stderr.write(f"invalid configuration: {exc}\n")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001  last-resort guard for the exit-status contract
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
