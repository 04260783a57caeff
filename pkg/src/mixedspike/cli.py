"""Command-line front end.

Subcommands: ``ground-state``, ``fundamental``, ``landscape``, ``reduce``
and ``verify``.  Configuration is a single ``key = value`` file (one
``[run]`` section; the header may be omitted).  ``MIXEDSPIKE_OUTPUT_DIR``
and ``MIXEDSPIKE_THREADS`` override the output directory and thread count.

Exit codes
----------
0  success
1  numerical failure (solver divergence, contraction failure, failed acceptance assertion)
2  kernel of the linearized operator is not n-dimensional
3  invalid configuration or geometry / insufficient data
4  output directory not writable
"""

from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULT_TOLERANCES, Tolerances
from .dirichlet import DomainSpec, barrier_h, deficiency_v, make_mask, solve_dirichlet
from .energy import reduced_energy_H, scan_landscape
from .errors import (
    ConfigError,
    ContractionFailureError,
    GeometryError,
    InsufficientDataError,
    KernelDimensionError,
    MixedSpikeError,
)
from .reduction import (
    ReductionCache,
    assemble_and_verify,
    eps_slope,
    optimize_xi,
    solve_projected,
)
from .spectral_core import (
    GridSpec,
    ScalarField,
    SymbolSpec,
    apply_multiplier,
    fit_decay,
    integrate,
    set_threads,
    solve_multiplier,
    write_field,
    write_profile_csv,
)
from .whole_space import (
    GroundState,
    ModelParams,
    compute_ground_state,
    decay_window,
    fundamental_solution,
    mode_decay_report,
    ray_monotonicity_violations,
    translate,
)

log = logging.getLogger("mixedspike")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAILURE, EXIT_KERNEL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    grid: GridSpec
    domain: DomainSpec
    eps_schedule: tuple[float, ...] = (0.4, 0.2, 0.1)
    delta: float = 0.5  # Ω_{ε,δ} for the reduction
    landscape_delta: float = 0.15
    landscape_stride: int = 4
    reduce_stride: int | None = None
    tolerances: Tolerances = DEFAULT_TOLERANCES
    output_dir: Path = Path("out")
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        eps = self.eps_schedule
        if not eps:
            raise ConfigError("eps_schedule is empty")
        if any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"eps_schedule must be positive and strictly decreasing, got {list(eps)}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def as_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "grid": {"dim": self.grid.dim, "half_width": self.grid.half_width, "points": self.grid.points_per_axis},
            "domain": self.domain.as_dict(),
            "eps_schedule": list(self.eps_schedule),
            "delta": self.delta,
            "landscape_delta": self.landscape_delta,
            "landscape_stride": self.landscape_stride,
            "reduce_stride": self.reduce_stride,
            "tolerances": self.tolerances.as_dict(),
            "seed": self.seed,
        }


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def load_config(path: str | os.PathLike | None, overrides: dict | None = None) -> RunConfig:
    """Read a key-value config file; ``overrides`` (from flags) win over the file."""
    raw: dict[str, str] = {}
    if path is not None:
        text = Path(path).read_text()
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        try:
            try:
                cp.read_string(text)
            except configparser.MissingSectionHeaderError:
                cp.read_string("[run]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for sec in cp.sections():
            raw.update(cp[sec])
    raw.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    env_out = os.environ.get("MIXEDSPIKE_OUTPUT_DIR")
    env_threads = os.environ.get("MIXEDSPIKE_THREADS")
    if env_out and "output_dir" not in (overrides or {}):
        raw["output_dir"] = env_out
    if env_threads and "threads" not in (overrides or {}):
        raw["threads"] = env_threads
    try:
        return _build_config(raw)
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, MixedSpikeError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from exc


KNOWN_KEYS = {
    "dim", "s", "p", "mu", "half_width", "points", "shape", "radius", "semi_axes", "half_widths",
    "corner_radius", "center", "eps_schedule", "delta", "landscape_delta", "landscape_stride",
    "reduce_stride", "output_dir", "seed", "threads", "negate_nonlocal",
    "solver_tol", "projected_tol", "ground_state_tol", "contraction_tol", "multiplier_tol",
    "orthogonality_tol", "eigen_tol", "fit_tol", "power_law_residual", "monotone_slack",
}
TOL_KEYS = {
    "solver_tol": "solver", "projected_tol": "projected", "ground_state_tol": "ground_state",
    "contraction_tol": "contraction", "multiplier_tol": "multiplier", "orthogonality_tol": "orthogonality",
    "eigen_tol": "eigen", "fit_tol": "fit_exponent", "power_law_residual": "power_law_residual",
    "monotone_slack": "monotone_slack",
}


def _build_config(raw: dict[str, str]) -> RunConfig:
    unknown = set(raw) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    dim = int(raw.get("dim", 2))
    eps = _floats(raw.get("eps_schedule", "0.4, 0.2, 0.1"))
    sign = -1.0 if raw.get("negate_nonlocal", "false").lower() in ("1", "true", "yes") else 1.0
    mu = raw.get("mu", "").strip()
    params = ModelParams(
        dim, float(raw.get("s", 0.5)), float(raw.get("p", 2.0)), eps[-1] if eps else 0.1,
        float(mu) if mu else None, sign,
    )
    try:
        grid = GridSpec(dim, float(raw.get("half_width", 16.0)), int(raw.get("points", 256)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    shape = raw.get("shape", "ball")
    center = _floats(raw.get("center", ",".join(["0"] * dim)))
    try:
        if shape == "ball":
            domain = DomainSpec.ball(float(raw.get("radius", 1.0)), center)
        elif shape == "ellipse":
            domain = DomainSpec.ellipse(_floats(raw.get("semi_axes", "1.0, 0.5")), center)
        elif shape == "rounded_rectangle":
            domain = DomainSpec.rounded_rectangle(
                _floats(raw.get("half_widths", "1.0, 0.6")), float(raw.get("corner_radius", 0.2)), center
            )
        else:
            raise ConfigError(f"unknown shape {shape!r}")
    except ValueError as exc:
        if isinstance(exc, MixedSpikeError):
            raise
        raise ConfigError(str(exc)) from exc
    tol_kw = {TOL_KEYS[k]: float(v) for k, v in raw.items() if k in TOL_KEYS}
    tolerances = DEFAULT_TOLERANCES.updated(**tol_kw)
    rs = raw.get("reduce_stride", "").strip()
    return RunConfig(
        params=params, grid=grid, domain=domain, eps_schedule=eps,
        delta=float(raw.get("delta", 0.5)),
        landscape_delta=float(raw.get("landscape_delta", 0.15)),
        landscape_stride=int(raw.get("landscape_stride", 4)),
        reduce_stride=int(rs) if rs else None,
        tolerances=tolerances,
        output_dir=Path(raw.get("output_dir", "out")),
        seed=int(raw.get("seed", 0)),
        threads=int(raw.get("threads", 1)),
    )


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_report(path: Path, command: str, cfg: RunConfig, body: dict) -> None:
    """JSON with sorted keys; only ``timestamp`` varies between identical runs."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "command": command,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "config": cfg.as_dict(),
        **body,
    }
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def _prepare_output(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_text("")
    probe.unlink()
    return out


_GS_CACHE: dict = {}


def _ground_state(cfg: RunConfig, with_spectrum: bool = True) -> GroundState:
    p = cfg.params
    key = (p.dim, p.s, p.p, p.mu, p.nonlocal_sign, cfg.grid, with_spectrum, cfg.seed)
    if key not in _GS_CACHE:
        _GS_CACHE[key] = compute_ground_state(p, cfg.grid, tolerances=cfg.tolerances, with_spectrum=with_spectrum,
                                              seed=cfg.seed)
    return _GS_CACHE[key]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _decay_fits(field: ScalarField, center, gs: GroundState | None = None):
    """Fit on the default window; ``None`` (with a warning) when the box is too small for one."""
    lo, hi = decay_window(field.grid)
    try:
        fit = fit_decay(field, center, lo, hi)
        modes = None if gs is None else mode_decay_report(gs, lo, hi)
    except (GeometryError, InsufficientDataError) as exc:
        log.warning("decay fit skipped: %s", exc)
        return None, None
    return fit, modes



def cmd_ground_state(cfg: RunConfig) -> int:
    out = _prepare_output(cfg)
    gs = _ground_state(cfg)
    write_field(gs.w, out / "w.fld")
    for i, z in enumerate(gs.modes, start=1):
        write_field(z, out / f"Z{i}.fld")
    fit, mode_fits = _decay_fits(gs.w, np.zeros(gs.grid.dim), gs)
    body = {
        "residual": gs.residual, "relative_residual": gs.relative_residual,
        "energy": gs.energy, "alpha": gs.alpha,
        "fixed_point_iterations": gs.fixed_point_iterations, "newton_iterations": gs.newton_iterations,
        "decay_fit": fit and fit.as_dict(), "mode_fits": [f.as_dict() for f in mode_fits or []],
        "mode_gram": gs.mode_gram(),
        "spectrum": None if gs.spectrum is None else gs.spectrum.as_dict(),
    }
    write_report(out / "ground_state.json", "ground-state", cfg, body)
    gs.require_nondegenerate()
    print(f"ground state: relative residual {gs.relative_residual:.2e}, energy {gs.energy:.10f}, "
          f"kernel dim {gs.spectrum.kernel_dim if gs.spectrum else 'n/a'}")
    return EXIT_OK


def cmd_fundamental(cfg: RunConfig) -> int:
    out = _prepare_output(cfg)
    grid = cfg.grid
    K = fundamental_solution(cfg.params, 1.0, grid)
    write_field(K, out / "K.fld")
    fit, _ = _decay_fits(K, grid.center_cell)
    r = grid.radius(grid.center_cell).ravel()
    order = np.argsort(r)
    write_profile_csv(out / "K_profile.csv", r[order], K.values.ravel()[order])
    body = {
        "integral": integrate(K), "decay_fit": fit and fit.as_dict(), "expected_exponent": cfg.params.decay_exponent,
        "ray_monotonicity_violations": ray_monotonicity_violations(K), "min_value": float(K.values.min()),
    }
    write_report(out / "fundamental.json", "fundamental", cfg, body)
    print(f"K: integral {body['integral']:.6f}, decay exponent {fit.exponent if fit else float('nan'):.3f}")
    return EXIT_OK


def cmd_landscape(cfg: RunConfig) -> int:
    out = _prepare_output(cfg)
    gs = _ground_state(cfg, with_spectrum=False)
    a = cfg.params.energy_exponent
    band = abs(cfg.tolerances.fit_exponent)
    summaries = []
    ok = True
    for eps in cfg.eps_schedule:
        mask = make_mask(cfg.domain, cfg.params.with_eps(eps), cfg.grid)
        scan = scan_landscape(mask, gs, cfg.landscape_delta, cfg.landscape_stride, tol=cfg.tolerances.solver)
        scan.write_csv(out / f"landscape_eps{eps:g}.csv")
        s = scan.summary()
        hd = [smp.H_eps * smp.d**a for smp in scan.interior if smp.d >= 2]
        s["band_constants"] = [min(hd), max(hd)] if hd else None
        s["exponent_ok"] = bool(scan.fit is not None and abs(scan.fit.exponent - a) <= band)
        s["interior_below_collar"] = bool(scan.interior_min < scan.collar_min)
        ok &= s["exponent_ok"]
        summaries.append(s)
        print(f"eps={eps:g}: {s['n_interior']} samples, exponent "
              f"{scan.fit.exponent if scan.fit else float('nan'):.3f} (target {a:g} ± {band:g})")
    write_report(out / "landscape.json", "landscape", cfg, {"scans": summaries, "expected_exponent": a})
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_reduce(cfg: RunConfig) -> int:
    out = _prepare_output(cfg)
    gs = _ground_state(cfg)
    gs.require_nondegenerate()
    params0 = cfg.params
    tol = cfg.tolerances
    runs, reports, dropped = [], [], []
    for eps in cfg.eps_schedule:
        params = params0.with_eps(eps)
        mask = make_mask(cfg.domain, params, cfg.grid)
        cache = ReductionCache()
        try:
            res = optimize_xi(mask, gs, params, cfg.delta, cfg.reduce_stride, cache, tol)
            ver = assemble_and_verify(res, params, gs, tol, cache)
        except ContractionFailureError as exc:
            log.warning("eps=%g dropped: %s", eps, exc)
            dropped.append(eps)
            continue
        write_field(res.u_eps_rescaled, out / f"u_eps{eps:g}.fld")
        write_field(res.psi, out / f"psi_eps{eps:g}.fld")
        runs.append((eps, res, ver))
        reports.append({**res.as_dict(), "verification": ver.as_dict()})
        print(f"eps={eps:g}: xi={tuple(round(x, 4) for x in res.xi)}, max|c|={res.max_abs_c:.2e}, "
              f"|Psi|={res.psi_norm_weighted:.3e}, sup error={ver.sup_error:.3e}")
    g1 = params0.gamma1
    slopes = {}
    assertions = {f"eps{e:g}_{k}": v for e, _, ver in runs for k, v in ver.checks.items()
                  if k != "M_near_minus_alpha"}
    if runs:
        assertions["M_near_minus_alpha_at_smallest_eps"] = runs[-1][2].checks["M_near_minus_alpha"]
    if len(runs) >= 3:
        e = [r[0] for r in runs]
        slopes = {
            "psi_norm": eps_slope(e, [r[1].psi_norm_weighted for r in runs]),
            "sup_error": eps_slope(e, [r[2].sup_error for r in runs]),
            "dv_dxi": eps_slope(e, [r[2].dv_dxi_sup for r in runs]),
        }
        # constant calibrated on the coarsest run must hold for every smaller eps
        c_star = runs[0][1].psi_norm_weighted / e[0] ** g1
        slopes["psi_constant"] = c_star
        assertions["psi_bounded_by_C_eps_gamma1"] = all(
            r[1].psi_norm_weighted <= c_star * r[0] ** g1 * (1 + 1e-12) for r in runs)
        assertions["psi_slope_near_gamma1"] = abs(slopes["psi_norm"] - g1) <= tol.fit_exponent
        assertions["sup_error_slope"] = slopes["sup_error"] >= g1 - tol.fit_exponent
    elif len(cfg.eps_schedule) < 3:
        log.warning("fewer than three eps values: scaling fits skipped")
    body = {"runs": reports, "dropped_eps": dropped, "gamma1_config": g1, "fitted_slopes": slopes,
            "assertions": assertions}
    write_report(out / "reduce.json", "reduce", cfg, body)
    for k, v in assertions.items():
        print(f"  {'PASS' if v else 'FAIL'}  {k}")
    if len(cfg.eps_schedule) >= 3 and len(runs) < 3:
        return EXIT_FAILURE
    return EXIT_OK if all(assertions.values()) else EXIT_FAILURE


def run_property_suite(cfg: RunConfig) -> dict[str, tuple[bool, str]]:
    """Multiplier exactness, maximum principle, orthogonality and energy identities."""
    grid, params = cfg.grid, cfg.params
    results: dict[str, tuple[bool, str]] = {}
    sym = params.symbol()

    # multiplier exactness on a resolvable mode
    k = np.pi / grid.half_width * 3
    x = grid.coords()[0]
    mode = ScalarField(grid, np.broadcast_to(np.cos(k * x), grid.shape))
    exact = sym(np.array(k)) * mode.values
    err = float(np.max(np.abs(apply_multiplier(mode, sym).values - exact)) / np.max(np.abs(exact)))
    inv = solve_multiplier(apply_multiplier(mode, sym), sym)
    err_inv = float(np.max(np.abs(inv.values - mode.values)))
    results["multiplier_exactness"] = (err <= 1e-12 and err_inv <= 1e-10, f"rel err {err:.1e}, inverse {err_inv:.1e}")

    # maximum principle
    K = fundamental_solution(params, 1.0, grid)
    gs = _ground_state(cfg, with_spectrum=True)
    eps = cfg.eps_schedule[-1]
    mask = make_mask(cfg.domain, params.with_eps(eps), grid)
    xi = mask.center
    w_xi = translate(gs.w, xi)
    sol = solve_dirichlet(w_xi.positive_power(params.p), mask, tol=cfg.tolerances.solver)
    u = sol.solution.values[mask.inside]
    v = deficiency_v(w_xi, sol.solution)
    gauss = solve_dirichlet(ScalarField.from_radial(grid, lambda r: np.exp(-r**2), center=xi), mask).solution
    checks = {
        "K>0": float(K.values.min()) > 0,
        "w>0": float(gs.w.values.min()) > 0,
        "ubar>0": float(u.min()) > 0,
        "v>0": float(v.values.min()) > 0,
        "gauss>0": float(gauss.values[mask.inside].min()) > 0,
    }
    results["maximum_principle"] = (all(checks.values()), ", ".join(f"{k}:{'ok' if v else 'FAIL'}" for k, v in checks.items()))
    h = barrier_h(mask, xi, K)
    ratio = v.values / h.values
    results["barrier_comparability"] = (
        bool(np.all(h.values > 0) and ratio.max() / ratio.min() <= 1e3),
        f"v/h in [{ratio.min():.3g}, {ratio.max():.3g}]",
    )

    # nondegeneracy and orthogonality
    kd = gs.spectrum.kernel_dim if gs.spectrum else -1
    results["nondegeneracy"] = (kd == params.dim, f"kernel dim {kd}")
    if kd == params.dim:
        g = ScalarField(grid, np.where(mask.inside, translate(gs.modes[0], xi).values, 0.0))
        ps = solve_projected(g, mask, gs, xi, tol=cfg.tolerances.projected)
        results["orthogonality"] = (ps.orthogonality_defect <= cfg.tolerances.orthogonality,
                                    f"defect {ps.orthogonality_defect:.1e}")
    else:
        results["orthogonality"] = (False, "skipped: kernel dimension mismatch")

    # energy identities
    rep = reduced_energy_H(mask, xi, gs, tol=cfg.tolerances.solver)
    weak = abs(rep.I_eps - rep.I_eps_weak) / abs(rep.I_eps)
    ident = abs(rep.remainder - rep.remainder_identity) / max(abs(rep.remainder), 1e-300)
    results["energy_identities"] = (weak <= 1e-6 and ident <= 1e-6 and rep.H_eps > 0,
                                    f"weak form {weak:.1e}, remainder identity {ident:.1e}, H={rep.H_eps:.3e}")
    return results


def cmd_verify(cfg: RunConfig) -> int:
    out = _prepare_output(cfg)
    results = run_property_suite(cfg)
    width = max(len(k) for k in results)
    for name, (ok, detail) in results.items():
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    write_report(out / "verify.json", "verify", cfg,
                 {"suites": {k: {"passed": ok, "detail": d} for k, (ok, d) in results.items()}})
    return EXIT_OK if all(ok for ok, _ in results.values()) else EXIT_FAILURE


COMMANDS = {
    "ground-state": cmd_ground_state,
    "fundamental": cmd_fundamental,
    "landscape": cmd_landscape,
    "reduce": cmd_reduce,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixedspike", description="Spike solutions of the mixed local/nonlocal problem.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--threads", type=int, help="FFT worker threads")
        sp.add_argument("--output", help="output directory (created if missing)")
        sp.add_argument("--eps-override", help="comma-separated eps schedule, descending")
        sp.add_argument("--negate-nonlocal", action="store_true",
                        help="debug: flip the sign of the fractional term (fault injection)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {
        "threads": args.threads,
        "output_dir": args.output,
        "eps_schedule": args.eps_override,
        "negate_nonlocal": "true" if args.negate_nonlocal else None,
    }
    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, GeometryError, InsufficientDataError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    set_threads(cfg.threads)
    try:
        return COMMANDS[args.command](cfg)
    except KernelDimensionError as exc:
        print(f"nondegeneracy check failed: {exc}", file=sys.stderr)
        return EXIT_KERNEL
    except (ConfigError, GeometryError, InsufficientDataError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MixedSpikeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
