"""Batch runner: ``cyclobloch <subcommand> --config run.cfg --out dir``.

A config file holds ``key=value`` lines (``#`` starts a comment). Every output
file starts with a header carrying the fully resolved configuration and its
sha256 hash, and contains no timestamps, so identical inputs give identical
bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classical import StepTooLarge, island_condition, island_scan, poincare_period, seed_grid, stroboscopic_map
from .fiber import band_structure
from .model import Gauge, Irrational, ModelConfig, ModelError, Rational, derive_scales, validate
from .observables import (
    Ambiguous,
    ObservableSeries,
    ballistic_fit,
    classify_regime,
    evolve_series,
    regime_scores,
    scaling_fit,
)
from .perturbation import perturb_table
from .propagator import (
    BoundaryLeak,
    BoundsTooTight,
    NormDrift,
    bloch_widths,
    default_strip_extents,
    ensemble_packets,
    gaussian_packet,
    make_strip,
)
from .transport import LineLost, to_gauge, transporting_state

SUBCOMMANDS = ("spectrum", "phase-portrait", "transport-state", "evolve", "scan-A", "perturb", "classify")


class ConfigError(ValueError):
    pass


class UnknownKey(ConfigError):
    pass


class MissingRequired(ConfigError):
    pass


class ConfigTypeError(ConfigError, TypeError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


# key -> (parser, default); None default means "not set"
MODEL_KEYS = {
    "F": (float, None),
    "r": (int, None),
    "q": (int, None),
    "beta": (float, None),
    "alpha": (float, 0.1),
    "Jx": (float, 1.0),
    "Jy": (float, 1.0),
    "gauge": (str, "landau_y"),
}

RUN_KEYS = {
    "spectrum": {"kappa_points": (int, 64), "half": (int, 40)},
    "phase-portrait": {"seeds": (int, 20), "n_periods": (int, 200), "steps": (int, 400)},
    "transport-state": {"C": (float, 1.0), "kappa_points": (int, 128)},
    "evolve": {
        "packet": (str, "gaussian"),
        "t_end": (float, 50.0),
        "dt": (float, None),
        "samples": (int, 100),
        "seeds": (int, 0),
        "C": (float, None),
        "Cx": (float, 0.1),
        "Cy": (float, 0.1),
        "strip_L": (int, None),
        "strip_W": (int, 32),
        "scheme": (str, "static"),
    },
    "scan-A": {
        "F_grid": (_floats, None),
        "t_end": (float, 60.0),
        "samples": (int, 60),
        "seeds": (int, 12),
        "Cx": (float, 0.1),
        "Cy": (float, 0.5),
        "strip_L": (int, None),
        "strip_W": (int, 8),
    },
    "perturb": {"F_grid": (_floats, (2.0, 4.0, 6.0, 8.0, 10.0))},
}
RUN_KEYS["classify"] = dict(RUN_KEYS["evolve"], t_end=(float, 100.0))

REQUIRED = {"scan-A": ("F_grid",)}


@dataclass(frozen=True)
class ExperimentSpec:
    subcommand: str
    config: ModelConfig
    params: dict = field(default_factory=dict)
    seed: int = 0

    def resolved(self) -> dict[str, str]:
        """Flat, ordered key -> text map of everything that determines the output."""
        c = self.config
        out = {"subcommand": self.subcommand, "F": repr(c.F)}
        if c.rational:
            out["r"], out["q"] = str(c.direction.r), str(c.direction.q)
        else:
            out["beta"] = repr(c.beta)
        out.update(alpha=repr(c.alpha), Jx=repr(c.Jx), Jy=repr(c.Jy), gauge=Gauge(c.gauge).value)
        for key in sorted(self.params):
            val = self.params[key]
            out[key] = ",".join(repr(v) for v in val) if isinstance(val, tuple) else repr(val)
        out["seed"] = str(self.seed)
        return out

    def digest(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in self.resolved().items())
        return hashlib.sha256(text.encode()).hexdigest()

    def header(self) -> dict[str, str]:
        h = dict(self.resolved())
        h["sha256"] = self.digest()
        return h


def _parse_lines(text: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        raw[key] = val
    return raw


def _convert(key: str, val: str, parser):
    try:
        return parser(val)
    except ValueError as exc:
        raise ConfigTypeError(f"{key}={val!r}: {exc}") from None


def parse_config(text: str, subcommand: str = "spectrum", seed: int = 0) -> ExperimentSpec:
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    raw = _parse_lines(text)
    run_keys = RUN_KEYS.get(subcommand, {})
    unknown = sorted(set(raw) - set(MODEL_KEYS) - set(run_keys))
    if unknown:
        raise UnknownKey(f"unknown key(s) for {subcommand}: {', '.join(unknown)}")

    vals = {k: (_convert(k, raw[k], p) if k in raw else d) for k, (p, d) in MODEL_KEYS.items()}
    if vals["beta"] is not None and (vals["r"] is not None or vals["q"] is not None):
        raise ConfigError("give either beta or (r, q), not both")
    if vals["beta"] is not None:
        direction = Irrational(vals["beta"])
    elif vals["r"] is not None and vals["q"] is not None:
        direction = Rational(vals["r"], vals["q"])
    else:
        raise MissingRequired("field direction: set r and q, or beta")
    try:
        gauge = Gauge(vals["gauge"])
    except ValueError:
        raise ConfigTypeError(f"gauge={vals['gauge']!r} is not one of {[g.value for g in Gauge]}") from None
    # direction and ranges are checked before the field amplitude is required
    config = validate(ModelConfig(F=vals["F"] or 0.0, direction=direction, alpha=vals["alpha"], Jx=vals["Jx"], Jy=vals["Jy"], gauge=gauge))
    if vals["F"] is None:
        raise MissingRequired("F is required")

    params = {k: (_convert(k, raw[k], p) if k in raw else d) for k, (p, d) in run_keys.items()}
    for key in REQUIRED.get(subcommand, ()):
        if params.get(key) is None:
            raise MissingRequired(f"{key} is required for {subcommand}")
    if "C" in params and params["C"] is not None and subcommand in ("evolve", "classify"):
        params["Cx"] = params["Cy"] = params["C"]
    params = {k: v for k, v in params.items() if v is not None}
    return ExperimentSpec(subcommand, config, params, int(seed))


def _write(path: Path, header: dict, body: str) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        for key, val in header.items():
            fh.write(f"# {key}={val}\n")
        fh.write(body)
    os.replace(tmp, path)


def _csv(columns: list[str], rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else f"{v:.12g}" for v in row))
    return "\n".join(lines) + "\n"


def _series_body(series: ObservableSeries) -> str:
    rows = zip(series.times, series.x_mean, series.y_mean, series.sigma, series.sqrt_m2_eta, series.leak)
    return _csv(["t", "x_mean", "y_mean", "sigma", "sqrt_m2_eta", "leak"], rows)


def run_spectrum(spec: ExperimentSpec, out: Path) -> list[Path]:
    cfg, p = spec.config, spec.params
    zone = 2.0 * math.pi / derive_scales(cfg).d_tilde
    kappa = np.linspace(0.0, zone, p["kappa_points"], endpoint=False)
    res = band_structure(cfg, kappa, (-p["half"], p["half"]))
    rows = [(k, str(j), res.energies[i, j]) for i, k in enumerate(kappa) for j in np.nonzero(res.retained[i])[0]]
    path = out / "spectrum.csv"
    _write(path, spec.header(), _csv(["kappa", "band", "E"], rows))
    return [path]


def run_phase_portrait(spec: ExperimentSpec, out: Path) -> list[Path]:
    cfg, p = spec.config, spec.params
    Y0, P0 = seed_grid(p["seeds"])
    period = None if cfg.rational else poincare_period(cfg)
    Y, P = stroboscopic_map(Y0, P0, p["n_periods"], cfg, steps_per_period=p["steps"], period=period)
    rows = [(str(s), str(n), Y[n, s], P[n, s]) for s in range(Y.shape[1]) for n in range(Y.shape[0])]
    path = out / "portrait.csv"
    _write(path, spec.header(), _csv(["seed", "period", "Y", "P"], rows))
    paths = [path]
    if cfg.rational:
        frac = island_scan(cfg, (Y0, P0), n_periods=p["n_periods"])
        summary = f"island_fraction={frac:.6g}\nisland_condition={island_condition(cfg)}\n"
        paths.append(out / "portrait_summary.txt")
        _write(paths[-1], spec.header(), summary)
    return paths


def run_transport_state(spec: ExperimentSpec, out: Path) -> list[Path]:
    cfg, p = spec.config, spec.params
    st = transporting_state(cfg, C=p["C"], per_zone=p["kappa_points"])
    path = out / "transport_state.csv"
    _write(path, spec.header(), _csv(["l", "m", "re", "im"], ((str(l), str(m), a.real, a.imag) for l, m, a in zip(st.l, st.m, st.psi))))
    return [path]


def _initial_packet(spec: ExperimentSpec):
    cfg, p = spec.config, spec.params
    t_end = p["t_end"]
    L, W = default_strip_extents(cfg, t_end, W_half=p["strip_W"])
    L = p.get("strip_L", L)
    kind = p["packet"]
    if kind == "transporting":
        # the (0,1) state overlaps strongly with the lines of nearby directions
        base = cfg.with_(direction=Rational(0, 1))
        st = transporting_state(base, C=p.get("C", 1.0)).cropped(min(30, L // 2), min(30, W // 2))
        strip = make_strip(cfg, L, W)
        return to_gauge(st, Gauge.LANDAU_Y, base, strip)
    strip = make_strip(cfg, L, W)
    if kind == "gaussian" and p["seeds"] > 0:
        return ensemble_packets(strip, p["Cx"], p["Cy"], spec.seed, p["seeds"])
    if kind == "gaussian":
        return gaussian_packet(strip, p["Cx"], p["Cy"])
    if kind == "bloch":
        return gaussian_packet(strip, *bloch_widths(cfg))
    raise ConfigError(f"packet must be gaussian, bloch or transporting; got {kind!r}")


def _evolve(spec: ExperimentSpec) -> ObservableSeries:
    p = spec.params
    pk = _initial_packet(spec)
    times = np.linspace(0.0, p["t_end"], p["samples"] + 1)[1:]
    kw = {"dt": p["dt"]} if (p["scheme"] == "td" and "dt" in p) else {}
    series = evolve_series(pk, p["t_end"], spec.config, times, p["scheme"], **kw)
    if series.leak[-1] > 1e-10:
        raise BoundaryLeak(f"boundary leak {series.leak[-1]:.3e} > 1e-10 at t={series.times[-1]}; enlarge the strip")
    return series


def run_evolve(spec: ExperimentSpec, out: Path) -> list[Path]:
    path = out / "series.csv"
    _write(path, spec.header(), _series_body(_evolve(spec)))
    return [path]


def run_classify(spec: ExperimentSpec, out: Path) -> list[Path]:
    series = _evolve(spec)
    scores = regime_scores(series, spec.config)
    try:
        regime = classify_regime(series, spec.config).value
    except Ambiguous:
        regime = "Ambiguous"
    text = f"regime={regime}\n" + "".join(f"score_{k.value}={v:.6g}\n" for k, v in scores.items())
    paths = [out / "series.csv", out / "classification.txt"]
    _write(paths[0], spec.header(), _series_body(series))
    _write(paths[1], spec.header(), text)
    return paths


def _scan_point(args) -> tuple[float, ObservableSeries]:
    spec, F = args
    cfg, p = spec.config.with_(F=F), spec.params
    L, W = default_strip_extents(cfg, p["t_end"], W_half=p["strip_W"])
    strip = make_strip(cfg, p.get("strip_L", L), W)
    pk = ensemble_packets(strip, p["Cx"], p["Cy"], spec.seed, p["seeds"])
    times = np.linspace(0.0, p["t_end"], p["samples"] + 1)[1:]
    return F, evolve_series(pk, p["t_end"], cfg, times)


def run_scan_A(spec: ExperimentSpec, out: Path, threads: int = 1) -> list[Path]:
    grid = spec.params["F_grid"]
    jobs = [(spec, F) for F in grid]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_scan_point, jobs))
    else:
        results = [_scan_point(j) for j in jobs]
    paths, rows = [], []
    for F, series in results:
        fit = ballistic_fit(series)
        rows.append((F, fit.coefficient, fit.residual, fit.window[0], fit.window[1]))
        pth = out / f"scanA_F{F:g}.csv"
        _write(pth, dict(spec.header(), point_F=repr(F)), _series_body(series))
        paths.append(pth)
    summary = out / "scanA.csv"
    _write(summary, spec.header(), _csv(["F", "A", "residual", "t_lo", "t_hi"], rows))
    paths.append(summary)
    if len(rows) >= 4 and all(r[1] > 0 for r in rows):
        fit = scaling_fit([(r[0], r[1]) for r in rows])
        paths.append(out / "scanA_fit.txt")
        _write(paths[-1], spec.header(), fit.summary("scaling"))
    return paths


def run_perturb(spec: ExperimentSpec, out: Path) -> list[Path]:
    cfg = spec.config
    rows = perturb_table(cfg, spec.params["F_grid"])
    body = _csv(["F", "band_width", "Lambda", "ratio"], ((F, w, lam, w / abs(lam)) for F, w, lam in rows))
    paths = [out / "perturb.csv"]
    _write(paths[0], spec.header(), body)
    if len(rows) >= 4:
        fit = scaling_fit([(F, w) for F, w, _ in rows])
        paths.append(out / "perturb_fit.txt")
        _write(paths[1], spec.header(), fit.summary("band width"))
    return paths


RUNNERS = {
    "spectrum": run_spectrum,
    "phase-portrait": run_phase_portrait,
    "transport-state": run_transport_state,
    "evolve": run_evolve,
    "perturb": run_perturb,
    "classify": run_classify,
}


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get("CYCLOBLOCH_THREADS")
    return max(1, int(env)) if env else 1


def run(spec: ExperimentSpec, out: Path, threads: int = 1) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if spec.subcommand == "scan-A":
        return run_scan_A(spec, out, threads)
    return RUNNERS[spec.subcommand](spec, out)


INVARIANT_ERRORS = (NormDrift, BoundsTooTight, BoundaryLeak, LineLost, StepTooLarge)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="cyclobloch", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", default=Path("."), type=Path)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not 0 <= args.seed < 2**64:
        ap.error("--seed must be an unsigned 64-bit integer")

    threads = resolve_threads(args.threads)

    try:
        spec = parse_config(args.config.read_text(), args.subcommand, args.seed)
    except (ConfigError, ModelError) as exc:
        print(f"config error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", StepTooLarge)
            paths = run(spec, args.out, threads)
    except INVARIANT_ERRORS as exc:
        print(f"invariant violation [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    except (ValueError, ModelError) as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 4
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
