"""Command-line front end.

Usage: ``btcspin <command> --config run.ini --out results/ [--threads n]``.

The config is an INI file. ``[model]`` holds p, q, omega_x, gamma_up,
gamma_down and optionally omega_z (default 1, all inputs are in units of
omega_z) and n_string. A section named after the command holds its options.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, dicke, meanfield
from .errors import BTCError, DomainError, MissingKey
from .params import Axis, ModelParams, PolarState, bloch_from_angles, validate_params
from .plotting import Dataset, PlotSpec, emit_svg

COMMANDS = ("meanfield", "portrait", "evolve", "spectrum", "steadystate", "scaling", "phasediagram", "ansatz-check")

DEFAULTS = {
    "meanfield": {"theta": "1.47", "phi": "3.10", "t_end": "100", "n_samples": "2001", "mode": "collective",
                  "jump_norm": "collective", "axis": "z", "window_periods": "20"},
    "portrait": {"n_phi": "8", "n_cos": "8", "t_end": "30", "n_samples": "401", "axis": "z"},
    "evolve": {"n_list": "20, 40", "theta": "1.0472", "phi": "3.1416", "t_end": "20", "n_samples": "401"},
    "spectrum": {"n_list": "10, 20", "k": "21"},
    "steadystate": {"n": "30"},
    "scaling": {"n_list": "20, 30, 40", "theta": "1.0472", "phi": "3.1416", "t_end": "30", "n_samples": "1501",
                "nu_min": "0", "nu_max": "1", "nu_steps": "101"},
    "phasediagram": {"n_omega_x": "40", "n_delta_gamma": "40", "omega_x_max": "4", "delta_gamma_max": "1.4",
                     "window_periods": "10"},
    "ansatz-check": {"n_max": "8", "n_samples": "200", "seed": "0"},
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    params: ModelParams
    options: dict
    out_dir: Path
    threads: int = 1
    digest: str = ""
    raw: dict = field(default_factory=dict)


def _int_list(text: str) -> list[int]:
    vals = [int(float(v)) for v in text.replace(";", ",").split(",") if v.strip()]
    if not vals:
        raise DomainError("empty N list")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise DomainError(f"N list must be strictly increasing: {vals}")
    return vals


def config_digest(command: str, raw: dict) -> str:
    canon = json.dumps({"command": command, "config": raw}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_config(command: str, path: str, out: str, threads: int | None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not cp.sections():
        raise UsageError(f"config {path} is empty")
    if not cp.has_section("model"):
        raise UsageError("config has no [model] section")
    model = dict(cp.items("model"))
    model.setdefault("omega_z", "1")
    params = validate_params(model)
    opts = dict(DEFAULTS[command])
    if cp.has_section(command):
        opts.update(dict(cp.items(command)))
    raw = {"model": {k: model[k] for k in sorted(model)}, command: {k: opts[k] for k in sorted(opts)}}
    if threads is None:
        env = os.environ.get("BTC_THREADS", "").strip()
        threads = int(env) if env else 1
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return RunConfig(command, params, opts, out_dir, threads, config_digest(command, raw), raw)


@contextmanager
def _executor(threads: int):
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            yield ex
    else:
        yield None


def _map(ex, fn, items):
    return list(ex.map(fn, items)) if ex is not None else [fn(i) for i in items]


def _header(cfg: RunConfig) -> list[str]:
    return [f"btcspin {cfg.command}", f"config_digest: {cfg.digest}", f"model: {json.dumps(cfg.raw['model'], sort_keys=True)}"]


def _write_csv(cfg: RunConfig, name: str, columns: list[str], rows) -> Path:
    path = cfg.out_dir / name
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in _header(cfg):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_json(cfg: RunConfig, name: str, payload: dict) -> Path:
    path = cfg.out_dir / name
    doc = _finite({"command": cfg.command, "config_digest": cfg.digest, **payload})
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=False)
        fh.write("\n")
    return path


def _finite(o):
    # JSON has no NaN; undefined numbers become null
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, np.ndarray):
        return _finite(o.tolist())
    if isinstance(o, (float, np.floating)):
        return float(o) if math.isfinite(o) else None
    if isinstance(o, complex):
        return [_finite(o.real), _finite(o.imag)]
    return o


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _svg(cfg: RunConfig, name: str, data: Dataset, spec: PlotSpec) -> Path:
    spec.comment = f"config_digest: {cfg.digest}"
    path = cfg.out_dir / name
    emit_svg(data, spec, path)
    return path


def _f(opts, key) -> float:
    return float(opts[key])


def _i(opts, key) -> int:
    return int(float(opts[key]))


# --------------------------------------------------------------------------
# commands


def cmd_meanfield(cfg: RunConfig) -> list[Path]:
    o, prm = cfg.options, cfg.params
    axis = Axis.parse(o["axis"])
    mode = o["mode"].strip().lower()
    if mode == "local" and "n_string" in o:
        mode = _i(o, "n_string")
    start = bloch_from_angles(_f(o, "theta"), _f(o, "phi"), axis)
    traj = meanfield.integrate(prm, start, _f(o, "t_end"), mode=mode, n_samples=_i(o, "n_samples"),
                               jump_norm=o["jump_norm"])
    pts = meanfield.find_fixed_points(prm, mode=mode, jump_norm=o["jump_norm"])
    try:
        rep = meanfield.orbit_report(traj, _i(o, "window_periods"), axis)
        orbit = {"verdict": rep.verdict.value, "drift_per_period": rep.drift_per_period, "period": rep.period}
    except BTCError as exc:
        orbit = exc.to_record()
    files = []
    path = cfg.out_dir / "meanfield.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        traj.write_csv(fh, axis, _header(cfg))
    files.append(path)
    files.append(_write_json(cfg, "fixed_points.json", {
        "fixed_points": [p.to_record() for p in pts], "orbit": orbit, "norm_drift": traj.norm_drift()}))
    comp = traj.z if axis is Axis.Z_POLE else traj.x
    files.append(_svg(cfg, "meanfield.svg", Dataset(lines=[(traj.times, comp, "Z" if axis is Axis.Z_POLE else "X")]),
                      PlotSpec(xlabel="t", ylabel="magnetization")))
    return files


def cmd_portrait(cfg: RunConfig) -> list[Path]:
    o, prm = cfg.options, cfg.params
    axis = Axis.parse(o["axis"])
    seeds = meanfield.seed_grid(_i(o, "n_phi"), _i(o, "n_cos"), axis)
    with _executor(cfg.threads) as ex:
        data = meanfield.phase_portrait(prm, seeds, _f(o, "t_end"), axis, n_samples=_i(o, "n_samples"), executor=ex)
    files = []
    path = cfg.out_dir / "portrait.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        data.write_csv(fh, _header(cfg))
    files.append(path)
    errors = [{"seed": i, **tr.error.to_record()} for i, tr in enumerate(data.tracks) if tr.error is not None]
    files.append(_write_json(cfg, "fixed_points.json", {
        "axis": axis.value, "fixed_points": [p.to_record() for p in data.fixed_points], "seed_errors": errors}))
    ds = Dataset()
    for tr in data.tracks:
        if tr.phi is None:
            continue
        # break lines where phi wraps around
        phi = tr.phi.copy()
        phi[1:][np.abs(np.diff(tr.phi)) > np.pi] = np.nan
        ds.lines.append((phi, tr.cos_theta, ""))
    for phi, c, cls in data.fixed_point_angles():
        ds.points.append((phi, c, cls))
    files.append(_svg(cfg, "portrait.svg", ds, PlotSpec(xlabel="phi", ylabel="cos theta",
                                                         xlim=(0, 2 * math.pi), ylim=(-1, 1))))
    return files


def _evolve_one(job):
    prm, n, theta, phi, ts = job
    ev = dicke.evolve(prm, dicke.coherent_state(n, theta, phi), ts)
    return n, ev


def cmd_evolve(cfg: RunConfig) -> list[Path]:
    o, prm = cfg.options, cfg.params
    ns = _int_list(o["n_list"])
    ts = np.linspace(0, _f(o, "t_end"), _i(o, "n_samples"))
    jobs = [(prm, n, _f(o, "theta"), _f(o, "phi"), ts) for n in ns]
    with _executor(cfg.threads) as ex:
        results = _map(ex, _evolve_one, jobs)
    rows, freqs, ds = [], {}, Dataset()
    for n, ev in results:
        rows += [(n, *r) for r in ev.rows()]
        try:
            fr = analysis.dominant_frequency(ev.times, ev.jz)
            freqs[str(n)] = {"cycles": fr.cycles, "angular": fr.angular}
        except BTCError as exc:
            freqs[str(n)] = exc.to_record()
        ds.lines.append((ev.times, ev.jz, f"N={n}"))
    files = [_write_csv(cfg, "evolve.csv", ["N", "t", "jx", "jy", "jz", "purity"], rows)]
    files.append(_write_json(cfg, "evolve.json", {"frequencies": freqs}))
    files.append(_svg(cfg, "evolve.svg", ds, PlotSpec(xlabel="t", ylabel="<J_z>")))
    return files


def _spectrum_one(job):
    prm, n, k = job
    res = dicke.spectrum(dicke.build_liouvillian(prm, n), min(k, (n + 1) ** 2))
    return n, res


def cmd_spectrum(cfg: RunConfig) -> list[Path]:
    o, prm = cfg.options, cfg.params
    ns = _int_list(o["n_list"])
    with _executor(cfg.threads) as ex:
        results = _map(ex, _spectrum_one, [(prm, n, _i(o, "k")) for n in ns])
    rows, gaps = [], {}
    for n, res in results:
        rows += [(n, i, float(e.real), float(e.imag)) for i, e in enumerate(res.eigenvalues)]
        gaps[n] = res.liouvillian_gap
    payload = {"gaps": {str(k): v for k, v in gaps.items()}}
    if len(gaps) >= 3:
        payload["gap_scaling"] = analysis.gap_scaling(gaps).to_record()
    files = [_write_csv(cfg, "spectrum.csv", ["N", "index", "re", "im"], rows)]
    files.append(_write_json(cfg, "spectrum.json", payload))
    ds = Dataset(points=[(r[2], r[3], "") for r in rows])
    files.append(_svg(cfg, "spectrum.svg", ds, PlotSpec(xlabel="Re lambda", ylabel="Im lambda")))
    return files


def cmd_steadystate(cfg: RunConfig) -> list[Path]:
    o, prm = cfg.options, cfg.params
    n = _i(o, "n")
    rho = dicke.steady_state(prm, n)
    met = analysis.steadystate_metrics(rho)
    matrix = [[[float(v.real), float(v.imag)] for v in row] for row in rho]
    files = [_write_json(cfg, "steadystate.json", {
        "basis_order": dicke.BASIS_ORDER, "N": n, "metrics": met.to_record(), "rho": matrix})]
    m = dicke.build_operators(n).m_values
    files.append(_svg(cfg, "steadystate.svg", Dataset(lines=[(m, np.real(np.diag(rho)), "populations")]),
                      PlotSpec(xlabel="m", ylabel="rho_mm")))
    return files


def cmd_scaling(cfg: RunConfig) -> list[Path]:
    o, prm = cfg.options, cfg.params
    ns = _int_list(o["n_list"])
    ts = np.linspace(0, _f(o, "t_end"), _i(o, "n_samples"))
    with _executor(cfg.threads) as ex:
        results = _map(ex, _evolve_one, [(prm, n, _f(o, "theta"), _f(o, "phi"), ts) for n in ns])
    envs = {n: meanfield.envelope(ev.times, ev.jz) for n, ev in results}
    grid = np.linspace(_f(o, "nu_min"), _f(o, "nu_max"), _i(o, "nu_steps"))
    nu = analysis.best_collapse(envs, grid)
    rows = [(n, t, a, t * n ** (-nu)) for n, env in envs.items() for t, a in env]
    files = [_write_csv(cfg, "collapse.csv", ["N", "t", "amplitude", "t_rescaled"], rows)]
    files.append(_write_json(cfg, "scaling.json", {"nu_best": nu, "score": analysis.damping_collapse(envs, nu),
                                                    "n_list": ns}))
    ds = Dataset(lines=[(np.array([e[0] for e in env]) * n ** (-nu), np.array([e[1] for e in env]), f"N={n}")
                        for n, env in envs.items() if env])
    files.append(_svg(cfg, "collapse.svg", ds, PlotSpec(xlabel=f"t N^-{nu:.2f}", ylabel="envelope")))
    return files


PHASE_LABELS = ("none", "F", "BTC", "F+BTC")


def _phase_cell(job):
    prm, window = job
    pts = meanfield.find_fixed_points(prm)
    has_f = any(p.stability is meanfield.Stability.ATTRACTOR and abs(p.location.z) > 1e-3 for p in pts)
    has_btc = meanfield.btc_verdict(prm, pts, window)
    return has_f, has_btc


def phase_grid(params: ModelParams, n_wx: int, n_dg: int, wx_max: float, dg_max: float,
               window: int = 10, executor=None):
    """Cell-centred (omega_x, dGamma) grid with F / BTC flags; dGamma = gamma_up."""
    wx = (np.arange(n_wx) + 0.5) * wx_max / n_wx
    dg = (np.arange(n_dg) + 0.5) * dg_max / n_dg
    jobs = [(params.replace(omega_x=float(a), gamma_up=float(b), gamma_down=0.0), window) for b in dg for a in wx]
    flags = _map(executor, _phase_cell, jobs)
    f = np.array([x[0] for x in flags]).reshape(n_dg, n_wx)
    b = np.array([x[1] for x in flags]).reshape(n_dg, n_wx)
    return wx, dg, f, b


def cmd_phasediagram(cfg: RunConfig) -> list[Path]:
    o, prm = cfg.options, cfg.params
    with _executor(cfg.threads) as ex:
        wx, dg, f, b = phase_grid(prm, _i(o, "n_omega_x"), _i(o, "n_delta_gamma"), _f(o, "omega_x_max"),
                                  _f(o, "delta_gamma_max"), _i(o, "window_periods"), ex)
    lab = f.astype(int) + 2 * b.astype(int)
    rows = [(wx[i], dg[j], PHASE_LABELS[lab[j, i]], int(f[j, i]), int(b[j, i]))
            for j in range(len(dg)) for i in range(len(wx))]
    files = [_write_csv(cfg, "phasediagram.csv", ["omega_x", "delta_gamma", "label", "F", "BTC"], rows)]
    counts = {name: int(np.sum(lab == k)) for k, name in enumerate(PHASE_LABELS)}
    files.append(_write_json(cfg, "phasediagram.json", {"counts": counts, "labels": list(PHASE_LABELS)}))
    ds = Dataset(grid=(wx, dg, lab, list(PHASE_LABELS)))
    files.append(_svg(cfg, "phasediagram.svg", ds, PlotSpec(xlabel="omega_x / omega_z",
                                                             ylabel="delta Gamma / omega_z")))
    return files


def cmd_ansatz_check(cfg: RunConfig) -> list[Path]:
    o = cfg.options
    rng = np.random.default_rng(_i(o, "seed"))
    worst, rows = 0.0, []
    for i in range(_i(o, "n_samples")):
        n = int(rng.integers(2, _i(o, "n_max") + 1))
        a = float(rng.uniform(0, 1))
        b = float(rng.uniform(-1, 1)) * math.sqrt(a * (1 - a))
        ans = analysis.ProductAnsatz(a, b, float(rng.uniform(0, 2 * math.pi)), n)
        x, y = analysis.ansatz_total_spin(ans), analysis.brute_force_total_spin(ans)
        worst = max(worst, abs(x - y))
        rows.append((i, n, a, b, ans.phase, x, y))
    files = [_write_csv(cfg, "ansatz.csv", ["i", "N", "a", "b", "phase", "identity", "brute_force"], rows)]
    files.append(_write_json(cfg, "ansatz.json", {"max_abs_difference": worst, "n_samples": len(rows)}))
    return files


HANDLERS = {
    "meanfield": cmd_meanfield,
    "portrait": cmd_portrait,
    "evolve": cmd_evolve,
    "spectrum": cmd_spectrum,
    "steadystate": cmd_steadystate,
    "scaling": cmd_scaling,
    "phasediagram": cmd_phasediagram,
    "ansatz-check": cmd_ansatz_check,
}


def run(cfg: RunConfig) -> list[Path]:
    return HANDLERS[cfg.command](cfg)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="btcspin", description="Boundary time crystal simulations.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="INI file with a [model] section")
    ap.add_argument("--out", default=".", help="output directory (created if needed)")
    ap.add_argument("--threads", type=int, default=None, help="worker processes (default: $BTC_THREADS or 1)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.out, args.threads)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"{ap.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (BTCError, MissingKey) as exc:
        print(json.dumps(exc.to_record()), file=sys.stderr)
        return 1
    t0 = time.perf_counter()
    try:
        files = run(cfg)
    except BTCError as exc:
        print(json.dumps(exc.to_record()), file=sys.stderr)
        return 1
    for p in files:
        print(p)
    print(f"done in {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
