"""Command-line front end.

Subcommands:
  table1  - correlation / concavity-threshold / SEP-bound table per PSK order
  solve   - one channel + frame realization through every requested design
  mc      - Monte-Carlo run at a fixed operating point
  sweep   - mc over a grid of power / users / modulation / epsilon
  hist    - receive-signal, angle and interference histograms

Configuration comes from an optional flat key=value file plus flag
overrides; dB quantities are converted to linear exactly once, at parse
time.  Exit codes: 0 ok, 2 bad configuration, 3 infeasible or ill-posed
instance, 4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from crbeam import montecarlo, solvers
from crbeam.model import (
    PU_BASE_ANGLES_DEG,
    SU_BASE_ANGLES_DEG,
    Scenario,
    SymbolFrame,
    build_embedding,
    embed_complex,
    load_channels_csv,
    ula_channel,
)
from crbeam.specfun import alpha_star

log = logging.getLogger("crbeam")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4

PSK_ORDERS = (4, 8, 16, 32, 64)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    N: int = 10
    K: int = 8
    L: int = 2
    M: int = 4
    sigma2: float = 0.1
    P_dBW: float = 5.0
    eps_dBW: tuple = (-2.0, -2.0)
    su_angles: tuple = SU_BASE_ANGLES_DEG
    pu_angles: tuple = PU_BASE_ANGLES_DEG
    jitter: bool = True
    seed: int = 0
    runs: int = 1000
    methods: tuple = ("conventional", "wsusep", "approx")
    axis: str = "none"            # power | users | modulation | epsilon | none
    range: tuple | None = None    # (start, stop, step)
    out: str = "out"
    workers: int = 1
    symbols_per_frame: int = montecarlo.DEFAULT_BLOCK
    channel_mode: str = "fixed"
    channels_csv: str | None = None   # overrides ULA synthesis for the SUs
    pu_channels_csv: str | None = None

    def validate(self):
        if self.M not in PSK_ORDERS:
            raise ConfigError(f"M must be one of {PSK_ORDERS}")
        if self.N < 1 or self.K < 1 or self.L < 0:
            raise ConfigError("need N >= 1, K >= 1, L >= 0")
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be positive")
        if len(self.eps_dBW) not in (1, self.L) and self.L > 0:
            raise ConfigError("eps_dBW needs one value or one per PU")
        if self.channels_csv is None and self.K > len(self.su_angles):
            raise ConfigError(f"K={self.K} exceeds the {len(self.su_angles)} SU base angles")
        if self.pu_channels_csv is None and self.L > len(self.pu_angles):
            raise ConfigError(f"L={self.L} exceeds the {len(self.pu_angles)} PU base angles")
        if self.axis not in ("none", "power", "users", "modulation", "epsilon"):
            raise ConfigError(f"unknown sweep axis {self.axis!r}")
        if self.axis != "none" and self.range is None:
            raise ConfigError("sweep needs --range start:stop:step")
        if self.runs < 1 or self.workers < 1:
            raise ConfigError("runs and workers must be >= 1")
        if self.channel_mode not in ("fixed", "redraw_per_frame"):
            raise ConfigError("channel_mode must be fixed or redraw_per_frame")
        return self


def _parse_value(key, raw):
    raw = raw.strip()
    if key in ("eps_dBW", "su_angles", "pu_angles"):
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if key == "methods":
        return tuple(v for v in raw.replace(",", " ").split())
    if key == "range":
        return _parse_range(raw)
    if key in ("jitter",):
        return raw.lower() in ("1", "true", "yes", "on")
    if key in ("N", "K", "L", "M", "seed", "runs", "workers", "symbols_per_frame"):
        return int(raw)
    if key in ("sigma2", "P_dBW"):
        return float(raw)
    return raw


def _parse_range(raw):
    parts = raw.split(":")
    if len(parts) != 3:
        raise ConfigError("range must be start:stop:step")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise ConfigError("range must satisfy start <= stop, step > 0")
    return (start, stop, step)


def load_config_file(path) -> dict:
    """Flat key=value file; '#' starts a comment."""
    values = {}
    known = {f.name for f in fields(ExperimentConfig)}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, raw = (s.strip() for s in line.split("=", 1))
                if key not in known:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                try:
                    values[key] = _parse_value(key, raw)
                except ConfigError:
                    raise
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return values


def build_config(args) -> ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for f in fields(ExperimentConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    try:
        return ExperimentConfig(**values).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def build_scenario(cfg: ExperimentConfig) -> Scenario:
    """Synthesize channels (ULA at jittered directions, or CSV input)."""
    P = 10.0 ** (cfg.P_dBW / 10.0)
    eps_list = cfg.eps_dBW if len(cfg.eps_dBW) == cfg.L else cfg.eps_dBW[:1] * cfg.L
    eps = np.array([10.0 ** (e / 10.0) for e in eps_list][:cfg.L])
    if cfg.channels_csv:
        H = load_channels_csv(cfg.channels_csv)[:cfg.K]
        if H.shape != (cfg.K, cfg.N):
            raise ConfigError(f"channel CSV shape {H.shape} != ({cfg.K}, {cfg.N})")
    else:
        su = np.asarray(cfg.su_angles[:cfg.K], dtype=float)
        if cfg.jitter:
            rng = montecarlo._stream(cfg.seed, 1, 0)
            su = su + rng.uniform(-1.0, 1.0, su.size)
        H = np.array([ula_channel(a, cfg.N) for a in su])
    if cfg.pu_channels_csv:
        G = load_channels_csv(cfg.pu_channels_csv)[:cfg.L]
        if G.shape != (cfg.L, cfg.N):
            raise ConfigError(f"PU channel CSV shape {G.shape} != ({cfg.L}, {cfg.N})")
    elif cfg.L:
        pu = np.asarray(cfg.pu_angles[:cfg.L], dtype=float)
        if cfg.jitter:
            rng = montecarlo._stream(cfg.seed, 2, 0)
            pu = pu + rng.uniform(-1.0, 1.0, pu.size)
        G = np.array([ula_channel(a, cfg.N) for a in pu])
    else:
        G = np.zeros((0, cfg.N), dtype=complex)
    return Scenario(N=cfg.N, K=cfg.K, L=cfg.L, H=H, G=G, sigma2=cfg.sigma2,
                    P=P, eps=eps, M=cfg.M)


def mc_config(cfg: ExperimentConfig, scenario: Scenario, runs=None,
              collect_received=False) -> montecarlo.McConfig:
    return montecarlo.McConfig(
        runs=runs if runs is not None else cfg.runs,
        seed=cfg.seed,
        methods=tuple(cfg.methods),
        scenario=scenario,
        symbols_per_frame=cfg.symbols_per_frame,
        channel_mode=cfg.channel_mode,
        su_base_angles=tuple(cfg.su_angles[:cfg.K]),
        pu_base_angles=tuple(cfg.pu_angles[:cfg.L]),
        collect_received=collect_received,
    )


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def cmd_table1(args) -> int:
    rows = []
    for M in PSK_ORDERS:
        rbar = -math.cos(2.0 * math.pi / M)
        if abs(rbar) < 1e-14:
            rbar = 0.0
        res = alpha_star(rbar)
        rows.append((M, rbar, res.alpha_star, res.sep_bound))
    out = getattr(args, "out", None) or "out"
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "table1.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", "rbar", "alpha_star", "sep_bound"])
        for M, rbar, a, b in rows:
            w.writerow([M, f"{rbar:.17g}", f"{a:.10g}", f"{b:.10g}"])
    print("M     rbar        alpha*    1-Phi(alpha*)")
    for M, rbar, a, b in rows:
        print(f"{M:<5d} {rbar:<11.4f} {a:<9.4f} {b:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = build_config(args)
    scenario = build_scenario(cfg)
    rng = montecarlo._stream(cfg.seed, 0, 0)
    frame = SymbolFrame.from_indices(rng.integers(0, cfg.M, cfg.K), cfg.M)
    emb = build_embedding(scenario, frame)

    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "solve.csv")
    rows = []
    code = EXIT_OK
    for method in cfg.methods:
        try:
            if method == "conventional":
                sol = solvers.conventional_maxmin(scenario)
                x = sol.W.T @ frame.b
                rho = solvers.analytic_wsusep(emb, embed_complex(x))
                print(f"conventional: gamma={sol.gamma:.6g} "
                      f"bisection_iters={sol.bisection_iters} analytic_wsusep={rho:.6g}")
                rows.append(["conventional", f"{rho:.10g}", "", f"{sol.gamma:.10g}"])
            else:
                fn = solvers.wsusep_barrier if method == "wsusep" else solvers.approx_wsusep
                sol = fn(emb, scenario)
                power = float(np.linalg.norm(sol.x) ** 2)
                slacks = [float(scenario.eps[l] - abs(scenario.G[l] @ sol.x) ** 2)
                          for l in range(scenario.L)]
                print(f"{method}: rho={sol.rho:.6g} upsilon={sol.upsilon:.6g} "
                      f"power={power:.6g}/{scenario.P:.6g} "
                      f"eps_slacks={['%.3g' % s for s in slacks]} "
                      f"seconds={sol.stats['seconds']:.4g}")
                rows.append([method, f"{sol.rho:.10g}", f"{sol.upsilon:.10g}", ""])
        except solvers.IllPosedError as exc:
            print(f"{method}: {exc}")
            code = EXIT_INFEASIBLE
        except solvers.InfeasibleError as exc:
            print(f"{method}: infeasible: {exc}")
            code = EXIT_INFEASIBLE
        except solvers.SolverError as exc:
            print(f"{method}: solver failure: {exc}")
            code = EXIT_SOLVER
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "rho", "upsilon", "gamma"])
        w.writerows(rows)
    return code


def cmd_mc(args) -> int:
    cfg = build_config(args)
    scenario = build_scenario(cfg)
    report = montecarlo.run_mc(mc_config(cfg, scenario), workers=cfg.workers)
    montecarlo.write_report_csvs(report, scenario, cfg.out)
    for m in report.methods:
        if m in report.wuser:
            print(f"{m}: wuser={report.wuser[m]:.6g} (+-{report.wuser_stderr[m]:.2g}) "
                  f"analytic={report.analytic_mean[m]:.6g} "
                  f"excluded={report.excluded[m]}")
    if not report.valid:
        print("warning: more than 1% of runs excluded; report flagged invalid")
    print(f"wrote CSVs to {cfg.out}")
    return EXIT_OK


def _sweep_points(cfg: ExperimentConfig):
    start, stop, step = cfg.range
    vals = []
    v = start
    while v <= stop + 1e-9:
        vals.append(v)
        v += step
    return vals


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    failures = 0
    for v in _sweep_points(cfg):
        point = dict(
            power=lambda: {"P_dBW": v},
            users=lambda: {"K": int(round(v))},
            modulation=lambda: {"M": int(round(v))},
            epsilon=lambda: {"eps_dBW": (v,) * max(cfg.L, 1)},
        )[cfg.axis]()
        pcfg_kwargs = {**{f.name: getattr(cfg, f.name) for f in fields(ExperimentConfig)}, **point}
        try:
            pcfg = ExperimentConfig(**pcfg_kwargs).validate()
            scenario = build_scenario(pcfg)
            report = montecarlo.run_mc(mc_config(pcfg, scenario), workers=cfg.workers)
            montecarlo.write_report_csvs(report, scenario, cfg.out)
            shown = {m: f"{report.wuser[m]:.4g}" for m in report.methods if m in report.wuser}
            print(f"{cfg.axis}={v:g}: wuser={shown}")
        except (ConfigError, solvers.SolverError, ValueError) as exc:
            failures += 1
            print(f"{cfg.axis}={v:g}: failed: {exc}")
    print(f"wrote CSVs to {cfg.out} ({failures} failed points)")
    return EXIT_OK


def cmd_hist(args) -> int:
    cfg = build_config(args)
    scenario = build_scenario(cfg)
    report = montecarlo.run_mc(mc_config(cfg, scenario, collect_received=True),
                               workers=cfg.workers)
    montecarlo.write_report_csvs(report, scenario, cfg.out)
    montecarlo.write_received_csv(report, cfg.out)
    for m in report.methods:
        if m in report.zeta_violation:
            frac = report.zeta_violation[m]
            print(f"{m}: zeta violation fraction per PU = {np.round(frac, 4)}")
    print(f"wrote CSVs to {cfg.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point.
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--methods", type=lambda s: tuple(s.replace(",", " ").split()),
                   default=None, help="subset of conventional,wsusep,approx")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--P-dBW", dest="P_dBW", type=float, default=None)
    p.add_argument("--eps-dBW", dest="eps_dBW",
                   type=lambda s: tuple(float(v) for v in s.replace(",", " ").split()),
                   default=None)
    p.add_argument("--no-jitter", dest="jitter", action="store_false", default=None)
    p.add_argument("--channel-mode", dest="channel_mode",
                   choices=("fixed", "redraw_per_frame"), default=None)
    p.add_argument("--channels-csv", dest="channels_csv", default=None)
    p.add_argument("--pu-channels-csv", dest="pu_channels_csv", default=None)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crbeam", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("table1", help="concavity thresholds per PSK order")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_table1)

    p = sub.add_parser("solve", help="solve one channel/frame realization")
    _add_common(p)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("mc", help="Monte-Carlo run at one operating point")
    _add_common(p)
    p.set_defaults(fn=cmd_mc)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep along one axis")
    _add_common(p)
    p.add_argument("--axis", choices=("power", "users", "modulation", "epsilon"),
                   default=None)
    p.add_argument("--range", type=_parse_range, default=None,
                   help="start:stop:step")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("hist", help="signal/angle/interference histograms")
    _add_common(p)
    p.set_defaults(fn=cmd_hist)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("CRBEAM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    ap = make_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except solvers.IllPosedError as exc:
        print(f"ill-posed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except solvers.InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except solvers.SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
