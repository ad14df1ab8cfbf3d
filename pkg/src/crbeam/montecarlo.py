"""Monte-Carlo evaluation harness.

One run is one symbol slot: draw (or reuse) channels, draw a symbol frame,
solve the selected beamformer designs, push the transmit vector through the
channel with fresh complex Gaussian noise, detect, and accumulate worst-user
error statistics, normalized interference samples, receive-angle histograms,
and solver timings.

Determinism: every random quantity comes from a counter-based stream keyed
by (seed, purpose, index), so reports are bit-identical regardless of how
many workers execute the runs.  The conventional design is data independent
and is solved once per channel realization; the other designs re-solve every
slot.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from crbeam import solvers
from crbeam.model import (
    Scenario,
    SymbolFrame,
    build_embedding,
    detect_psk,
    embed_complex,
    psi_angle,
    ula_channel,
)

log = logging.getLogger("crbeam.montecarlo")

METHODS = ("conventional", "wsusep", "approx")
DEFAULT_BLOCK = 70      # downlink symbol slots per frame
PSI_BINS = 64


@dataclass
class McConfig:
    runs: int
    seed: int
    methods: tuple
    scenario: Scenario
    symbols_per_frame: int = DEFAULT_BLOCK
    channel_mode: str = "fixed"            # fixed | redraw_per_frame
    su_base_angles: tuple | None = None    # needed for redraw_per_frame
    pu_base_angles: tuple | None = None
    psi_bins: int = PSI_BINS
    collect_received: bool = False

    def __post_init__(self):
        if self.runs < 1 or self.symbols_per_frame < 1:
            raise ValueError("runs and symbols_per_frame must be >= 1")
        if self.channel_mode not in ("fixed", "redraw_per_frame"):
            raise ValueError(f"unknown channel_mode {self.channel_mode!r}")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods: {sorted(bad)}")
        if self.channel_mode == "redraw_per_frame" and (
                self.su_base_angles is None or self.pu_base_angles is None):
            raise ValueError("redraw_per_frame needs su/pu base angles")


@dataclass
class McReport:
    runs: int
    seed: int
    methods: tuple
    wuser: dict                 # method -> empirical SER of each run's worst user
    wuser_stderr: dict
    analytic_mean: dict         # method -> mean analytic worst-user SEP
    per_user_ser: dict          # method -> (K,) empirical SER per user
    zeta: dict                  # method -> (L, runs_effective) samples
    zeta_violation: dict        # method -> (L,) fraction of runs with zeta > 1
    psi_hist: dict              # method -> (counts, bin_edges)
    timing: dict                # method -> {mean_s, p50_s, p95_s, count}
    runs_effective: dict        # method -> runs included in averages
    excluded: dict              # method -> failed/excluded run count
    valid: bool
    received: dict | None = None   # method -> (runs, K) complex samples

    def deterministic_fields(self):
        """Everything except wall-clock timing, for bitwise comparisons."""
        return {
            "runs": self.runs,
            "seed": self.seed,
            "methods": tuple(self.methods),
            "wuser": self.wuser,
            "wuser_stderr": self.wuser_stderr,
            "analytic_mean": self.analytic_mean,
            "per_user_ser": {m: v.tolist() for m, v in self.per_user_ser.items()},
            "zeta": {m: v.tolist() for m, v in self.zeta.items()},
            "zeta_violation": {m: v.tolist() for m, v in self.zeta_violation.items()},
            "psi_hist": {m: (c.tolist(), e.tolist()) for m, (c, e) in self.psi_hist.items()},
            "runs_effective": self.runs_effective,
            "excluded": self.excluded,
            "valid": self.valid,
        }


def zeta(x: np.ndarray, g_l: np.ndarray, eps_l: float) -> float:
    """Normalized instantaneous interference |g_l^T x|^2 / eps_l."""
    if eps_l <= 0:
        raise ValueError("interference budget must be positive")
    return float(abs(np.asarray(g_l) @ np.asarray(x)) ** 2 / eps_l)


def zeta_from_beamformers(W: np.ndarray, frame: SymbolFrame, g_l, eps_l) -> float:
    """Same as zeta() with the transmit vector assembled from beamformers."""
    x = np.asarray(W).T @ frame.b
    return zeta(x, g_l, eps_l)


def psi_histogram(samples, bins: int = PSI_BINS):
    """Mass-preserving histogram of receive angles over (-pi, pi]."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    samples = np.asarray(samples, dtype=float)
    counts, edges = np.histogram(samples, bins=bins, range=(-math.pi, math.pi))
    if counts.sum() != samples.size:
        raise AssertionError("histogram lost mass")
    return counts, edges


def _stream(seed: int, purpose: int, index: int) -> np.random.Generator:
    """Counter-based per-(purpose, index) random stream."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(purpose, index))))


def _box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """n standard complex normals via Box-Muller from one uniform stream."""
    u1 = rng.random(n)
    u2 = rng.random(n)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    return (r * np.cos(2.0 * np.pi * u2) + 1j * r * np.sin(2.0 * np.pi * u2)) / math.sqrt(2.0)


def _epoch_scenario(cfg: McConfig, epoch: int) -> Scenario:
    """Channel realization for one epoch (frame of symbols_per_frame runs)."""
    base = cfg.scenario
    if cfg.channel_mode == "fixed":
        return base
    rng = _stream(cfg.seed, 1, epoch)
    su = np.asarray(cfg.su_base_angles, dtype=float) + rng.uniform(-1.0, 1.0, len(cfg.su_base_angles))
    pu = np.asarray(cfg.pu_base_angles, dtype=float) + rng.uniform(-1.0, 1.0, len(cfg.pu_base_angles))
    H = np.array([ula_channel(a, base.N) for a in su])
    G = (np.array([ula_channel(a, base.N) for a in pu])
         if len(pu) else np.zeros((0, base.N), dtype=complex))
    return Scenario(N=base.N, K=base.K, L=base.L, H=H, G=G, sigma2=base.sigma2,
                    P=base.P, eps=base.eps, M=base.M)


def _run_single(cfg: McConfig, scenario: Scenario, conv_W, run_idx: int):
    """Execute one Monte-Carlo slot; returns a plain-dict record."""
    rng = _stream(cfg.seed, 0, run_idx)
    K, L, M = scenario.K, scenario.L, scenario.M
    indices = rng.integers(0, M, K)
    noise = _box_muller(rng, K) * math.sqrt(scenario.sigma2)
    frame = SymbolFrame.from_indices(indices, M)
    emb = build_embedding(scenario, frame)

    rec = {"run": run_idx, "methods": {}}
    for method in cfg.methods:
        entry = {"ok": True, "seconds": 0.0}
        try:
            if method == "conventional":
                x = conv_W.T @ frame.b
            elif method == "approx":
                sol = solvers.approx_wsusep(emb, scenario)
                x = sol.x
                entry["seconds"] = sol.stats["seconds"]
            elif method == "wsusep":
                sol = solvers.wsusep_barrier(emb, scenario)
                x = sol.x
                entry["seconds"] = sol.stats["seconds"]
                if sol.stats["status"] != "optimal":
                    raise solvers.SolverError("barrier did not converge")
        except solvers.SolverError as exc:
            log.debug("run %d method %s failed: %s", run_idx, method, exc)
            entry["ok"] = False
            rec["methods"][method] = entry
            continue

        y = scenario.H @ x + noise
        detected = np.array([detect_psk(y[i], M) for i in range(K)])
        entry["errors"] = (detected != indices).astype(np.int64)
        entry["psi"] = np.array(
            [psi_angle(y[i], frame.b[i]) if y[i] != 0 else math.pi for i in range(K)])
        entry["zeta"] = np.array(
            [zeta(x, scenario.G[l], scenario.eps[l]) for l in range(L)])
        sep = solvers.analytic_sep_per_user(emb, embed_complex(x))
        entry["analytic"] = float(np.max(sep))
        entry["worst_user"] = int(np.argmax(sep))
        if cfg.collect_received:
            entry["received"] = y
        rec["methods"][method] = entry
    return rec


def _run_chunk(args):
    cfg, scenario, conv_W, run_indices = args
    return [_run_single(cfg, scenario, conv_W, r) for r in run_indices]


def run_mc(cfg: McConfig, workers: int = 1) -> McReport:
    """Run the Monte-Carlo experiment described by cfg.

    Aggregation is performed in run order after collecting per-run records,
    so the report's statistical fields are bit-identical for any worker
    count.  Runs in which a solver fails are excluded from that method's
    averages and counted; the report is flagged invalid if a method loses
    more than 1% of its runs.
    """
    B = cfg.symbols_per_frame
    n_epochs = 1 if cfg.channel_mode == "fixed" else (cfg.runs + B - 1) // B

    epochs = []
    conv_times = []
    for e in range(n_epochs):
        scen = _epoch_scenario(cfg, e)
        conv_W = None
        if "conventional" in cfg.methods:
            t0 = time.perf_counter()
            conv_W = solvers.conventional_maxmin(scen).W
            conv_times.append(time.perf_counter() - t0)
        epochs.append((scen, conv_W))

    def epoch_of(run_idx):
        return 0 if cfg.channel_mode == "fixed" else run_idx // B

    tasks = []
    for e in range(n_epochs):
        if cfg.channel_mode == "fixed":
            runs_here = list(range(cfg.runs))
        else:
            runs_here = [r for r in range(cfg.runs) if epoch_of(r) == e]
        scen, conv_W = epochs[e]
        tasks.append((cfg, scen, conv_W, runs_here))

    if workers <= 1:
        chunks = [_run_chunk(t) for t in tasks]
    else:
        # Split each epoch's runs into per-worker contiguous slices.
        split_tasks = []
        for cfg_t, scen, conv_W, runs_here in tasks:
            for part in np.array_split(np.array(runs_here), workers):
                if part.size:
                    split_tasks.append((cfg_t, scen, conv_W, part.tolist()))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_chunk, split_tasks))

    records = sorted((r for ch in chunks for r in ch), key=lambda r: r["run"])

    K, L = cfg.scenario.K, cfg.scenario.L
    report_kwargs = dict(wuser={}, wuser_stderr={}, analytic_mean={}, per_user_ser={},
                         zeta={}, zeta_violation={}, psi_hist={}, timing={},
                         runs_effective={}, excluded={})
    received = {} if cfg.collect_received else None
    valid = True
    for method in cfg.methods:
        entries = [r["methods"][method] for r in records]
        ok = [e for e in entries if e["ok"]]
        n_ok = len(ok)
        n_bad = len(entries) - n_ok
        report_kwargs["runs_effective"][method] = n_ok
        report_kwargs["excluded"][method] = n_bad
        if n_bad > 0.01 * max(1, len(entries)):
            valid = False
        if n_ok == 0:
            valid = False
            continue
        errors = np.stack([e["errors"] for e in ok])          # (n_ok, K)
        per_user = errors.mean(axis=0)
        report_kwargs["per_user_ser"][method] = per_user
        # Worst-user SER: the error rate of each run's own worst (max-SEP)
        # user, the empirical counterpart of mean_i max_k SEP_k.  The worst
        # user's identity changes with the symbol frame, so the max of the
        # per-user averages would be biased low.
        worst = np.array([e["worst_user"] for e in ok])
        wuser = float(errors[np.arange(n_ok), worst].mean())
        report_kwargs["wuser"][method] = wuser
        report_kwargs["wuser_stderr"][method] = math.sqrt(max(wuser * (1 - wuser), 0.0) / n_ok)
        report_kwargs["analytic_mean"][method] = float(
            np.mean([e["analytic"] for e in ok]))
        if L:
            zmat = np.stack([e["zeta"] for e in ok]).T        # (L, n_ok)
        else:
            zmat = np.zeros((0, n_ok))
        report_kwargs["zeta"][method] = zmat
        report_kwargs["zeta_violation"][method] = (
            (zmat > 1.0).mean(axis=1) if L else np.zeros(0))
        psi = np.concatenate([e["psi"] for e in ok]) if ok else np.zeros(0)
        report_kwargs["psi_hist"][method] = psi_histogram(psi, cfg.psi_bins)
        if method == "conventional":
            times = np.array(conv_times)
        else:
            times = np.array([e["seconds"] for e in ok])
        report_kwargs["timing"][method] = {
            "mean_s": float(times.mean()) if times.size else math.nan,
            "p50_s": float(np.percentile(times, 50)) if times.size else math.nan,
            "p95_s": float(np.percentile(times, 95)) if times.size else math.nan,
            "count": int(times.size),
        }
        if cfg.collect_received:
            received[method] = np.stack([e["received"] for e in ok])

    return McReport(runs=cfg.runs, seed=cfg.seed, methods=tuple(cfg.methods),
                    valid=valid, received=received, **report_kwargs)


# ---------------------------------------------------------------------------
# CSV emission.
# ---------------------------------------------------------------------------

def _dbw(linear: float) -> float:
    return 10.0 * math.log10(linear)


def write_report_csvs(report: McReport, scenario: Scenario, outdir) -> dict:
    """Emit wuser/zeta/psi/timing CSV files; returns {name: path}."""
    os.makedirs(outdir, exist_ok=True)
    paths = {}

    path = os.path.join(outdir, "wuser.csv")
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(["method", "P_dBW", "K", "M", "eps_dBW", "runs",
                        "wuser", "stderr", "analytic_mean"])
        for m in report.methods:
            if m not in report.wuser:
                continue
            eps_dbw = _dbw(float(scenario.eps[0])) if scenario.L else math.nan
            w.writerow([m, f"{_dbw(scenario.P):.6g}", scenario.K, scenario.M,
                        f"{eps_dbw:.6g}", report.runs_effective[m],
                        f"{report.wuser[m]:.10g}", f"{report.wuser_stderr[m]:.6g}",
                        f"{report.analytic_mean[m]:.10g}"])
    paths["wuser"] = path

    path = os.path.join(outdir, "zeta.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "pu_index", "run", "zeta"])
        for m in report.methods:
            if m not in report.zeta:
                continue
            zmat = report.zeta[m]
            for l in range(zmat.shape[0]):
                for r in range(zmat.shape[1]):
                    w.writerow([m, l, r, f"{zmat[l, r]:.10g}"])
    paths["zeta"] = path

    path = os.path.join(outdir, "psi.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "bin_left", "bin_right", "count"])
        for m in report.methods:
            if m not in report.psi_hist:
                continue
            counts, edges = report.psi_hist[m]
            for i, c in enumerate(counts):
                w.writerow([m, f"{edges[i]:.10g}", f"{edges[i + 1]:.10g}", int(c)])
    paths["psi"] = path

    path = os.path.join(outdir, "timing.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "mean_s", "p50_s", "p95_s"])
        for m in report.methods:
            if m not in report.timing:
                continue
            t = report.timing[m]
            w.writerow([m, f"{t['mean_s']:.6g}", f"{t['p50_s']:.6g}", f"{t['p95_s']:.6g}"])
    paths["timing"] = path
    return paths


def write_received_csv(report: McReport, outdir) -> str:
    """Received-sample dump (re, im, user, method), one row per sample."""
    if report.received is None:
        raise ValueError("run_mc was not asked to collect received samples")
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "received.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "run", "user", "re", "im"])
        for m, samples in report.received.items():
            for r in range(samples.shape[0]):
                for u in range(samples.shape[1]):
                    w.writerow([m, r, u, f"{samples[r, u].real:.10g}",
                                f"{samples[r, u].imag:.10g}"])
    return path
