"""Monte-Carlo convergence experiments of the mean field towards the 2D limit.

For each N the simulation is run for a number of independent realizations,
the squared negative-Sobolev distances of Bbar3 and Abar3 to the limit (and
to the intermediate system) are computed at the recorded times, averaged over
realizations, and the supremum over time is reported with its standard error.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .limit import intermediate_params, limit_params, solve_A3, solve_B3
from .noise import NoiseSpec, eta_coefficients
from .solver import InitialCondition, SimConfig, SimulationError, initial_field, mean_A3, mean_B3, simulate
from .spectral import sobolev_norm

Z95 = 1.959963984540054


@dataclass(frozen=True)
class ExperimentConfig:
    Ns: tuple = (4, 8, 16)
    realizations: int = 64
    theta1: float = 1.0
    theta2: float = 0.5
    delta: float = 0.25
    seed: int = 0
    noise: dict = field(default_factory=lambda: {"rho": 0.7})
    dt: float = 1e-3
    T: float = 0.25
    Kmax: int | None = None
    record_every: int = 10
    initial: InitialCondition = field(default_factory=InitialCondition)
    noise_on: bool = True
    workers: int = 1

    def __post_init__(self):
        if not (0 < self.delta < self.theta2 < self.theta1 <= 1):
            raise ValueError("need 0 < delta < theta2 < theta1 <= 1")
        if self.realizations < 1 or not self.Ns:
            raise ValueError("need at least one N and one realization")
        if "N" in self.noise:
            raise ValueError("N is set through Ns, not in the noise section")

    def spec(self, N):
        return NoiseSpec(N=int(N), **self.noise)

    def sim_config(self, N):
        return SimConfig(self.spec(N), dt=self.dt, T=self.T, Kmax=self.Kmax,
                         record_every=self.record_every, initial=self.initial)

    def echo(self):
        d = asdict(self)
        d["Ns"] = list(self.Ns)
        d.pop("workers")
        return d


@dataclass
class ConvergenceReport:
    records: list
    slopes: dict
    config: dict
    metadata: dict

    def to_dict(self):
        return {"config": self.config, "records": self.records, "slopes": self.slopes,
                "metadata": self.metadata}


def fit_rate(points):
    """Least squares of log err on log N: (slope, intercept, r2)."""
    pts = list(points)
    if len(pts) < 2:
        raise ValueError("need at least two points")
    n = np.array([p[0] for p in pts], dtype=float)
    e = np.array([p[1] for p in pts], dtype=float)
    if np.any(e <= 0) or np.any(n <= 0):
        raise ValueError("N and err must be positive")
    x, y = np.log(n), np.log(e)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def build_id():
    """Short hash of the package sources."""
    h = hashlib.sha1()
    here = Path(__file__).parent
    for p in sorted(here.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def _references(cfg, N):
    """Initial profiles and the limit/intermediate solutions at the recorded times."""
    sc = cfg.sim_config(N)
    B0 = initial_field(sc.initial, sc.domain)
    b0, a0 = mean_B3(B0), mean_A3(B0)
    steps = list(range(0, sc.n_steps + 1, sc.record_every))
    if steps[-1] != sc.n_steps:
        steps.append(sc.n_steps)
    times = [n * sc.dt for n in steps]
    pl, pi = limit_params(sc.spec), intermediate_params(sc.spec)
    ref = {
        "limit": [(solve_B3(b0, a0, t, pl), solve_A3(a0, t, pl)) for t in times],
        "inter": [(solve_B3(b0, a0, t, pi), solve_A3(a0, t, pi)) for t in times],
    }
    return times, ref


def _one_realization(args):
    cfg, N, r = args
    sc = cfg.sim_config(N)
    times, ref = _references(cfg, N)
    try:
        res = simulate(sc, cfg.seed, r, noise=cfg.noise_on)
    except SimulationError:
        return None
    out = np.empty((4, len(times)))
    for i, (b, a) in enumerate(zip(res.mean_B3, res.mean_A3)):
        bl, al = ref["limit"][i]
        bi, ai = ref["inter"][i]
        out[0, i] = sobolev_norm(b - bl, -cfg.theta1) ** 2
        out[1, i] = sobolev_norm(a - al, -cfg.theta2) ** 2
        out[2, i] = sobolev_norm(b - bi, -cfg.theta1) ** 2
        out[3, i] = sobolev_norm(a - ai, -cfg.theta2) ** 2
    return out


def _summary(samples):
    """sup_t of the realization mean, with the standard error at the maximiser."""
    m = samples.mean(axis=0)
    i = int(np.argmax(m))
    R = samples.shape[0]
    se = float(samples[:, i].std(ddof=1) / math.sqrt(R)) if R > 1 else float("nan")
    return float(m[i]), se, i


def run_convergence(cfg, progress=None):
    t0 = time.time()
    records = []
    for N in cfg.Ns:
        times, _ = _references(cfg, N)
        jobs = [(cfg, N, r) for r in range(cfg.realizations)]
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers) as ex:
                results = list(ex.map(_one_realization, jobs))
        else:
            results = [_one_realization(j) for j in jobs]
        ok = [x for x in results if x is not None]
        failed = len(results) - len(ok)
        if failed > 0.05 * len(results):
            raise SimulationError(-1, f"{failed} of {len(results)} realizations failed at N={N}")
        samples = np.stack(ok)
        e = eta_coefficients(cfg.spec(N))
        rec = {"N": int(N), "realizations": len(ok), "failed": failed,
               "eta_T_gap": e.eta_T_eps - e.eta_T_limit}
        for k, name in enumerate(("errB", "errA", "errB_hat", "errA_hat")):
            val, se, i = _summary(samples[:, k])
            rec[name] = val
            rec[name + "_se"] = se
            rec[name + "_lo"] = val - Z95 * se
            rec[name + "_hi"] = val + Z95 * se
            rec[name + "_t"] = times[i]
        records.append(rec)
        if progress:
            progress(rec)
    slopes = {}
    if len(records) >= 2:
        for name in ("errB", "errA", "errB_hat", "errA_hat"):
            pts = [(r["N"], r[name]) for r in records]
            if all(p[1] > 0 for p in pts):
                s, c, r2 = fit_rate(pts)
                slopes[name] = {"slope": s, "intercept": c, "r2": r2}
    meta = {"seed": cfg.seed, "build_id": build_id(), "wall_time": time.time() - t0}
    return ConvergenceReport(records, slopes, cfg.echo(), meta)


# -------------------------------------------------------------------- output


CSV_COLUMNS = ["N"] + [
    f"{n}{s}" for n in ("errB", "errA", "errB_hat", "errA_hat") for s in ("", "_lo", "_hi", "_se")
]


def _open_for_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def emit_report(report, path, fmt="json"):
    """Write the report as JSON (full) or CSV (one row per N)."""
    if fmt == "json":
        with _open_for_write(path) as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    elif fmt == "csv":
        with _open_for_write(path) as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in report.records:
                w.writerow([r.get(c, "") for c in CSV_COLUMNS])
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def load_report(path):
    with open(path) as fh:
        d = json.load(fh)
    return ConvergenceReport(d["records"], d["slopes"], d["config"], d["metadata"])


def _svg_chart(records, series):
    W, H, pad = 640, 440, 60
    pts = [(r["N"], r[s], r[s + "_lo"], r[s + "_hi"]) for s in series for r in records]
    xs = [math.log10(p[0]) for p in pts]
    ys = [math.log10(v) for p in pts for v in (p[1], p[2], p[3]) if v > 0]
    if not xs or not ys:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}"></svg>\n'
    x0, x1 = min(xs) - 0.05, max(xs) + 0.05
    y0, y1 = min(ys) - 0.1, max(ys) + 0.1

    def X(n):
        return pad + (math.log10(n) - x0) / (x1 - x0) * (W - 2 * pad)

    def Y(v):
        v = max(v, 10**y0)
        return H - pad - (math.log10(v) - y0) / (y1 - y0) * (H - 2 * pad)

    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
           f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle">N (log scale)</text>',
           f'<text x="15" y="{H / 2}" transform="rotate(-90 15 {H / 2})" text-anchor="middle">squared error (log scale)</text>']
    for r in records:
        out.append(f'<text x="{X(r["N"]):.1f}" y="{H - pad + 16}" text-anchor="middle">{r["N"]}</text>')
    for e in range(math.ceil(y0), math.floor(y1) + 1):
        out.append(f'<text x="{pad - 6}" y="{Y(10**e) + 4:.1f}" text-anchor="end">1e{e}</text>')
    for j, s in enumerate(series):
        c = colours[j % len(colours)]
        line = " ".join(f"{X(r['N']):.1f},{Y(r[s]):.1f}" for r in records if r[s] > 0)
        out.append(f'<polyline points="{line}" fill="none" stroke="{c}" stroke-width="2"/>')
        for r in records:
            lo = max(r[s + "_lo"], 10**y0)
            out.append(f'<line x1="{X(r["N"]):.1f}" y1="{Y(lo):.1f}" x2="{X(r["N"]):.1f}" '
                       f'y2="{Y(r[s + "_hi"]):.1f}" stroke="{c}"/>')
        out.append(f'<text x="{W - pad - 100}" y="{pad + 16 * j}" fill="{c}">{s}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot_data(report, out_dir):
    """CSV with errors and 95% bounds per N, plus an SVG log-log chart."""
    out_dir = Path(out_dir)
    csv_path = emit_report(report, out_dir / "convergence_plot.csv", "csv")
    svg_path = out_dir / "convergence.svg"
    with _open_for_write(svg_path) as fh:
        fh.write(_svg_chart(report.records, ["errB", "errA", "errB_hat", "errA_hat"]))
    return csv_path, svg_path


def with_overrides(cfg, **kw):
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw) if kw else cfg
