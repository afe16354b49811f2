"""Experiment drivers: simulation runs, figure presets, sweeps and certification.

Every driver writes CSV and SVG files into an output directory together
with ``manifest.json`` (config digest, toolkit version, wall-clock time and
the emitted file list). CSV files are byte-identical for identical inputs;
the manifest is not, since it records timing.

Figure presets (example PI and lag configs, ``x_c(0)`` the controller state):

==  =====================================================================
2   one PI path: ``yhat`` trace with the filter-output alphabet overlaid
3   mean and std of ``y`` under PI and lag, ``x_c(0) = 50``
4   mean and std of ``x1`` for ``x_c(0) = +-50`` under both controllers
5   mean ``x1`` at the last step for 21 values of ``x_c(0)`` in [-50, 50]
6   mean and std of ``pi`` for ``x_c(0) = +-50`` under both controllers
==  =====================================================================
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .agents import CapExceededError, UnsupportedFlavorError
from .config import (
    ExperimentConfig,
    build_config,
    get_param,
    packaged_config,
    parse_number,
    parse_toml,
    set_param,
)
from .ergodicity import (
    ErgodicityVerdict,
    certify_thm3_negative,
    certify_thm4_linear,
    certify_thm5_lipschitz,
    certify_thm6_finite,
    filter_output_alphabet,
)
from .loop import MonteCarloSummary, monte_carlo, simulate_path
from .svg import Series, line_chart

FIGURES = (2, 3, 4, 5, 6)
DEFAULT_PATHS = 2000
FAST_PATHS = 200
SWEEP_POINTS = 21

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NEGATIVE = 2
EXIT_INCONCLUSIVE = 3


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


@dataclass
class RunManifest:
    config_digest: str
    version: str = __version__
    wall_clock_s: float = 0.0
    files: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"config_digest": self.config_digest, "version": self.version,
                "wall_clock_s": round(self.wall_clock_s, 3), "files": sorted(self.files),
                **self.extra}


class _Writer:
    """Collects files written into one run directory."""

    def __init__(self, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.t0 = time.perf_counter()

    def text(self, name: str, text: str) -> Path:
        path = self.out / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.files.append(name)
        return path

    def csv(self, name, header, rows) -> Path:
        return self.text(name, csv_text(header, rows))

    def manifest(self, digest: str, **extra) -> RunManifest:
        m = RunManifest(digest, wall_clock_s=time.perf_counter() - self.t0,
                        files=self.files + ["manifest.json"], extra=extra)
        path = self.out / "manifest.json"
        path.write_text(json.dumps(m.as_dict(), indent=2, sort_keys=True, default=str) + "\n",
                        encoding="utf-8")
        return m


def _summary_columns(summaries: dict, observable: str) -> tuple[list, list]:
    """Header and column arrays ``mean_<obs>_<tag>, std_<obs>_<tag>`` per tagged summary."""
    header, cols = [], []
    for tag, s in summaries.items():
        suffix = f"_{tag}" if tag else ""
        header += [f"mean_{observable}{suffix}", f"std_{observable}{suffix}"]
        cols += [s.mean[observable], s.std[observable]]
    return header, cols


def _time_rows(cols, horizon):
    return ([k] + [c[k] for c in cols] for k in range(horizon))


# ---------------------------------------------------------------------------
# example presets
# ---------------------------------------------------------------------------

def example_raw(controller: str = "pi") -> dict:
    if controller not in ("pi", "lag"):
        raise ValueError("controller must be 'pi' or 'lag'")
    return parse_toml(packaged_config(f"example_{controller}"), f"example_{controller}")


def example_config(controller: str = "pi", xc0=None, n_paths: Optional[int] = None,
                 seed: Optional[int] = None, horizon: Optional[int] = None,
                 workers: Optional[int] = None) -> ExperimentConfig:
    """The shipped example config with optional overrides."""
    raw = example_raw(controller)
    if xc0 is not None:
        raw = set_param(raw, "controller.initial", xc0)
    for key, value in (("n_paths", n_paths), ("seed", seed), ("horizon", horizon),
                       ("workers", workers)):
        if value is not None:
            raw["run"][key] = value
    if raw["run"].get("burn_in", 0) >= raw["run"].get("horizon", 1001):
        raw["run"]["burn_in"] = 0
    return build_config(raw)


def _mc(cfg: ExperimentConfig, observables, workers=None) -> MonteCarloSummary:
    return monte_carlo(cfg.system, cfg.init, cfg.horizon, cfg.n_paths, cfg.seed, observables,
                       workers or cfg.workers, cfg.digest)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def run_simulate(cfg: ExperimentConfig, out, n_paths=None, horizon=None, seed=None,
                 workers=None) -> RunManifest:
    """Monte Carlo over the config's observables; writes ``summary.csv`` and one SVG each."""
    overrides = {"n_paths": n_paths, "horizon": horizon, "seed": seed}
    if any(v is not None for v in overrides.values()):
        raw = copy.deepcopy(cfg.raw)
        run = raw.setdefault("run", {})
        run.update({k: v for k, v in overrides.items() if v is not None})
        if run.get("burn_in", 0) >= run.get("horizon", cfg.horizon):
            run["burn_in"] = 0
        cfg = build_config(raw, cfg.source)
    w = _Writer(out)
    s = _mc(cfg, cfg.observables, workers)
    header, cols = ["k"], []
    for name in cfg.observables:
        h, c = _summary_columns({"": s}, name)
        header += h
        cols += c
    w.csv("summary.csv", header, _time_rows(cols, cfg.horizon))
    ks = np.arange(cfg.horizon)
    for name in cfg.observables:
        w.text(f"{name}.svg", line_chart([Series(ks, s.mean[name], "mean", s.std[name])],
                                         f"{name}: mean and std over {s.n_paths} paths",
                                         "time step k", f"{name} (units)"))
    tail = {name: math.fsum(s.mean[name][cfg.burn_in:]) / (cfg.horizon - cfg.burn_in)
            for name in cfg.observables}
    return w.manifest(cfg.digest, n_paths=s.n_paths, n_diverged=s.n_diverged, seed=cfg.seed,
                      horizon=cfg.horizon, burn_in=cfg.burn_in, tail_means=tail,
                      feasibility_violation_fraction=s.feasibility_violation_fraction)


def _figure_configs(n_paths, seed, horizon, workers, ics=(50,)):
    return {(ctl, xc0): example_config(ctl, xc0=xc0, n_paths=n_paths, seed=seed,
                                     horizon=horizon, workers=workers)
            for ctl in ("pi", "lag") for xc0 in ics}


def _ic_tag(xc0) -> str:
    return f"p{abs(xc0):g}" if xc0 >= 0 else f"m{abs(xc0):g}"


def run_reproduce(figure: int, out, fast: bool = False, n_paths: Optional[int] = None,
                  seed: Optional[int] = None, horizon: Optional[int] = None,
                  workers: int = 1) -> RunManifest:
    """Run one figure preset and write its CSV, SVG and manifest."""
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; choose from {FIGURES}")
    if n_paths is None:
        n_paths = FAST_PATHS if fast else DEFAULT_PATHS
    w = _Writer(out)

    if figure == 2:
        cfg = example_config("pi", seed=seed, horizon=horizon)
        traj = simulate_path(cfg.system, cfg.init, cfg.horizon, cfg.seed, 0, record_agents=False)
        alphabet = sorted(filter_output_alphabet(cfg.system))
        w.csv("fig2.csv", ["k", "y", "yhat", "pi"],
              ([k, traj.y[k], traj.yhat[k], traj.pi[k]] for k in range(len(traj))))
        w.csv("fig2_alphabet.csv", ["value"], ([str(a)] for a in alphabet))
        ks = np.arange(len(traj))
        w.text("fig2.svg", line_chart([Series(ks, traj.yhat, "yhat, PI")],
                                      "filtered output on one path", "time step k",
                                      "yhat (active agents)",
                                      hlines=[float(a) for a in alphabet]))
        return w.manifest(cfg.digest, figure=2, seed=cfg.seed, horizon=cfg.horizon,
                          alphabet=[str(a) for a in alphabet])

    if figure == 5:
        xs = np.linspace(-50, 50, SWEEP_POINTS)
        rows = {float(x): [float(x)] for x in xs}
        digests = {}
        for ctl in ("pi", "lag"):
            for x in xs:
                cfg = example_config(ctl, xc0=float(x), n_paths=n_paths, seed=seed,
                                   horizon=horizon, workers=workers)
                s = _mc(cfg, ("x1",))
                rows[float(x)] += [s.mean["x1"][-1], s.std["x1"][-1]]
            digests[ctl] = cfg.digest
            last = cfg.horizon - 1
        header = ["xc0", f"mean_x1_{last}_pi", f"std_x1_{last}_pi",
                  f"mean_x1_{last}_lag", f"std_x1_{last}_lag"]
        w.csv("fig5.csv", header, rows.values())
        table = np.array(list(rows.values()))
        w.text("fig5.svg", line_chart(
            [Series(table[:, 0], table[:, 1], "PI"), Series(table[:, 0], table[:, 3], "lag")],
            f"mean x1 at k={last} against initial controller state",
            "x_c(0)", f"mean x1({last}) (fraction active)"))
        return w.manifest(_joint_digest(digests), figure=5, n_paths=n_paths,
                          config_digests=digests)

    observable, ics = {3: ("y", (50,)), 4: ("x1", (50, -50)), 6: ("pi", (50, -50))}[figure]
    cfgs = _figure_configs(n_paths, seed, horizon, workers, ics)
    summaries = {}
    for (ctl, xc0), cfg in cfgs.items():
        tag = ctl if len(ics) == 1 else f"{ctl}_{_ic_tag(xc0)}"
        summaries[tag] = _mc(cfg, (observable,))
    header, cols = _summary_columns(summaries, observable)
    H = next(iter(cfgs.values())).horizon
    w.csv(f"fig{figure}.csv", ["k"] + header, _time_rows(cols, H))
    ks = np.arange(H)
    units = {"y": "active agents", "x1": "fraction active", "pi": "signal"}[observable]
    w.text(f"fig{figure}.svg", line_chart(
        [Series(ks, s.mean[observable], tag, s.std[observable]) for tag, s in summaries.items()],
        f"{observable}: mean and std over {n_paths} paths", "time step k",
        f"{observable} ({units})"))
    feas = {tag: s.feasibility_violation_fraction for tag, s in summaries.items()}
    return w.manifest(_joint_digest({t: c.digest for t, c in zip(summaries, cfgs.values())}),
                      figure=figure, n_paths=n_paths,
                      config_digests={t: c.digest for t, c in zip(summaries, cfgs.values())},
                      feasibility_violation_fraction=feas,
                      n_diverged={t: s.n_diverged for t, s in summaries.items()})


def _joint_digest(digests: dict) -> str:
    text = json.dumps(digests, sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _sweep_value(text):
    """CLI value: integer literals stay integers, other numerals stay strings (exact)."""
    if isinstance(text, str):
        t = text.strip()
        try:
            return int(t)
        except ValueError:
            return t
    return text


def run_sweep(cfg: ExperimentConfig, param: str, values: Sequence, out,
              workers: Optional[int] = None) -> RunManifest:
    """One Monte Carlo run per value of a scalar config field; writes ``sweep.csv``.

    Columns per observable: the final-step mean and std, and the mean over
    ``k >= burn_in`` of the per-step path mean.
    """
    get_param(cfg.raw, param)
    set_param(cfg.raw, param, 0)  # rejects non-scalar targets before any work
    header = ["value"]
    for name in cfg.observables:
        header += [f"mean_{name}_final", f"std_{name}_final", f"avg_{name}"]
    w = _Writer(out)
    rows, digests = [], []
    if not values:
        warnings.warn("sweep over an empty value list; writing a header-only CSV",
                      stacklevel=2)
    for v in values:
        vcfg = build_config(set_param(cfg.raw, param, _sweep_value(v)), cfg.source)
        s = _mc(vcfg, vcfg.observables, workers)
        row = [v]
        for name in vcfg.observables:
            tail = s.mean[name][vcfg.burn_in:]
            row += [s.mean[name][-1], s.std[name][-1], math.fsum(tail) / len(tail)]
        rows.append(row)
        digests.append(vcfg.digest)
    w.csv("sweep.csv", header, rows)
    if rows and all(_is_number(r[0]) for r in rows):
        xs = np.array([float(_as_float(r[0])) for r in rows])
        series = [Series(xs, np.array([r[1 + 3 * n] for r in rows]), name,
                         np.array([r[2 + 3 * n] for r in rows]))
                  for n, name in enumerate(cfg.observables)]
        w.text("sweep.svg", line_chart(series, f"sweep over {param}", param,
                                       "final-step mean (observable units)"))
    return w.manifest(cfg.digest, param=param, values=[str(v) for v in values],
                      config_digests=digests)


def _as_float(v) -> float:
    return float(parse_number(_sweep_value(v)))


def _is_number(v) -> bool:
    try:
        _as_float(v)
        return True
    except (TypeError, ValueError):
        return False


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------

CERTIFICATES: tuple[tuple[str, Callable], ...] = (
    ("thm4_linear", certify_thm4_linear),
    ("thm5_lipschitz", certify_thm5_lipschitz),
    ("thm6_finite", certify_thm6_finite),
    ("thm3_unit_pole", certify_thm3_negative),
)


@dataclass
class CertifyReport:
    verdicts: list  # (tag, ErgodicityVerdict or None, note)
    exit_code: int

    def table(self) -> str:
        lines = [f"{'theorem':<16} {'status':<22} details"]
        for tag, verdict, note in self.verdicts:
            if verdict is None:
                lines.append(f"{tag:<16} {'not applicable':<22} {note}")
                continue
            ev = ", ".join(f"{k}={_short(v)}" for k, v in verdict.evidence.items())
            why = "; ".join(verdict.reasons)
            lines.append(f"{tag:<16} {verdict.status:<22} {ev}" + (f" | {why}" if why else ""))
        return "\n".join(lines)

    def find(self, tag: str) -> Optional[ErgodicityVerdict]:
        for t, v, _ in self.verdicts:
            if t == tag:
                return v
        return None


def _short(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def run_certify(cfg: ExperimentConfig) -> CertifyReport:
    """Run every certificate; flavor and size errors are reported per certificate.

    Exit status: 0 if a positive certificate holds, otherwise 2 if the
    negative certificate fires, otherwise 3.
    """
    verdicts = []
    for tag, fn in CERTIFICATES:
        try:
            verdicts.append((tag, fn(cfg.system), ""))
        except (UnsupportedFlavorError, CapExceededError, TypeError) as exc:
            verdicts.append((tag, None, str(exc)))
    statuses = [v.status for _, v, _ in verdicts if v is not None]
    if "uniquely_ergodic" in statuses:
        code = EXIT_OK
    elif "not_uniquely_ergodic" in statuses:
        code = EXIT_NEGATIVE
    else:
        code = EXIT_INCONCLUSIVE
    return CertifyReport(verdicts, code)
