"""Experiment configuration, dispatch, persistence and plot-data tables.

Configs are JSON objects with an explicit schema_version; unknown keys and
bad values are collected and reported together.  Floats are written with
17 significant digits (CSV) or Python's round-trip repr (JSON), so every
output reloads to the same doubles.
"""
import csv
import datetime as _dt
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from . import divisor, floquet, pwspace, spectra, statistics
from .potential import GibbsConfig, PotentialSpec, sample_gibbs

SCHEMA_VERSION = 1
COMMANDS = ("discriminant", "spectrum", "gram", "divisor-newton", "recover", "mc", "sample")
MC_EXPERIMENTS = ("concentration", "gaps", "both")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NumericFailure(RuntimeError):
    def __init__(self, record, cause):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.record = record
        self.cause = cause


NUMERIC_ERRORS = (floquet.IntegrationError, spectra.BracketError, np.linalg.LinAlgError,
                  divisor.DivergenceError, divisor.DegenerateGapError,
                  statistics.InsufficientSamplesError, statistics.ContractionError,
                  ArithmeticError, RuntimeError)


@dataclass
class ExperimentConfig:
    command: str
    schema_version: int = SCHEMA_VERSION
    spec: object = None          # path to a spec JSON, or the spec object itself
    t: object = None             # path or list: sampling window for gram
    sampler: dict = None         # GibbsConfig fields for mc / sample
    experiment: str = "both"
    trials: int = 500
    m: int = 8
    g: object = "sinc"
    jmax: int = 8
    n: int = None
    gaps: int = 2
    tol: float = None
    grid: object = None
    seed: int = None
    out: str = None
    derivative: bool = False
    oracle: bool = False
    max_iter: int = 20

    def __post_init__(self):
        problems = []
        if self.schema_version != SCHEMA_VERSION:
            problems.append(f"schema_version {self.schema_version!r} unsupported (expected {SCHEMA_VERSION})")
        if self.command not in COMMANDS:
            problems.append(f"unknown command {self.command!r}")
        needs_spec = self.command in ("discriminant", "spectrum", "divisor-newton", "recover")
        if needs_spec and self.spec is None:
            problems.append(f"{self.command} needs a spec")
        if self.command == "gram" and self.t is None:
            problems.append("gram needs t")
        if self.command in ("mc", "sample") and self.sampler is None:
            problems.append(f"{self.command} needs a sampler section")
        if self.command == "discriminant" and self.grid is None:
            problems.append("discriminant needs grid a:b:n")
        if self.command == "mc" and self.experiment not in MC_EXPERIMENTS:
            problems.append(f"experiment must be one of {MC_EXPERIMENTS}")
        for name in ("jmax", "gaps", "trials", "m", "max_iter"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                problems.append(f"{name} must be a positive integer")
        if self.n is not None and (not isinstance(self.n, int) or self.n < 1):
            problems.append("n must be a positive integer")
        if self.tol is not None and not (isinstance(self.tol, (int, float)) and self.tol > 0):
            problems.append("tol must be positive")
        if isinstance(self.spec, str) and not os.path.isfile(self.spec):
            problems.append(f"spec file {self.spec!r} not found")
        if isinstance(self.t, str) and not os.path.isfile(self.t):
            problems.append(f"t file {self.t!r} not found")
        if self.sampler is not None:
            if not isinstance(self.sampler, dict):
                problems.append("sampler must be an object")
            else:
                known = {f.name for f in fields(GibbsConfig)}
                extra = sorted(set(self.sampler) - known)
                if extra:
                    problems.append(f"unknown sampler keys {extra}")
                else:
                    try:
                        GibbsConfig(**self.sampler)
                    except (TypeError, ValueError) as e:
                        problems.append(f"sampler: {e}")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError(["config must be a JSON object"])
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        problems = [f"unknown key {k!r}" for k in extra]
        if "command" not in d:
            problems.append("missing key 'command'")
        if problems:
            raise ConfigError(problems)
        return cls(**d)

    @classmethod
    def load(cls, path, **overrides):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise ConfigError([f"config file {path!r} not found"]) from None
        except json.JSONDecodeError as e:
            raise ConfigError([f"config file {path!r} is not valid JSON: {e}"]) from None
        if not isinstance(d, dict):
            raise ConfigError(["config must be a JSON object"])
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def to_dict(self):
        return asdict(self)

    def resolved(self):
        """Config with the spec and t inlined, so the record is self-contained."""
        d = self.to_dict()
        if self.spec is not None:
            d["spec"] = load_spec(self.spec).to_dict()
        if self.t is not None:
            d["t"] = [float(x) for x in load_t(self.t)]
        d.pop("out")
        return d


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    started: str
    finished: str = None
    version: str = __version__
    status: str = "ok"
    error: str = None
    summary: dict = field(default_factory=dict)
    trials: list = field(default_factory=list)
    series: dict = field(default_factory=dict)

    def manifest(self):
        d = {k: v for k, v in asdict(self).items() if k not in ("trials", "series")}
        d["trial_count"] = len(self.trials)
        d["series"] = sorted(self.series)
        return d

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def load_spec(spec):
    if isinstance(spec, PotentialSpec):
        return spec
    if isinstance(spec, dict):
        return PotentialSpec.from_dict(spec)
    with open(spec) as fh:
        return PotentialSpec.from_json(fh.read())


def load_t(t):
    if isinstance(t, str):
        with open(t) as fh:
            t = json.load(fh)
    if isinstance(t, dict):
        t = t["t"]
    return np.asarray(t, float)


def parse_grid(grid):
    if isinstance(grid, str):
        try:
            a, b, n = grid.split(":")
            return np.linspace(float(a), float(b), int(n))
        except ValueError:
            raise ConfigError([f"grid {grid!r} must look like a:b:n"]) from None
    return np.asarray(grid, float)


def _canonical(obj):
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_hash(resolved):
    return hashlib.sha256(_canonical(resolved).encode()).hexdigest()


def _plain(x):
    """Numpy-free copy suitable for json."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return x


def dumps(obj):
    return json.dumps(_plain(obj))


def fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------- commands

def _cmd_discriminant(cfg):
    spec = load_spec(cfg.spec)
    grid = parse_grid(cfg.grid)
    rows = floquet.discriminant_scan(spec, grid, cfg.tol or 1e-10, cfg.derivative)
    cols = ["lambda", "delta"] + (["delta_prime"] if cfg.derivative else [])
    series = {"discriminant": {c: [r[i] for r in rows] for i, c in enumerate(cols)}}
    return {"points": len(rows)}, [], series


def _cmd_spectrum(cfg):
    spec = load_spec(cfg.spec)
    sd = spectra.compute_spectrum(spec, cfg.jmax, cfg.tol or 1e-9)
    summary = {"lambdas": sd.lambdas, "mus": sd.mus, "gaps": sd.gaps}
    series = {}
    if cfg.oracle:
        per = spectra.oracle_periodic_union(spec, 2 * cfg.jmax + 1)
        dirich = spectra.fourier_matrix_oracle(spec, 64, "dirichlet", cfg.jmax)
        series["oracle"] = {"kind": ["periodic"] * len(per) + ["dirichlet"] * len(dirich),
                            "index": list(range(len(per))) + list(range(1, len(dirich) + 1)),
                            "ode": list(sd.lambdas) + list(sd.mus),
                            "oracle": list(per) + list(dirich)}
        summary["oracle_max_diff"] = float(max(np.max(np.abs(per - sd.lambdas)),
                                               np.max(np.abs(dirich - sd.mus))))
    return summary, [], series


def _cmd_gram(cfg):
    t = load_t(cfg.t)
    seq = pwspace.SamplingSequence(t)
    n = cfg.n or seq.n
    g = pwspace.gram(seq, n)
    cert = pwspace.riesz_certificate(seq, n)
    return {"det2": g.det2, "eig_min": g.eig_min, "eig_max": g.eig_max,
            "margin": cert["margin"], "certified": cert["certified"]}, [], {}


def _cmd_divisor_newton(cfg):
    spec = load_spec(cfg.spec)
    n = cfg.n or cfg.gaps
    sd = divisor.spectrum_for_divisor(spec, max(n, cfg.gaps))
    state = divisor.newton_divisor_solve(sd, cfg.gaps, n, tol=cfg.tol or 1e-8, max_iter=cfg.max_iter)
    summary = {"sigma": state.sigma, "residual_inf": state.residual_inf,
               "det2_Xprime0": state.det2_Xprime0, "iterations": state.iterations,
               "converged": state.converged, "L0": state.L0}
    series = {"newton": {"iteration": list(range(len(state.history))), "residual": state.history}}
    return summary, [], series


def _cmd_recover(cfg):
    spec = load_spec(cfg.spec)
    points = int(cfg.grid) if cfg.grid is not None else 256
    rec = divisor.recover_potential(spec, points, cfg.jmax)
    summary = {"max_error": rec.max_error, "masked": int(np.sum(rec.masked)),
               "mean_recovered": float(np.nanmean(rec.q_recovered))}
    series = {"recovery": {"s": rec.s, "q_true": rec.q_true, "q_recovered": rec.q_recovered}}
    return summary, [], series


def _cmd_mc(cfg):
    gcfg = GibbsConfig(**cfg.sampler)
    summary, trials, series = {}, [], {}
    if cfg.experiment in ("concentration", "both"):
        rep = statistics.mc_concentration(gcfg, cfg.g, cfg.m, cfg.trials)
        trials = rep.records
        summary.update({"mean": rep.mean, "variance": rep.variance, "std_error": rep.std_error,
                        "ess": rep.ess, "tail_slope": rep.fit.slope, "tail_r2": rep.fit.r2,
                        "kappa_envelope": rep.fit.kappa_envelope,
                        "lipschitz_mean": rep.lipschitz_mean,
                        "lipschitz_variance": rep.lipschitz_variance})
        series["tails"] = {"eps": rep.eps, "empirical_tail": rep.tail, "rate_bound": rep.rate_bound}
    if cfg.experiment in ("gaps", "both"):
        if trials:
            lw = np.array([r["log_weight"] for r in trials])
            gaps = np.array([r["gaps"] for r in trials])
            jm = min(12, gaps.shape[1])
            gs = statistics.gap_scaling_from_gaps(gaps, lw, range(2, jm + 1))
        else:
            gs = statistics.mean_gap_scaling(gcfg, trials=cfg.trials)
        summary.update({"gap_slope": gs.slope, "gap_ess": gs.ess, "gap_flagged": gs.flagged})
        series["gaps"] = {"j": gs.j, "mean_gap": gs.mean_gap, "stderr": gs.stderr}
    return summary, trials, series


def _cmd_sample(cfg):
    gcfg = GibbsConfig(**cfg.sampler)
    batch = sample_gibbs(gcfg)
    trials = [s.to_dict() for s in batch]
    inside = sum(s.in_ball for s in batch)
    return {"drawn": len(batch), "in_ball": inside}, trials, {}


DISPATCH = {"discriminant": _cmd_discriminant, "spectrum": _cmd_spectrum, "gram": _cmd_gram,
            "divisor-newton": _cmd_divisor_newton, "recover": _cmd_recover, "mc": _cmd_mc,
            "sample": _cmd_sample}


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def run(cfg):
    """Execute one experiment; writes outputs when cfg.out is set.

    Numeric failures are recorded in the manifest and re-raised as
    NumericFailure carrying the record.
    """
    if cfg.sampler is not None and cfg.seed is not None:
        cfg.sampler = dict(cfg.sampler, seed=cfg.seed)
    resolved = cfg.resolved()
    record = RunRecord(_plain(resolved), config_hash(resolved), _now())
    try:
        summary, trials, series = DISPATCH[cfg.command](cfg)
    except NUMERIC_ERRORS as e:
        record.status = "error"
        record.error = f"{type(e).__name__}: {e}"
        record.finished = _now()
        if cfg.out:
            write_outputs(record, cfg.out)
        raise NumericFailure(record, e) from e
    record.summary = _plain(summary)
    record.trials = _plain(trials)
    record.series = _plain(series)
    record.finished = _now()
    if cfg.out:
        write_outputs(record, cfg.out)
    return record


def summary_csv(record):
    rows = []
    for k in sorted(record.summary):
        v = record.summary[k]
        if isinstance(v, list):
            rows.extend((f"{k}[{i}]", x) for i, x in enumerate(v))
        else:
            rows.append((k, v))
    return csv_text(["key", "value"], rows)


def write_outputs(record, out):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        fh.write(json.dumps(_plain(record.manifest()), indent=1, sort_keys=True))
    if record.status != "ok":
        return
    with open(os.path.join(out, "records.jsonl"), "w") as fh:
        for t in record.trials:
            fh.write(dumps(t) + "\n")
    with open(os.path.join(out, "summary.csv"), "w") as fh:
        fh.write(summary_csv(record))
    for kind in record.series:
        with open(os.path.join(out, f"{kind}.csv"), "w") as fh:
            fh.write(emit_plot_data(record, kind))


PLOT_COLUMNS = {
    "discriminant": ["lambda", "delta", "delta_prime"],
    "tails": ["eps", "empirical_tail", "rate_bound"],
    "gaps": ["j", "mean_gap", "stderr"],
    "recovery": ["s", "q_true", "q_recovered"],
    "oracle": ["kind", "index", "ode", "oracle"],
    "newton": ["iteration", "residual"],
}


def emit_plot_data(record, kind):
    """Tidy CSV for one series; column order is fixed per kind."""
    if kind not in PLOT_COLUMNS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {sorted(PLOT_COLUMNS)}")
    if kind not in record.series:
        raise KeyError(f"record has no {kind!r} series")
    data = record.series[kind]
    cols = [c for c in PLOT_COLUMNS[kind] if c in data]
    return csv_text(cols, zip(*(data[c] for c in cols)))
