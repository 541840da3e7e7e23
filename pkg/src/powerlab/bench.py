"""Experiment harness: seeded trial grids written as CSV.

Each trial derives its own seed from (base seed, cell index, trial index),
builds one matrix instance (or dataset) from it and shares the starting
vectors across every method in that trial.  Iteration counts are therefore
reproducible byte-for-byte; wall times are not.
"""

import csv
import dataclasses
import math
import os
import re
import statistics
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import PowerLabError, StopRule, random_unit
from .matgen import Spectrum, synth_covariance
from .solvers import (DMPowerConfig, MomentumConfig, dmpower, lanczos,
                      power_method, power_momentum, simultaneous_iteration)
from .streaming import (SampleStream, StreamConfig, dmstream, log_error_metric,
                        minibatch_power_momentum, oja, stochastic_power)

EXPERIMENTS = ("beta-sweep", "lambda2-accuracy", "iteration-grid",
               "walltime-grid", "stream-logerr", "cluster-grid")


# ---------------------------------------------------------------------------
# rho policies
# ---------------------------------------------------------------------------

def parse_rho_policy(text):
    """Normalize a rho policy: eps, sqrt, cbrt, fourth or fixed(value)."""
    t = str(text).strip().lower()
    if t in ("eps", "sqrt", "cbrt", "fourth"):
        return t
    m = re.fullmatch(r"fixed\(([^)]+)\)", t)
    if m:
        t = m.group(1)
    try:
        value = float(t)
    except ValueError:
        raise PowerLabError(f"unknown rho policy {text!r}") from None
    if not 0 < value < 1:
        raise PowerLabError("fixed rho must lie in (0, 1)")
    return f"fixed({value:g})"


def rho_for(policy, eps):
    """Concrete rho for a policy at threshold ``eps``."""
    policy = parse_rho_policy(policy)
    if policy == "eps":
        return eps
    if policy == "sqrt":
        return math.sqrt(eps)
    if policy == "cbrt":
        return eps ** (1.0 / 3.0)
    if policy == "fourth":
        return eps ** 0.25
    return float(policy[6:-1])


# ---------------------------------------------------------------------------
# specs, rows, config files
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    """One experiment grid.  Only fields relevant to ``experiment`` are used."""
    experiment: str
    dims: List[int] = field(default_factory=lambda: [10])
    spectrum: str = "1,0.9,0.8"
    epsilons: List[float] = field(default_factory=lambda: [1e-9])
    rho_policies: List[str] = field(default_factory=lambda: ["eps"])
    trials: int = 50
    seed: int = 0
    out: Optional[str] = None
    methods: List[str] = field(default_factory=list)
    betas: List[float] = field(default_factory=list)
    n_samples: int = 1000
    max_iter: int = 100_000
    lanczos_restarts: int = 50
    batch_sizes: List[int] = field(default_factory=lambda: [500])
    rounds: int = 50
    stream_rhos: List[float] = field(default_factory=lambda: [0.1])
    oja_c: List[float] = field(default_factory=lambda: [3, 9, 27, 81])
    datasets: List[str] = field(default_factory=lambda: ["circles"])
    noise: float = 0.05
    circles_n: int = 1000
    moons_n: int = 500

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise PowerLabError(f"unknown experiment {self.experiment!r}; "
                                f"choose from {', '.join(EXPERIMENTS)}")
        if int(self.trials) < 1:
            raise PowerLabError("trials must be at least 1")
        for e in self.epsilons:
            if not 0 < e < 1:
                raise PowerLabError(f"epsilon {e} outside (0, 1)")
        self.rho_policies = [parse_rho_policy(p) for p in self.rho_policies]
        if not self.methods:
            self.methods = list(DEFAULT_METHODS[self.experiment])

    def spectrum_for(self, d):
        return Spectrum.parse(self.spectrum, d)


DEFAULT_METHODS = {
    "beta-sweep": ["vanilla", "powerm"],
    "lambda2-accuracy": ["simultaneous", "dmpower"],
    "iteration-grid": ["vanilla", "powerm-opt", "dmpower", "lanczos"],
    "walltime-grid": ["vanilla", "powerm-opt", "dmpower", "lanczos"],
    "stream-logerr": ["dmstream", "oja", "minibatch-opt"],
    "cluster-grid": ["vanilla", "powerm-opt", "dmpower"],
}

_LIST_FLOAT = ("epsilons", "betas", "stream_rhos", "oja_c")
_LIST_INT = ("dims", "batch_sizes")
_LIST_STR = ("rho_policies", "methods", "datasets")
_INT = ("trials", "seed", "n_samples", "max_iter", "lanczos_restarts",
        "rounds", "circles_n", "moons_n")
_FLOAT = ("noise",)


def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment; lists use commas."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PowerLabError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def spec_from_mapping(mapping):
    names = {f.name for f in dataclasses.fields(ExperimentSpec)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in names:
            raise PowerLabError(f"unknown config key {key!r}")
        if isinstance(value, str):
            items = [v.strip() for v in value.split(",") if v.strip()]
            if key in _LIST_FLOAT:
                value = [float(v) for v in items]
            elif key in _LIST_INT:
                value = [int(v) for v in items]
            elif key in _LIST_STR:
                value = items
            elif key in _INT:
                value = int(value)
            elif key in _FLOAT:
                value = float(value)
        kwargs[key] = value
    if "experiment" not in kwargs:
        raise PowerLabError("config must set experiment")
    return ExperimentSpec(**kwargs)


def load_config(path, **overrides):
    with open(path) as fh:
        mapping = parse_config_text(fh.read())
    mapping.update({k: v for k, v in overrides.items() if v is not None})
    return spec_from_mapping(mapping)


CONFIG_DIR = os.path.join(os.path.dirname(__file__), "configs")


def preset_path(name):
    """Path of a bundled preset such as ``table1``."""
    path = os.path.join(CONFIG_DIR, f"{name}.cfg")
    if not os.path.exists(path):
        raise PowerLabError(f"no preset named {name!r}")
    return path


def list_presets():
    return sorted(f[:-4] for f in os.listdir(CONFIG_DIR) if f.endswith(".cfg"))


@dataclass
class ResultRow:
    experiment: str
    method: str
    d: int
    spectrum_tag: str
    epsilon: float
    rho: Optional[float]
    beta: Optional[float]
    trial: int
    seed: int
    batch_size: Optional[int]
    iterations_total: int
    iterations_pre: int
    iterations_mom: int
    walltime_ns: int
    lambda2_abs_err: Optional[float]
    sin2_final: Optional[float]
    accuracy: Optional[float]
    log_err: Optional[float]
    converged: bool = True


ROW_FIELDS = [f.name for f in dataclasses.fields(ResultRow)]
COUNT_FIELDS = ("experiment", "method", "d", "spectrum_tag", "epsilon", "rho",
                "beta", "trial", "seed", "batch_size", "iterations_total",
                "iterations_pre", "iterations_mom")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(path, rows):
    """CSV with a header equal to the ResultRow field names."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([_cell(getattr(r, f)) for f in ROW_FIELDS])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# timing and seeds
# ---------------------------------------------------------------------------

def timeit(run):
    """Run ``run()`` once; return (result, elapsed nanoseconds).

    Uses the monotonic performance counter and times only the call itself.
    """
    t0 = time.perf_counter_ns()
    result = run()
    return result, time.perf_counter_ns() - t0


def trial_seed_int(base, cell, trial):
    """64-bit seed for one trial, derived from (base, cell, trial)."""
    ss = np.random.SeedSequence([int(base), int(cell), int(trial)])
    return int(ss.generate_state(1, np.uint64)[0])


def trial_streams(seed_int):
    """Independent seed sequences for the instance, start vectors and stream."""
    return np.random.SeedSequence(seed_int).spawn(3)


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------

def _sin2(q, v):
    c = float(q @ v)
    return max(0.0, 1.0 - c * c)


def _row(spec, method, d, tag, eps, trial, seed, rep=None, wall=0, rho=None,
         beta=None, l2err=None, sin2=None, acc=None, logerr=None, batch=None,
         iters=None):
    if rep is not None:
        it_total, it_pre, it_mom = (rep.iterations_total,
                                    getattr(rep, "iterations_pre_momentum", 0),
                                    getattr(rep, "iterations_momentum",
                                            rep.iterations_total))
        conv = bool(rep.converged)
    else:
        it_total, it_pre, it_mom = iters
        conv = True
    return ResultRow(spec.experiment, method, d, tag, eps, rho, beta, trial,
                     seed, batch, it_total, it_pre, it_mom, int(wall), l2err,
                     sin2, acc, logerr, conv)


def _matrix_trials(spec):
    """Yield (cell, d, tag, trial, seed, instance, q0, w0, lam)."""
    for cell, d in enumerate(spec.dims):
        sp = spec.spectrum_for(d)
        tag = sp.tag()
        for trial in range(spec.trials):
            seed = trial_seed_int(spec.seed, cell, trial)
            s_inst, s_start, _ = trial_streams(seed)
            inst = synth_covariance(sp, max(spec.n_samples, d), s_inst)
            rng = np.random.default_rng(s_start)
            q0 = random_unit(d, rng)
            w0 = random_unit(d, rng)
            yield d, tag, trial, seed, inst, q0, w0, sp.as_array()


def _run_beta_sweep(spec):
    rows = []
    for d, tag, trial, seed, inst, q0, _, lam in _matrix_trials(spec):
        A, v1 = inst.covariance, inst.eigenvectors[:, 0]
        for eps in spec.epsilons:
            stop = StopRule("iterate-distance", eps, spec.max_iter)
            for method in spec.methods:
                if method == "vanilla":
                    rep, ns = timeit(lambda: power_method(A, q0, stop))
                    rows.append(_row(spec, "vanilla", d, tag, eps, trial, seed,
                                     rep, ns, sin2=_sin2(rep.estimate.vector, v1)))
                elif method == "powerm":
                    for b in spec.betas:
                        rep, ns = timeit(lambda: power_momentum(
                            A, q0, MomentumConfig(b), stop))
                        rows.append(_row(spec, f"powerm(beta={b:g})", d, tag,
                                         eps, trial, seed, rep, ns, beta=b,
                                         sin2=_sin2(rep.estimate.vector, v1)))
                else:
                    raise PowerLabError(f"method {method!r} not in beta-sweep")
    return rows


def _run_lambda2(spec):
    rows = []
    for d, tag, trial, seed, inst, q0, w0, lam in _matrix_trials(spec):
        A, v1, l2 = inst.covariance, inst.eigenvectors[:, 0], lam[1]
        for eps in spec.epsilons:
            for method in spec.methods:
                if method == "simultaneous":
                    stop = StopRule("iterate-distance", eps, spec.max_iter)
                    rep, ns = timeit(lambda: simultaneous_iteration(
                        A, 2, stop, q0=q0, seed=seed))
                    est = rep.estimates
                    rows.append(_row(spec, "simultaneous", d, tag, eps, trial,
                                     seed, iters=(rep.iterations, 0, rep.iterations),
                                     wall=ns, l2err=abs(est[1].value - l2),
                                     sin2=_sin2(est[0].vector, v1)))
                elif method == "dmpower":
                    for pol in spec.rho_policies:
                        rho = rho_for(pol, eps)
                        cfg = DMPowerConfig(rho=rho, eps=eps, max_pre=spec.max_iter,
                                            max_mom=spec.max_iter)
                        rep, ns = timeit(lambda: dmpower(A, q0, w0, cfg))
                        rows.append(_row(spec, f"dmpower(rho={pol})", d, tag, eps,
                                         trial, seed, rep, ns, rho=rho,
                                         beta=rep.beta_used,
                                         l2err=abs(rep.lambda2_estimate - l2),
                                         sin2=_sin2(rep.estimate.vector, v1)))
                else:
                    raise PowerLabError(f"method {method!r} not in lambda2-accuracy")
    return rows


def _run_grid(spec):
    rows = []
    for d, tag, trial, seed, inst, q0, w0, lam in _matrix_trials(spec):
        A, v1, l2 = inst.covariance, inst.eigenvectors[:, 0], lam[1]
        beta_opt = l2 * l2 / 4.0
        for eps in spec.epsilons:
            stop = StopRule("iterate-distance", eps, spec.max_iter)
            for method in spec.methods:
                if method == "vanilla":
                    rep, ns = timeit(lambda: power_method(A, q0, stop))
                    rows.append(_row(spec, "vanilla", d, tag, eps, trial, seed,
                                     rep, ns, sin2=_sin2(rep.estimate.vector, v1)))
                elif method == "powerm-opt":
                    rep, ns = timeit(lambda: power_momentum(
                        A, q0, MomentumConfig(beta_opt), stop))
                    rows.append(_row(spec, "powerm-opt", d, tag, eps, trial, seed,
                                     rep, ns, beta=beta_opt,
                                     sin2=_sin2(rep.estimate.vector, v1)))
                elif method == "dmpower":
                    for pol in spec.rho_policies:
                        rho = rho_for(pol, eps)
                        cfg = DMPowerConfig(rho=rho, eps=eps, max_pre=spec.max_iter,
                                            max_mom=spec.max_iter)
                        rep, ns = timeit(lambda: dmpower(A, q0, w0, cfg))
                        rows.append(_row(spec, f"dmpower(rho={pol})", d, tag, eps,
                                         trial, seed, rep, ns, rho=rho,
                                         beta=rep.beta_used,
                                         l2err=abs(rep.lambda2_estimate - l2),
                                         sin2=_sin2(rep.estimate.vector, v1)))
                elif method == "lanczos":
                    rep, ns = timeit(lambda: lanczos(
                        A, q0, d, tol=eps, restarts=spec.lanczos_restarts))
                    rows.append(_row(spec, "lanczos", d, tag, eps, trial, seed,
                                     rep, ns, sin2=_sin2(rep.estimate.vector, v1)))
                elif method == "simultaneous":
                    rep, ns = timeit(lambda: simultaneous_iteration(
                        A, 2, stop, q0=q0, seed=seed))
                    rows.append(_row(spec, "simultaneous", d, tag, eps, trial, seed,
                                     iters=(rep.iterations, 0, rep.iterations),
                                     wall=ns, l2err=abs(rep.estimates[1].value - l2),
                                     sin2=_sin2(rep.estimates[0].vector, v1)))
                else:
                    raise PowerLabError(f"method {method!r} not in {spec.experiment}")
    return rows


def _run_stream(spec):
    rows = []
    for d, tag, trial, seed, inst, q0, w0, lam in _matrix_trials(spec):
        X, v1 = inst.data_matrix, inst.eigenvectors[:, 0]
        _, _, s_stream = trial_streams(seed)
        beta_opt = lam[1] ** 2 / 4.0

        def fresh():
            # every method sees the same sample order
            return SampleStream.from_instance(inst, s_stream)

        for n in spec.batch_sizes:
            runs = []
            for method in spec.methods:
                if method == "dmstream":
                    for r in spec.stream_rhos:
                        cfg = StreamConfig(n, spec.rounds, rho=r)
                        runs.append((f"dmstream(rho={r:g})", r, None,
                                     lambda cfg=cfg: dmstream(fresh(), cfg, q0, w0)))
                elif method == "oja":
                    for c in spec.oja_c:
                        cfg = StreamConfig(n, spec.rounds, eta=c)
                        runs.append((f"oja(c={c:g})", None, None,
                                     lambda cfg=cfg: oja(fresh(), cfg, q0)))
                elif method == "minibatch-opt":
                    cfg = StreamConfig(n, spec.rounds, beta=beta_opt)
                    runs.append(("minibatch-opt", None, beta_opt,
                                 lambda cfg=cfg: minibatch_power_momentum(fresh(), cfg, q0)))
                elif method == "sgd-power":
                    cfg = StreamConfig(n, spec.rounds)
                    runs.append(("sgd-power", None, None,
                                 lambda cfg=cfg: stochastic_power(fresh(), cfg, q0)))
                else:
                    raise PowerLabError(f"method {method!r} not in stream-logerr")
            for name, rho, beta, fn in runs:
                rep, ns = timeit(fn)
                q = rep.estimate.vector
                rows.append(_row(spec, name, d, tag, 0.0, trial, seed, rep, ns,
                                 rho=rho, beta=rep.beta_used if beta is None else beta,
                                 l2err=(abs(rep.lambda2_estimate - lam[1])
                                        if rep.lambda2_estimate is not None else None),
                                 sin2=_sin2(q, v1), batch=n,
                                 logerr=log_error_metric(X, q, v1)))
    return rows


def _second_eig_beta(S):
    """Optimal momentum lambda_2(S)^2/4 for one extraction.

    Uses LAPACK (numpy) because the affinity matrices are 500-1000 wide and
    only the baseline's oracle momentum needs it.
    """
    vals = np.linalg.eigvalsh(S)
    return float(vals[-2]) ** 2 / 4.0


def _run_cluster(spec):
    from .clustering import dpic, make_circles, make_moons
    rows = []
    for cell, ds in enumerate(spec.datasets):
        for trial in range(spec.trials):
            seed = trial_seed_int(spec.seed, cell, trial)
            if ds == "circles":
                pts = make_circles(spec.circles_n, 0.5, spec.noise, seed)
            elif ds == "moons":
                pts = make_moons(spec.moons_n, spec.noise, seed)
            else:
                raise PowerLabError(f"unknown dataset {ds!r}")
            n = len(pts)
            for eps in spec.epsilons:
                for method in spec.methods:
                    if method == "vanilla":
                        jobs = [("vanilla", None, dict(solver="power"))]
                    elif method == "powerm-opt":
                        jobs = [("powerm-opt", None,
                                 dict(solver="power_momentum", beta=_second_eig_beta))]
                    elif method == "dmpower":
                        jobs = [(f"dmpower(rho={p})", rho_for(p, eps),
                                 dict(solver="dmpower", rho=rho_for(p, eps)))
                                for p in spec.rho_policies]
                    else:
                        raise PowerLabError(f"method {method!r} not in cluster-grid")
                    for name, rho, kw in jobs:
                        res, ns = timeit(lambda: dpic(pts, eps=eps, seed=seed,
                                                      max_iter=spec.max_iter, **kw))
                        it = res.solver_iterations
                        row = _row(spec, name, n, ds, eps, trial, seed, wall=ns,
                                   rho=rho, acc=res.accuracy, iters=(it, 0, it))
                        row.converged = res.converged
                        rows.append(row)
    return rows


RUNNERS = {
    "beta-sweep": _run_beta_sweep,
    "lambda2-accuracy": _run_lambda2,
    "iteration-grid": _run_grid,
    "walltime-grid": _run_grid,
    "stream-logerr": _run_stream,
    "cluster-grid": _run_cluster,
}


def summarize(rows):
    """Per-cell aggregates keyed by (method, d, spectrum_tag, epsilon, batch)."""
    cells = {}
    for r in rows:
        key = (r.method, r.d, r.spectrum_tag, r.epsilon, r.batch_size)
        cells.setdefault(key, []).append(r)
    out = []
    for key, rs in cells.items():
        its = [r.iterations_total for r in rs]
        entry = dict(method=key[0], d=key[1], spectrum_tag=key[2],
                     epsilon=key[3], batch_size=key[4], trials=len(rs),
                     mean_iterations=statistics.fmean(its),
                     median_iterations=statistics.median(its),
                     mean_pre=statistics.fmean(r.iterations_pre for r in rs),
                     mean_mom=statistics.fmean(r.iterations_mom for r in rs),
                     mean_walltime_ns=statistics.fmean(r.walltime_ns for r in rs),
                     converged=sum(r.converged for r in rs))
        for name in ("lambda2_abs_err", "sin2_final", "accuracy", "log_err"):
            vals = [getattr(r, name) for r in rs if getattr(r, name) is not None]
            if vals:
                entry["mean_" + name] = statistics.fmean(vals)
                entry["median_" + name] = statistics.median(vals)
        out.append(entry)
    return out


SUMMARY_FIELDS = ["method", "d", "spectrum_tag", "epsilon", "batch_size", "trials",
                  "mean_iterations", "median_iterations", "mean_pre", "mean_mom",
                  "mean_walltime_ns", "converged", "mean_lambda2_abs_err",
                  "median_lambda2_abs_err", "mean_sin2_final", "median_sin2_final",
                  "mean_accuracy", "median_accuracy", "mean_log_err",
                  "median_log_err"]


def write_summary(path, summary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for e in summary:
            w.writerow([_cell(e.get(f)) for f in SUMMARY_FIELDS])


def format_summary(summary):
    """Plain-text table of the per-cell means."""
    head = f"{'method':<26}{'d':>6} {'spectrum':<14}{'eps':>9}{'batch':>7}" \
           f"{'mean it':>10}{'median':>9}{'extra':>14}"
    lines = [head, "-" * len(head)]
    for e in summary:
        extra = ""
        for name in ("mean_accuracy", "mean_log_err", "mean_lambda2_abs_err"):
            if name in e:
                extra = f"{name[5:9]}={e[name]:.4g}"
                break
        lines.append(f"{e['method']:<26}{e['d']:>6} {e['spectrum_tag'][:13]:<14}"
                     f"{e['epsilon']:>9.0e}{_cell(e['batch_size']):>7}"
                     f"{e['mean_iterations']:>10.2f}{e['median_iterations']:>9.1f}"
                     f"{extra:>14}")
    return "\n".join(lines)


def run_experiment(spec, write=True):
    """Run the grid; write rows (and ``<out>.summary.csv``) when ``out`` is set.

    Returns (rows, summary).
    """
    if spec.out and write:
        outdir = os.path.dirname(os.path.abspath(spec.out))
        try:
            os.makedirs(outdir, exist_ok=True)
        except OSError:
            raise PowerLabError(f"cannot write to {spec.out}") from None
        if not os.access(outdir, os.W_OK):
            raise PowerLabError(f"cannot write to {spec.out}")
    rows = RUNNERS[spec.experiment](spec)
    summary = summarize(rows)
    if spec.out and write:
        write_rows(spec.out, rows)
        root, _ = os.path.splitext(spec.out)
        write_summary(root + ".summary.csv", summary)
    return rows, summary
