"""Command line entry point: ``powerlab {bench,solve,stream,cluster,gen}``."""

import argparse
import sys

import numpy as np

from . import bench
from .clustering import PointSet, dpic, make_circles, make_moons
from .core import (PowerLabError, StopRule, random_unit, read_matrix,
                   read_table, write_matrix, write_table)
from .matgen import Spectrum, synth_covariance
from .solvers import (DMPowerConfig, MomentumConfig, dmpower, lanczos,
                      power_method, power_momentum, simultaneous_iteration)
from .streaming import (SampleStream, StreamConfig, dmstream, log_error_metric,
                        minibatch_power_momentum, oja, standardize,
                        stochastic_power)


def _start_vectors(d, seed):
    rng = np.random.default_rng(seed)
    return random_unit(d, rng), random_unit(d, rng)


def _rho(args, eps):
    if args.rho is not None:
        return args.rho
    return bench.rho_for(args.rho_policy, eps)


def cmd_bench(args):
    if args.config:
        path = args.config
    elif args.preset:
        path = bench.preset_path(args.preset)
    else:
        path = None
    overrides = {"trials": args.trials, "seed": args.seed, "out": args.out,
                 "experiment": args.experiment}
    if path:
        spec = bench.load_config(path, **overrides)
    else:
        if not args.experiment:
            raise PowerLabError("give --experiment, --config or --preset")
        spec = bench.spec_from_mapping({k: v for k, v in overrides.items()
                                        if v is not None})
    rows, summary = bench.run_experiment(spec)
    print(bench.format_summary(summary))
    if spec.out:
        print(f"\nwrote {len(rows)} rows to {spec.out}")
    return 0


def cmd_solve(args):
    A = read_matrix(args.matrix)
    d = A.shape[0]
    q0, w0 = _start_vectors(d, args.seed)
    stop = StopRule("iterate-distance", args.eps, args.max_iter)
    m = args.method
    if m == "power":
        rep = power_method(A, q0, stop)
    elif m == "powerm":
        if args.beta is None:
            raise PowerLabError("--beta is required for powerm")
        rep = power_momentum(A, q0, MomentumConfig(args.beta), stop)
    elif m == "dmpower":
        cfg = DMPowerConfig(rho=_rho(args, args.eps), eps=args.eps,
                            rho_mode=args.rho_mode, J=args.J,
                            max_pre=args.max_iter, max_mom=args.max_iter)
        rep = dmpower(A, q0, w0, cfg)
    elif m == "lanczos":
        rep = lanczos(A, q0, args.m or d, tol=args.eps, restarts=args.restarts)
    else:
        block = simultaneous_iteration(A, args.k, stop, q0=q0, seed=args.seed)
        for i, est in enumerate(block.estimates, 1):
            print(f"lambda_{i} = {est.value:.15g}")
        print(f"iterations = {block.iterations}")
        print(f"converged = {block.converged}")
        return 0
    print(f"lambda_1 = {rep.estimate.value:.15g}")
    print(f"iterations = {rep.iterations_total} "
          f"(pre-momentum {rep.iterations_pre_momentum}, "
          f"main {rep.iterations_momentum})")
    if rep.lambda2_estimate is not None:
        print(f"lambda_2 estimate = {rep.lambda2_estimate:.15g}")
    if rep.beta_used is not None:
        print(f"beta = {rep.beta_used:.15g}")
    print(f"converged = {rep.converged}")
    if args.vector_out:
        np.savetxt(args.vector_out, rep.estimate.vector, fmt="%.17g")
    return 0


def _parse_synthetic(text):
    """``d:spectrum`` e.g. ``20:1,0.9,0.8`` (tail padded with the last value)."""
    if ":" in text:
        d, spec = text.split(":", 1)
        return Spectrum.parse(spec, int(d))
    return Spectrum.parse(text)


def cmd_stream(args):
    v1 = X = None
    if args.samples:
        X, _ = read_table(args.samples)
        if args.standardize:
            X = standardize(X)
        stream = SampleStream.from_matrix(X, args.seed, reshuffle=not args.one_pass)
        vals, vecs = np.linalg.eigh(X.T @ X / X.shape[0])
        v1, lam2 = vecs[:, -1], vals[-2]
    elif args.synthetic:
        sp = _parse_synthetic(args.synthetic)
        inst = synth_covariance(sp, max(args.n_samples, sp.d), args.seed)
        X, v1, lam2 = inst.data_matrix, inst.eigenvectors[:, 0], sp[1]
        stream = SampleStream.from_instance(inst, args.seed + 1)
    else:
        raise PowerLabError("give --samples or --synthetic")
    q0, w0 = _start_vectors(stream.d, args.seed)
    beta = args.beta if args.beta is not None else lam2 ** 2 / 4.0
    cfg = StreamConfig(args.batch, args.rounds, rho=args.rho, beta=beta,
                       eta=args.eta_c)
    m = args.method
    if m == "sgd-power":
        rep = stochastic_power(stream, cfg, q0)
    elif m == "minibatch-m":
        rep = minibatch_power_momentum(stream, cfg, q0)
    elif m == "oja":
        rep = oja(stream, cfg, q0)
    else:
        rep = dmstream(stream, cfg, q0, w0)
    print(f"rounds = {rep.iterations_total} (pre-momentum {rep.iterations_pre_momentum})")
    print(f"samples consumed = {rep.samples_consumed}")
    if rep.beta_used is not None:
        print(f"beta = {rep.beta_used:.6g}")
    print(f"log error = {log_error_metric(X, rep.estimate.vector, v1):.4f}")
    return 0


def cmd_cluster(args):
    if args.dataset == "circles":
        pts = make_circles(args.n or 1000, args.factor, args.noise, args.seed)
    elif args.dataset == "moons":
        pts = make_moons(args.n or 500, args.noise, args.seed)
    else:
        if not args.points:
            raise PowerLabError("--points is required with --dataset file")
        P, extra = read_table(args.points, extra_cols=1)
        pts = PointSet(P, None if extra is None else extra[:, 0])
    solver = {"power": "power", "powerm": "power_momentum",
              "dmpower": "dmpower"}[args.solver]
    beta = args.beta
    if solver == "power_momentum" and beta is None:
        beta = bench._second_eig_beta
    sigma = args.sigma
    try:
        sigma = float(sigma)
    except ValueError:
        pass
    res = dpic(pts, solver, args.eps, args.seed, similarity=args.similarity,
               sigma=sigma, beta=beta, rho=args.rho)
    if res.accuracy is not None:
        print(f"accuracy = {res.accuracy:.4f}")
    print(f"solver iterations = {res.solver_iterations}")
    print(f"converged = {res.converged}")
    if args.labels_out:
        with open(args.labels_out, "w") as fh:
            fh.write("index,label\n")
            for i, lab in enumerate(res.labels):
                fh.write(f"{i},{int(lab)}\n")
    return 0


def cmd_gen(args):
    sp = Spectrum.parse(args.spectrum, args.d)
    inst = synth_covariance(sp, args.n, args.seed)
    write_matrix(args.matrix_out, inst.covariance)
    if args.samples_out:
        write_table(args.samples_out, inst.data_matrix)
    print(f"wrote {sp.d}x{sp.d} matrix with spectrum {sp.tag()}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="powerlab",
                                description="Momentum power methods and benchmarks")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run an experiment grid")
    b.add_argument("--experiment", choices=bench.EXPERIMENTS)
    b.add_argument("--config", help="flat key=value config file")
    b.add_argument("--preset", help=f"bundled preset ({', '.join(bench.list_presets())})")
    b.add_argument("--trials", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--out", help="CSV output path")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("solve", help="top eigenpair of a matrix file")
    s.add_argument("--matrix", required=True)
    s.add_argument("--method", required=True,
                   choices=["power", "powerm", "dmpower", "lanczos", "simultaneous"])
    s.add_argument("--beta", type=float)
    s.add_argument("--rho", type=float)
    s.add_argument("--rho-policy", default="eps")
    s.add_argument("--rho-mode", default="mu-diff",
                   choices=["mu-diff", "w-diff", "fixed-J"])
    s.add_argument("--J", type=int)
    s.add_argument("--eps", type=float, default=1e-9)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iter", type=int, default=100_000)
    s.add_argument("--m", type=int, help="Lanczos steps (default d)")
    s.add_argument("--restarts", type=int, default=0)
    s.add_argument("--k", type=int, default=2, help="block size for simultaneous")
    s.add_argument("--vector-out")
    s.set_defaults(func=cmd_solve)

    st = sub.add_parser("stream", help="streaming top eigenvector")
    src = st.add_mutually_exclusive_group(required=True)
    src.add_argument("--samples", help="samples file with header 'n d'")
    src.add_argument("--synthetic", help="d:spectrum, e.g. 20:1,0.9,0.8")
    st.add_argument("--method", required=True,
                    choices=["sgd-power", "minibatch-m", "oja", "dmstream"])
    st.add_argument("--batch", type=int, default=500)
    st.add_argument("--rounds", type=int, default=50)
    st.add_argument("--rho", type=float, default=0.1)
    st.add_argument("--beta", type=float, help="default lambda_2^2/4 of the data")
    st.add_argument("--eta-c", type=float, default=27.0, help="Oja step c/t")
    st.add_argument("--n-samples", type=int, default=1000)
    st.add_argument("--standardize", action="store_true")
    st.add_argument("--one-pass", action="store_true")
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=cmd_stream)

    c = sub.add_parser("cluster", help="two-cluster spectral clustering")
    c.add_argument("--dataset", choices=["circles", "moons", "file"], default="circles")
    c.add_argument("--points", help="points file with header 'n 2'")
    c.add_argument("--solver", choices=["power", "powerm", "dmpower"], default="dmpower")
    c.add_argument("--eps", type=float, default=1e-8)
    c.add_argument("--rho", type=float, help="default eps^(1/3)")
    c.add_argument("--beta", type=float, help="default oracle lambda_2^2/4")
    c.add_argument("--similarity", choices=["gaussian", "l2"], default="gaussian")
    c.add_argument("--sigma", default="knn", help="number, 'knn' or 'median'")
    c.add_argument("--n", type=int)
    c.add_argument("--factor", type=float, default=0.5)
    c.add_argument("--noise", type=float, default=0.05)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--labels-out")
    c.set_defaults(func=cmd_cluster)

    g = sub.add_parser("gen", help="write a matrix with a prescribed spectrum")
    g.add_argument("--spectrum", required=True, help="e.g. 1,0.9,0.8")
    g.add_argument("--d", type=int, help="pad the spectrum to length d")
    g.add_argument("--n", type=int, default=1000, help="number of samples")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--matrix-out", required=True)
    g.add_argument("--samples-out")
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PowerLabError, OSError) as exc:
        print(f"powerlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
