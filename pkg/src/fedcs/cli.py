"""Command-line entry points.

Subcommands:
  run         execute a federated experiment from a config file
  accountant  print the privacy spend for (sigma, q, steps, delta)
  codec       planted-sparse recovery statistics for a codec/solver setting
  bench       compare the compiled and pure-Python solver kernels

Errors exit nonzero with a single categorized line on stderr.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import __version__
from .accountant import AccountantParams, epsilon_for, log_moment
from .errors import EXIT_CODES
from .kernels import available_backends


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcs",
        description="Federated learning with compressive-sensing gradient "
        "compression and differential privacy.",
    )
    parser.add_argument("--version", action="version", version=f"fedcs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file or preset name")
    run.add_argument("--config", required=True, help="config JSON path or packaged preset name")
    run.add_argument("--scheme", help="override the config's scheme")
    run.add_argument("--ratio", type=float, help="override the compression ratio r")
    run.add_argument("--sigma", type=float, help="override the noise multiplier")
    run.add_argument("--rounds", type=int, help="override the round count T_cl")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--out", help="result file path (default from config)")
    run.add_argument("--format", choices=("csv", "jsonl"), dest="fmt", help="result format")
    run.add_argument("--quiet", action="store_true", help="suppress per-evaluation progress lines")

    acct = sub.add_parser("accountant", help="moments-accountant privacy spend")
    acct.add_argument("--sigma", type=float, required=True)
    acct.add_argument("--q", type=float, required=True, help="per-round sampling probability")
    acct.add_argument("--steps", type=int, required=True)
    acct.add_argument("--delta", type=float, required=True)
    acct.add_argument("--lambda-max", type=int, default=64, dest="lambda_max")

    cod = sub.add_parser("codec", help="planted-sparse recovery statistics")
    cod.add_argument("--n", type=int, required=True, help="signal length")
    cod.add_argument("--m", type=int, required=True, help="measurements (multiple of --p)")
    cod.add_argument("--p", type=int, default=1, help="number of chunks")
    cod.add_argument("--sparsity", type=int, required=True, help="planted nonzeros")
    cod.add_argument("--noise-std", type=float, default=0.0)
    cod.add_argument("--trials", type=int, default=20)
    cod.add_argument("--seed", type=int, default=0)

    ben = sub.add_parser("bench", help="compare solver kernel backends")
    ben.add_argument("--n", type=int, default=4096, help="signal length per trial")
    ben.add_argument("--m", type=int, default=1024, help="measurements")
    ben.add_argument("--sparsity", type=int, default=40)
    ben.add_argument("--trials", type=int, default=3)
    ben.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    from .config import load_config
    from .experiment import ResultWriter, iter_experiment

    cfg = load_config(
        args.config,
        scheme=args.scheme,
        ratio=args.ratio,
        sigma=args.sigma,
        rounds=args.rounds,
        seed=args.seed,
        out=args.out,
        fmt=args.fmt,
    )
    out_path = cfg.out or "results." + ("jsonl" if cfg.fmt == "jsonl" else "csv")
    count = 0
    with ResultWriter(out_path, cfg.fmt) as writer:
        try:
            for rec in iter_experiment(cfg):
                writer.write(rec)
                count += 1
                if not args.quiet:
                    eps = "-" if rec.epsilon is None else f"{rec.epsilon:.4g}"
                    print(
                        f"round {rec.round:>4} acc {rec.accuracy:.4f} "
                        f"eps {eps} cost(1e6) {rec.cost_1e6:.4g}",
                        flush=True,
                    )
        except Exception:
            print(f"wrote {count} partial records to {out_path}", file=sys.stderr)
            raise
    print(f"wrote {count} records to {out_path}")
    return 0


def _cmd_accountant(args) -> int:
    params = AccountantParams(
        sigma=args.sigma,
        q=args.q,
        steps=args.steps,
        delta=args.delta,
        lambda_max=args.lambda_max,
    )
    spend = epsilon_for(params)
    print("epsilon,best_lambda,delta")
    print(f"{spend.epsilon:.6g},{spend.best_lambda},{spend.delta:.6g}")
    print()
    print("lambda,alpha")
    for lam in range(1, args.lambda_max + 1):
        print(f"{lam},{log_moment(lam, args.sigma, args.q):.6g}")
    return 0


def _cmd_codec(args) -> int:
    from . import bpdn, codec

    sensing = codec.SensingConfig(n=args.n, m=args.m, P=args.p, shuffle_seed=args.seed)
    rng = np.random.default_rng(args.seed)
    rows = []
    for trial in range(args.trials):
        x = np.zeros(args.n)
        support = rng.choice(args.n, size=args.sparsity, replace=False)
        x[support] = rng.standard_normal(args.sparsity)
        y = codec.compress(x, sensing)
        if args.noise_std > 0.0:
            y = y + args.noise_std * rng.standard_normal(y.size)
        t0 = time.perf_counter()
        xhat, report = bpdn.decompress(y, sensing)
        ms = (time.perf_counter() - t0) * 1e3
        rel = float(np.linalg.norm(xhat - x) / max(np.linalg.norm(x), 1e-300))
        rows.append((trial, rel, report.iterations, report.converged, ms))

    rels = np.array([r[1] for r in rows])
    print("trials,mean_rel_error,median_rel_error,max_rel_error,success_at_1e-2")
    print(
        f"{args.trials},{rels.mean():.6g},{np.median(rels):.6g},"
        f"{rels.max():.6g},{float(np.mean(rels <= 1e-2)):.6g}"
    )
    print()
    print("trial,rel_error,solver_iterations,converged,ms")
    for trial, rel, iters, conv, ms in rows:
        print(f"{trial},{rel:.6g},{iters},{int(conv)},{ms:.6g}")
    return 0


def _cmd_bench(args) -> int:
    from . import bpdn, codec
    from .kernels import get_backend

    sensing = codec.SensingConfig(n=args.n, m=args.m, P=1, shuffle_seed=args.seed)
    rng = np.random.default_rng(args.seed)
    problems = []
    for _ in range(args.trials):
        x = np.zeros(args.n)
        support = rng.choice(args.n, size=args.sparsity, replace=False)
        x[support] = rng.standard_normal(args.sparsity)
        problems.append((x, codec.compress(x, sensing)))

    backends = available_backends()
    print("backend,trial,solve_ms,iterations,rel_error")
    summaries = []
    for name in backends:
        kernel = get_backend(name)
        times = []
        for trial, (x, y) in enumerate(problems):
            t0 = time.perf_counter()
            xhat, report = bpdn.decompress(y, sensing, kernel=kernel)
            ms = (time.perf_counter() - t0) * 1e3
            rel = float(np.linalg.norm(xhat - x) / np.linalg.norm(x))
            times.append(ms)
            print(f"{name},{trial},{ms:.6g},{report.iterations},{rel:.6g}")
        summaries.append((name, float(np.median(times))))
    print()
    print("backend,median_ms")
    for name, med in summaries:
        print(f"{name},{med:.6g}")
    if len(summaries) == 2:
        slow = max(summaries, key=lambda s: s[1])
        fast = min(summaries, key=lambda s: s[1])
        if fast[1] > 0:
            print(f"# {fast[0]} is {slow[1] / fast[1]:.2f}x faster than {slow[0]} (median)")
    return 0


_DISPATCH = {
    "run": _cmd_run,
    "accountant": _cmd_accountant,
    "codec": _cmd_codec,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except Exception as exc:  # categorized exit codes
        for exc_type, code, label in EXIT_CODES:
            if isinstance(exc, exc_type):
                print(f"{label}: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
