"""``tcp-dipoles`` command-line entry point.

Every command accepts ``--config FILE`` (``key = value`` lines, ``#``
comments) and ``--manifest FILE`` (a ``run_manifest.json`` written by an
earlier run).  Precedence: built-in defaults < manifest < config file <
flags.  Exit codes: 0 success, 1 runtime failure (or a failed ``verify``
suite), 2 usage error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import combinatorics as CB
from . import estimators as E
from . import sampler as S
from . import suites
from .kernel import TABLE_SPACING, SmearedKernel

MANIFEST = "run_manifest.json"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- output helpers


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o)}")


def worker_count():
    env = os.environ.get("TCP_DIPOLES_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError("TCP_DIPOLES_THREADS must be an integer") from None
    return os.cpu_count() or 1


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------- argument types


def positive_int(text):
    v = int(float(text)) if "e" in text.lower() else int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a nonnegative integer")
    return v


def lambda_value(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("lambda must lie in (0, 1)")
    return v


def beta_value(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("beta must be nonnegative")
    return v


def n_value(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("N must be at least 1")
    return v


# --------------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="tcp-dipoles", description="Two-component plasma of smeared charges: sampling and checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default=None):
        sp.add_argument("--config", help="key = value file")
        sp.add_argument("--manifest", help="run_manifest.json of an earlier run to reproduce")
        sp.add_argument("--out", default=out_default, help="output directory")

    k = sub.add_parser("kernel-table", help="tabulate the smeared kernel g1")
    common(k, "kernel-out")
    k.add_argument("--spacing", type=float, default=TABLE_SPACING)

    s = sub.add_parser("sample", help="run Metropolis-Hastings chains")
    common(s, "sample-out")
    s.add_argument("--n", type=n_value, default=50)
    s.add_argument("--beta", type=beta_value, default=3.0)
    s.add_argument("--lambda", dest="lam", type=lambda_value, default=1e-3)
    s.add_argument("--steps", type=positive_int, default=1_000_000)
    s.add_argument("--burnin", type=positive_int, default=100_000)
    s.add_argument("--stride", type=positive_int, default=1000)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--init", choices=("uniform", "paired"), default="paired")
    s.add_argument("--moves", default=None, help="e.g. single=0.4,local=0.2,translate=0.2,resample=0.15,teleport=0.05")
    s.add_argument("--chains", type=n_value, default=1)
    s.add_argument("--test-functions", default="bump", help="comma-separated built-in test functions")

    a = sub.add_parser("analyze", help="summarise a sample output directory")
    common(a)
    a.add_argument("--input", required=False, help="directory written by `sample`")
    a.add_argument("--burn-fraction", type=float, default=0.0)

    f = sub.add_parser("free-energy", help="thermodynamic integration of log Z")
    common(f, "free-energy-out")
    f.add_argument("--n", type=n_value, default=20)
    f.add_argument("--beta", type=beta_value, default=3.0)
    f.add_argument("--lambda", dest="lam", type=lambda_value, default=1e-2)
    f.add_argument("--nodes", type=n_value, default=E.TI_NODES)
    f.add_argument("--steps", type=positive_int, default=200_000)
    f.add_argument("--burnin", type=positive_int, default=50_000)
    f.add_argument("--stride", type=positive_int, default=500)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--ais", action="store_true", help="also run annealed importance sampling")

    v = sub.add_parser("verify", help="run identity and bound suites")
    common(v, "verify-out")
    v.add_argument("--suite", default="all", help=f"comma-separated subset of {','.join(suites.SUITES)} or 'all'")
    v.add_argument("--size", type=positive_int, default=None, help="instances per suite (default: suite default)")
    v.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("enumerate", help="count nearest-neighbour graph shapes")
    common(e)
    e.add_argument("--p", type=n_value, required=False)
    e.add_argument("--method", choices=("auto", "formula", "brute"), default="auto")
    return p


SEED_REQUIRED = {"sample", "free-energy"}
META_KEYS = {"config", "manifest", "out", "command"}


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _coerce(sp, values, source):
    """Convert string values from a file using the subparser's own types."""
    by_dest = {a.dest: a for a in sp._actions}
    by_flag = {o.lstrip("-").replace("-", "_"): a for a in sp._actions for o in a.option_strings}
    out = {}
    for key, raw in values.items():
        k = key.strip().replace("-", "_")
        act = by_flag.get(k) or by_dest.get(k)
        if act is None or act.dest in ("help",):
            raise UsageError(f"{source}: unknown key {key!r}")
        if isinstance(raw, str):
            if isinstance(act, argparse._StoreTrueAction):
                val = raw.strip().lower() in ("1", "true", "yes", "on")
            elif act.type is not None:
                try:
                    val = act.type(raw.strip())
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"{source}: bad value for {key!r}: {exc}") from None
            else:
                val = raw.strip()
            if act.choices is not None and val not in act.choices:
                raise UsageError(f"{source}: {key!r} must be one of {sorted(act.choices)}")
        else:
            val = raw
        out[act.dest] = val
    return out


def read_config_file(path):
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for num, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected key = value")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


def resolve(argv):
    """Parse ``argv`` applying manifest and config-file defaults; returns the namespace."""
    parser = build_parser()
    first = parser.parse_args(argv)
    sp = _subparser(parser, first.command)
    defaults = {}
    if first.manifest:
        try:
            man = json.loads(Path(first.manifest).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read manifest {first.manifest}: {exc}") from None
        if man.get("command") != first.command:
            raise UsageError(f"manifest was written by `{man.get('command')}`, not `{first.command}`")
        cfg = {k: v for k, v in man.get("config", {}).items() if k not in META_KEYS}
        defaults.update(_coerce(sp, cfg, first.manifest))
    if first.config:
        defaults.update(_coerce(sp, read_config_file(first.config), first.config))
    if defaults:
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    else:
        args = first
    if args.command in SEED_REQUIRED and args.seed is None:
        sp.print_usage(sys.stderr)
        raise UsageError(f"{args.command}: --seed is required")
    return args


def resolved_config(args):
    return {k: v for k, v in vars(args).items() if k not in ("config", "manifest")}


def write_manifest(out, args, extra=None):
    man = {"command": args.command, "version": __version__, "config": resolved_config(args),
           "seed": getattr(args, "seed", None), "argv": sys.argv[1:]}
    if extra:
        man.update(extra)
    atomic_write(Path(out) / MANIFEST, dump_json(man))


def _outdir(args):
    if not args.out:
        raise UsageError(f"{args.command}: --out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------- commands


def cmd_kernel_table(args):
    out = _outdir(args)
    k = SmearedKernel(spacing=args.spacing)
    lines = ["r,g1"] + [f"{r:.17g},{g:.17g}" for r, g in k.to_csv_rows()]
    atomic_write(out / "kernel_table.csv", "\n".join(lines) + "\n")
    atomic_write(out / "kernel.json", dump_json({"kappa": k.kappa, "spacing": k.table_spacing, "rows": len(lines) - 1}))
    write_manifest(out, args)
    print(f"kappa = {k.kappa:.12f}; {len(lines) - 1} rows written to {out / 'kernel_table.csv'}")
    return 0


def _moves(args):
    return S.MoveSpec.parse(args.moves) if args.moves else S.MoveSpec()


def _one_chain(args, seed, out, names):
    rng = np.random.default_rng(seed)
    if args.init == "paired":
        cfg0 = S.init_paired(rng, args.n, args.lam, args.beta)
    else:
        cfg0 = S.init_uniform(rng, args.n)
    sched = S.Schedule(burnin=args.burnin, steps=args.steps, stride=max(1, args.stride), seed=seed)
    res = S.run(cfg0, args.lam, args.beta, sched, moves=_moves(args), checkpoint_path=out / "checkpoint.json")
    trace = E.observe(res.snapshots, args.n, args.lam, args.beta, names)
    atomic_write(out / "trace.csv", trace.to_csv())
    atomic_write(out / "dipole_lengths.csv", trace.lengths_csv())
    atomic_write(out / "final_config.csv", res.state.config.to_csv())
    summary = E.summarize(trace, names)
    summary["acceptance"] = res.state.acceptance()
    summary["moves"] = res.moves_after_tuning
    summary["seed"] = seed
    atomic_write(out / "summary.json", dump_json(summary))
    return _sha256(out / "trace.csv")


def cmd_sample(args):
    out = _outdir(args)
    names = tuple(x.strip() for x in args.test_functions.split(",") if x.strip())
    _moves(args)  # validate before starting
    if args.chains == 1:
        checksums = {"trace.csv": _one_chain(args, args.seed, out, names)}
    else:
        seeds = S.spawn_seeds(args.seed, args.chains)
        dirs = [out / f"chain_{k:03d}" for k in range(args.chains)]
        for d in dirs:
            d.mkdir(exist_ok=True)
        with concurrent.futures.ThreadPoolExecutor(max_workers=min(worker_count(), args.chains)) as pool:
            sums = list(pool.map(lambda a: _one_chain(args, *a, names), zip(seeds, dirs)))
        checksums = {f"{d.name}/trace.csv": c for d, c in zip(dirs, sums)}
    write_manifest(out, args, {"checksums": checksums})
    for k, v in checksums.items():
        print(f"{k} sha256={v}")
    return 0


def _load_trace(indir):
    indir = Path(indir)
    try:
        man = json.loads((indir / MANIFEST).read_text())
        cfg = man["config"]
        return E.ObservableTrace.from_csv(
            (indir / "trace.csv").read_text(), (indir / "dipole_lengths.csv").read_text(), cfg["n"], cfg["lam"], cfg["beta"]
        ), man
    except (OSError, KeyError, ValueError) as exc:
        raise RuntimeError(f"cannot load sample output from {indir}: {exc}") from exc


def cmd_analyze(args):
    if not args.input:
        raise UsageError("analyze: --input is required")
    trace, man = _load_trace(args.input)
    names = [k for k in trace.fluct]
    summary = E.summarize(trace, names or ("bump",), burn_fraction=args.burn_fraction)
    out = Path(args.out) if args.out else Path(args.input)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "analysis.json", dump_json(summary))
    write_manifest(out, args) if args.out else None
    print(dump_json(summary), end="")
    return 0


def cmd_free_energy(args):
    out = _outdir(args)
    est = E.free_energy_ti(args.n, args.beta, args.lam, steps=args.steps, burnin=args.burnin, stride=max(1, args.stride),
                           seed=args.seed, nodes=args.nodes)
    result = {"ti": est.to_dict()}
    if args.ais:
        ais = E.free_energy_ais(args.n, args.beta, args.lam, seed=args.seed + 1)
        result["ais"] = ais.__dict__
        result["ti_minus_ais_in_se"] = (est.log_z - ais.log_z) / math.hypot(est.log_z_se, ais.se)
    atomic_write(out / "free_energy.json", dump_json(result))
    write_manifest(out, args)
    print(f"log Z = {est.log_z:.6f} +- {est.log_z_se:.6f}  prediction {est.prediction:.6f}  converged={est.converged}")
    return 0


def cmd_verify(args):
    out = _outdir(args)
    names = suites.SUITES if args.suite == "all" else tuple(x.strip() for x in args.suite.split(","))
    unknown = [n for n in names if n not in suites.SUITES]
    if unknown:
        raise UsageError(f"verify: unknown suite(s) {unknown}")
    seeds = S.spawn_seeds(args.seed, len(names))
    jobs = [(n, np.random.default_rng(sd)) for n, sd in zip(names, seeds)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=min(worker_count(), len(jobs))) as pool:
        results = list(pool.map(lambda j: suites.run_suite(j[0], j[1], args.size), jobs))
    for r in results:
        print(r.line())
    atomic_write(out / "verify.json", dump_json({r.name: r.to_dict() for r in results}))
    write_manifest(out, args)
    return 0 if all(r.passed for r in results) else 1


def cmd_enumerate(args):
    if args.p is None:
        raise UsageError("enumerate: --p is required")
    p = args.p
    if p < 2:
        raise UsageError("enumerate: p must be at least 2")
    method = args.method
    if method == "auto":
        method = "brute" if p <= CB.ENUMERATION_LIMIT else "formula"
    if method == "brute" and p > CB.ENUMERATION_LIMIT:
        raise UsageError(f"enumerate: brute force is limited to p <= {CB.ENUMERATION_LIMIT}")
    rows = ["p,K,count"]
    brute = CB.enumerate_nn_graphs(p).counts() if method == "brute" else None
    for k in range(1, p // 2 + 1):
        c = CB.count_nn_graphs(p, k)
        if brute is not None:
            if brute.get(k, 0) != c.count:
                raise RuntimeError(f"enumeration and formula disagree at p={p}, K={k}")
            rows.append(f"{p},{k},{c.count}")
        else:
            rows.append(f"{p},{k},{c.count if c.count is not None else f'exp({c.log_count:.17g})'}")
    text = "\n".join(rows) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write(out / "counts.csv", text)
        write_manifest(out, args)
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "kernel-table": cmd_kernel_table,
    "sample": cmd_sample,
    "analyze": cmd_analyze,
    "free-energy": cmd_free_energy,
    "verify": cmd_verify,
    "enumerate": cmd_enumerate,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = resolve(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else 2
    except UsageError as exc:
        print(f"tcp-dipoles: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"tcp-dipoles: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
