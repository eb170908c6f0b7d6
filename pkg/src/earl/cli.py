"""``earl`` command line: generate, run, full, audit."""
from __future__ import annotations

import argparse
import csv
import json
import os
import secrets
import sys

from .audit import AUDITS
from .datastore import DEFAULT_BLOCK_SIZE, open_dataset
from .engine import FinalResult, NoSurvivorsError, RuntimeConfig, run_job
from .generate import DISTRIBUTIONS, ORDERINGS, generate_dataset
from .jobs import parse_job
from .ssabe import EstimatorConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_ERROR, EXIT_DEGRADED = 0, 1, 2

# config-file key -> (type, default); flags override these
RUN_KEYS = {
    "job": (str, "mean"),
    "sigma": (float, 0.05),
    "tau": (float, 0.01),
    "p_init": (float, 0.01),
    "ladder_depth": (int, 5),
    "sampler": (str, "pre"),
    "bootstraps": (int, None),
    "sample_size": (int, None),
    "intra_sharing": (bool, True),
    "workers": (int, 4),
    "fail": (list, []),
    "mode": (str, "early"),
    "seed": (int, None),
    "max_iterations": (int, 20),
    "block_size": (int, DEFAULT_BLOCK_SIZE),
}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 2 is reserved for degraded runs
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _fail_spec(text: str) -> tuple[int, int]:
    try:
        w, i = text.split(":")
        return int(w), int(i)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected worker:iteration, got {text!r}") from None


def load_config(path) -> dict:
    """Read a TOML config; errors name the offending line."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise CliError(f"{path}: {e}") from None
    lines = raw.decode("utf-8").splitlines()

    def where(key):
        for no, line in enumerate(lines, 1):
            if line.split("=")[0].strip() == key:
                return f"{path}:{no}"
        return str(path)

    out = {}
    for key, val in data.items():
        k = key.replace("-", "_")
        if k not in RUN_KEYS:
            raise CliError(f"{where(key)}: unknown key {key!r}")
        typ = RUN_KEYS[k][0]
        if typ is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, typ) or (typ is int and isinstance(val, bool)):
            raise CliError(f"{where(key)}: {key} must be {typ.__name__}, got {val!r}")
        if k == "fail":
            try:
                val = [_fail_spec(str(v)) for v in val]
            except argparse.ArgumentTypeError as e:
                raise CliError(f"{where(key)}: {e}") from None
        out[k] = val
    return out


def _settings(args) -> dict:
    conf = load_config(args.config) if args.config else {}
    merged = {}
    for key, (_, default) in RUN_KEYS.items():
        flag = getattr(args, key, None)
        if key == "fail":
            flag = flag or None
        merged[key] = flag if flag is not None else conf.get(key, default)
    if merged["seed"] is None:
        env = os.environ.get("EARL_SEED")
        try:
            merged["seed"] = int(env) if env else secrets.randbits(32)
        except ValueError:
            raise CliError(f"EARL_SEED must be an integer, got {env!r}") from None
    return merged


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _emit(result: FinalResult, args) -> None:
    text = result.to_json() + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if getattr(args, "trace", None):
        _write_csv(args.trace, ["iteration", "n", "B", "cv", "records_processed"], result.trace)
    if getattr(args, "curve", None):
        _write_csv(args.curve, ["n", "cv"], result.curve)


def cmd_run(args) -> int:
    st = _settings(args)
    cfg = EstimatorConfig(sigma=st["sigma"], tau=st["tau"], p_init=st["p_init"],
                          l=st["ladder_depth"])
    rt = RuntimeConfig(workers=st["workers"], sampler=st["sampler"], seed=st["seed"],
                       bootstraps=st["bootstraps"], sample_size=st["sample_size"],
                       intra_sharing=st["intra_sharing"], failures=list(st["fail"]),
                       max_iterations=st["max_iterations"], mode=st["mode"])
    print(f"seed={rt.seed}", file=sys.stderr)
    with open_dataset(args.dataset, st["block_size"]) as bf:
        result = run_job(bf, parse_job(st["job"]), cfg, rt)
    _emit(result, args)
    return EXIT_DEGRADED if result.mode == "degraded" else EXIT_OK


def cmd_full(args) -> int:
    args.mode = "full"
    return cmd_run(args)


def cmd_generate(args) -> int:
    kw = dict(loc=args.loc, scale=args.scale, ordering=args.ordering, seed=args.seed)
    if args.labels:
        kw["labels"] = tuple(args.labels.split(","))
    if args.probs:
        kw["probs"] = tuple(float(x) for x in args.probs.split(","))
    manifest = generate_dataset(args.path, args.n, args.dist, **kw)
    print(json.dumps(manifest, indent=2))
    return EXIT_OK


def cmd_audit(args) -> int:
    kind = args.kind
    if kind == "uniformity":
        rep = AUDITS[kind](sampler=args.sampler, records=args.records, n=args.n or 50,
                           trials=args.trials or 10_000, seed=args.seed)
    elif kind == "delta-equivalence":
        rep = AUDITS[kind](n=args.n or 5, n_prime=args.nprime or 8,
                           trials=args.trials or 1_000_000, seed=args.seed)
    elif kind == "identical-prefix":
        rep = AUDITS[kind](n=args.n or 29)
    else:
        rep = AUDITS[kind](n=args.n or 10, n_prime=args.nprime or 20,
                           draws=args.trials or 100_000, seed=args.seed)
    if kind == "identical-prefix":
        print("k,y,p,saved")
        for r in rep["rows"]:
            print(f"{r['k']},{r['y']:.6f},{r['p']:.6f},{r['saved']:.6f}")
    print(json.dumps({k: v for k, v in rep.items() if k != "rows"}, indent=2))
    print(f"{kind}: {'PASS' if rep['passed'] else 'FAIL'}")
    return EXIT_OK if rep["passed"] else EXIT_ERROR


def _add_run_flags(p, with_estimation: bool) -> None:
    p.add_argument("dataset")
    p.add_argument("--job", help="mean | sum | median | proportion:<label> | kmeans:<k>")
    p.add_argument("--config", help="TOML file; flags override its keys")
    p.add_argument("--seed", type=int, help="defaults to $EARL_SEED, else random")
    p.add_argument("--block-size", dest="block_size", type=int)
    p.add_argument("--out", help="result JSON path (default: stdout)")
    if not with_estimation:
        return
    p.add_argument("--sigma", type=float, help="target c_v (default 0.05)")
    p.add_argument("--tau", type=float, help="B stability threshold (default 0.01)")
    p.add_argument("--p-init", dest="p_init", type=float, help="initial sample fraction")
    p.add_argument("--ladder-depth", dest="ladder_depth", type=int)
    p.add_argument("--sampler", choices=["pre", "post", "reservoir"])
    p.add_argument("--bootstraps", type=int, help="fix B instead of estimating it")
    p.add_argument("--sample-size", dest="sample_size", type=int, help="fix n")
    p.add_argument("--no-intra-sharing", dest="intra_sharing", action="store_const",
                   const=False)
    p.add_argument("--workers", type=int)
    p.add_argument("--fail", action="append", type=_fail_spec, metavar="WORKER:ITERATION")
    p.add_argument("--mode", choices=["early", "full"])
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--trace", help="CSV: iteration,n,B,cv,records_processed")
    p.add_argument("--curve", help="CSV: n,cv points of the sample-size fit")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="earl", description="Early approximate results with bootstrap error bounds.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset and its truth manifest")
    g.add_argument("path")
    g.add_argument("--n", type=int, default=1_000_000)
    g.add_argument("--dist", choices=DISTRIBUTIONS, default="normal")
    g.add_argument("--loc", type=float, default=0.0)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--labels", help="comma-separated categorical labels")
    g.add_argument("--probs", help="comma-separated label probabilities")
    g.add_argument("--ordering", choices=ORDERINGS, default="random")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run a job to a target error")
    _add_run_flags(r, True)
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("full", help="exact answer over every record")
    _add_run_flags(f, False)
    f.set_defaults(func=cmd_full)

    a = sub.add_parser("audit", help="statistical self-checks")
    a.add_argument("kind", choices=sorted(AUDITS))
    a.add_argument("--sampler", choices=["pre", "post", "reservoir"], default="post")
    a.add_argument("--n", type=int)
    a.add_argument("--nprime", type=int)
    a.add_argument("--trials", type=int)
    a.add_argument("--records", type=int, default=1000)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, NoSurvivorsError, ArithmeticError) as e:
        print(f"earl: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
