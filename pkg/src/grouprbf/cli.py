"""Command line: simulate | screen | fit | predict | evaluate.

Exit codes: 0 success, 2 invalid input, 3 numerical failure inside the sampler.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .chain import Chain, _jsonable
from .data import format_float, load_dataset, read_matrix, write_matrix
from .evaluate import fitted_values, predict
from .groups import GroupStructure, contiguous_groups, load_groups
from .pipeline import evaluate_chain, fit
from .priors import Hyperparams
from .sampler import SamplerConfig, SamplerError
from .screening import correlation_screen, group_screen
from .simgen import DEFAULT_XI_GROUP, SimTruth, gen_dataset, split_entries, split_rows

log = logging.getLogger("grouprbf")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def worker_count(jobs: int) -> int:
    cap = os.environ.get("GROUPRBF_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    if limit < 1:
        raise ValueError("GROUPRBF_THREADS must be a positive integer")
    return max(1, min(jobs, limit))


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- splits -----------------------------------------------------------------

def split_to_json(test: np.ndarray, mode: str, ratio: float, seed: int) -> dict:
    if mode == "entries":
        return {"mode": mode, "ratio": ratio, "seed": seed, "test": (np.argwhere(test) + 1).tolist()}
    return {"mode": mode, "ratio": ratio, "seed": seed, "test_rows": (np.flatnonzero(test) + 1).tolist()}


def test_mask_from_json(obj: dict, shape: tuple[int, int]) -> np.ndarray:
    """Boolean (n, v) mask of held-out entries."""
    mask = np.zeros(shape, dtype=bool)
    if obj["mode"] == "entries":
        idx = np.asarray(obj["test"], dtype=int).reshape(-1, 2) - 1
        mask[idx[:, 0], idx[:, 1]] = True
    elif obj["mode"] == "rows":
        mask[np.asarray(obj["test_rows"], dtype=int) - 1, :] = True
    else:
        raise ValueError(f"unknown split mode {obj['mode']!r}")
    return mask


# -- simulate -----------------------------------------------------------------

def _simulate_one(args: dict, seed: int, out: Path) -> None:
    gs = contiguous_groups(args["M"], args["group_size"])
    data, truth = gen_dataset(args["n"], gs, seed, xi_group=args["xi_group"] - 1,
                              missing_rate=args["missing_rate"])
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "X.csv", data.X, "x")
    write_matrix(out / "Y.csv", data.Y, "y")
    _write_json(out / "truth.json", truth.to_json() | {"seed": seed})
    _write_json(out / "groups.json", gs.to_json())
    if args["split"] == "entries":
        test = split_entries(data.mask, args["ratio"], seed)
    else:
        _, rows = split_rows(data.n, args["ratio"], seed)
        test = np.zeros(data.n, dtype=bool)
        test[rows] = True
    _write_json(out / "split.json", split_to_json(test, args["split"], args["ratio"], seed))


def cmd_simulate(args) -> int:
    out = Path(args.out)
    opts = {k: getattr(args, k) for k in ("n", "M", "group_size", "xi_group", "missing_rate", "split", "ratio")}
    if args.replicates <= 1:
        _simulate_one(opts, args.seed, out)
        return EXIT_OK
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(args.seed).spawn(args.replicates)]
    dirs = [out / f"rep{r + 1:03d}" for r in range(args.replicates)]
    with ProcessPoolExecutor(max_workers=worker_count(args.replicates)) as pool:
        for fut in [pool.submit(_simulate_one, opts, s, d) for s, d in zip(seeds, dirs)]:
            fut.result()
    _write_json(out / "replicates.json", {"seed": args.seed, "replicates": [
        {"dir": d.name, "seed": s} for d, s in zip(dirs, seeds)]})
    return EXIT_OK


# -- shared loading -------------------------------------------------------------

def _groups_for(args, p: int) -> GroupStructure:
    if getattr(args, "groups", None):
        gs = load_groups(args.groups)
    elif (Path(args.data) / "groups.json").exists():
        gs = load_groups(Path(args.data) / "groups.json")
    else:
        raise ValueError("no group definition: pass --groups or put groups.json in the data directory")
    if gs.p != p:
        raise ValueError(f"groups cover {gs.p} predictors but X has {p} columns")
    return gs


def _split_path(args) -> Path | None:
    if getattr(args, "no_holdout", False):
        return None
    if getattr(args, "split", None):
        return Path(args.split)
    default = Path(args.data) / "split.json"
    return default if default.exists() else None


def _hyperparams(args) -> Hyperparams:
    hp = {k: getattr(args, k) for k in ("c1", "c2", "kappa1", "kappa2", "nu1", "qG", "a0", "b0")
          if getattr(args, k, None) is not None}
    hp["screen_cutoff"] = args.cutoff
    hp["group_level"] = args.group_level
    return Hyperparams(**hp)


# -- screen -------------------------------------------------------------------------

def cmd_screen(args) -> int:
    data = load_dataset(args.data)
    gs = _groups_for(args, data.p)
    cs = correlation_screen(data.X, data.Y, args.cutoff)
    gsr = group_screen(data.X, data.Y, gs, args.group_level)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, {
        "cutoff": args.cutoff,
        "group_level": args.group_level,
        "predictors": (cs.selected + 1).tolist(),
        "groups": (gsr.selected + 1).tolist(),
    })
    return EXIT_OK


# -- fit ------------------------------------------------------------------------------

def sampler_config(args) -> SamplerConfig:
    return SamplerConfig(burn_in=args.burn_in, samples=args.samples, thin=args.thin, seed=args.seed,
                         indicator_start=args.indicator_start, n_factors=args.factors)


def cmd_fit(args) -> int:
    data = load_dataset(args.data)
    gs = _groups_for(args, data.p)
    split = _split_path(args)
    train = data
    if split is not None:
        train = data.with_missing(test_mask_from_json(_read_json(split), data.Y.shape))
    hp = _hyperparams(args)
    res = fit(train, gs, sampler_config(args), hp, K=args.K, screen=not args.no_screen)
    out = Path(args.out)
    res.chain.meta["split"] = None if split is None else {
        "file": split.name, "sha256": hashlib.sha256(split.read_bytes()).hexdigest()}
    res.chain.save(out)
    _write_json(out / "summary.json", res.summary().to_json() | {"K": res.K})
    log.info("wrote chain with %d draws to %s", res.chain.size, out)
    return EXIT_OK


# -- predict ----------------------------------------------------------------------------

def cmd_predict(args) -> int:
    chain = Chain.load(args.chain)
    X = read_matrix(Path(args.data) / "X.csv") if Path(args.data).is_dir() else read_matrix(args.data)
    Yhat = fitted_values(chain) if args.fitted else predict(chain, X)
    if args.fitted and Yhat.shape[0] != X.shape[0]:
        raise ValueError("fitted values cover the training rows only; row counts differ")
    write_matrix(args.out, Yhat, "y")
    return EXIT_OK


# -- evaluate -----------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    chain = Chain.load(args.chain)
    data = load_dataset(args.data)
    split = _split_path(args)
    test, mode = None, "entries"
    if split is not None:
        obj = _read_json(split)
        test, mode = test_mask_from_json(obj, data.Y.shape), obj["mode"]
    truth_path = Path(args.data) / "truth.json"
    truth = SimTruth.from_json(_read_json(truth_path)) if truth_path.exists() else None
    m = evaluate_chain(chain, data, test, mode, truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    roc = m.pop("roc", None)
    aligned = m.pop("loading_aligned", None)
    _write_json(out / "metrics.json", m)
    if roc is not None:
        with open(out / "roc.csv", "w", encoding="utf-8") as fh:
            fh.write("FPR,TPR\n")
            fh.writelines(f"{format_float(a)},{format_float(b)}\n" for a, b in zip(roc["fpr"], roc["tpr"]))
    write_matrix(out / "loading_aligned.csv", np.asarray(aligned if aligned is not None else m["loading_scaled"]),
                 "factor")
    if m.get("pooled_effects"):
        with open(out / "pooled_effects.csv", "w", encoding="utf-8") as fh:
            fh.write("attribute,E,rank\n")
            E = m["pooled_effects"]["E"]
            rank = {a: i + 1 for i, a in enumerate(m["pooled_effects"]["ranking"])}
            fh.writelines(f"{a + 1},{format_float(E[a])},{rank[a + 1]}\n" for a in range(len(E)))
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grouprbf", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of option defaults; command-line flags win")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic benchmark data")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--M", type=int, default=15)
    p.add_argument("--group-size", type=int, default=9)
    p.add_argument("--xi-group", type=int, default=DEFAULT_XI_GROUP + 1,
                   help="1-based group whose first five predictors form the linear block")
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--split", choices=("entries", "rows"), default="entries")
    p.add_argument("--ratio", type=float, default=0.7, help="training fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    def common(q):
        q.add_argument("--data", required=True, help="directory holding X.csv and Y.csv")
        q.add_argument("--groups", help="groups JSON (default: groups.json in the data directory)")
        q.add_argument("--cutoff", type=float, default=0.01)
        q.add_argument("--group-level", type=float, default=0.05)

    p = sub.add_parser("screen", help="marginal correlation and group F screens")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("fit", help="screen, choose K and run the sampler")
    common(p)
    p.add_argument("--out", required=True, help="chain directory")
    p.add_argument("--K", type=int)
    p.add_argument("--no-screen", action="store_true")
    p.add_argument("--split", help="split JSON whose test entries are held out (default: split.json in data)")
    p.add_argument("--no-holdout", action="store_true", help="fit on every observed entry")
    p.add_argument("--burn-in", type=int, default=5000)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--indicator-start", type=int)
    p.add_argument("--factors", type=int)
    for name in ("c1", "c2", "kappa1", "kappa2", "nu1", "qG", "a0", "b0"):
        p.add_argument(f"--{name}", type=float)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior mean predictions")
    p.add_argument("--chain", required=True)
    p.add_argument("--data", required=True, help="X.csv or a directory containing it")
    p.add_argument("--out", required=True)
    p.add_argument("--fitted", action="store_true",
                   help="posterior mean of f + Lambda eta at the training rows (fills held-out entries)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics for a fitted chain")
    p.add_argument("--chain", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split")
    p.add_argument("--no-holdout", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        config = _read_json(Path(args.config))
        if not isinstance(config, dict):
            raise ValueError("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        config = {k.replace("-", "_"): v for k, v in config.items()}
        known = {a.dest for a in sub._actions}
        unknown = set(config) - known - {"config", "verbose"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SamplerError as exc:
        print(f"numerical failure in step '{exc.step}': {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
