"""Command-line entry point: ``optidice {bench,solve,fourrooms,selfcheck}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error,
3 solver non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import BenchmarkConfig, run_benchmark, write_runs_csv
from .fourrooms import run_illustrative, write_heatmaps
from .mdp import behavior_policy_estimate, empirical_distribution, mle_mdp, stationary_distribution
from .selfcheck import run_selfcheck
from .serialization import load_config, load_mdp, read_dataset_csv
from .solver import SolverConfig, solve

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_UNCONVERGED = 0, 1, 2, 3

logger = logging.getLogger("optidice")


class ConfigError(Exception):
    pass


def _read_config(path: str | None, required: bool) -> tuple[dict, Path]:
    if path is None:
        if required:
            raise ConfigError("--config is required for this subcommand")
        return {}, Path.cwd()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = load_config(p)
    except Exception as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be a table/object")
    return doc, p.parent


def _parse_alphas(text: str) -> list[float]:
    try:
        alphas = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --alpha list {text!r}") from exc
    if not alphas or min(alphas) <= 0:
        raise ConfigError("--alpha needs one or more positive numbers")
    return alphas


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    doc, _ = _read_config(args.config, required=True)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.workers is not None:
        doc["workers"] = args.workers
    try:
        config = BenchmarkConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_dir(args)

    records, report = run_benchmark(config)
    with open(out / "runs.csv", "w", newline="") as fh:
        write_runs_csv(records, fh, timings=args.timings)
    (out / "report.json").write_text(json.dumps(
        {"config": config.to_dict(), **report.to_dict()}, indent=1) + "\n")
    print(report.table())
    if report.n_failed:
        print(f"{report.n_failed} run(s) failed; see runs.csv", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _solve_inputs(doc: dict, base: Path):
    known = {"mdp", "dataset", "model", "d_ref", "method", "absorbing", "solver"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown solve config keys: {sorted(unknown)}")
    if "mdp" not in doc or "dataset" not in doc:
        raise ConfigError("solve config needs 'mdp' and 'dataset' paths")
    try:
        template = load_mdp(_resolve(base, doc["mdp"]))
        data = read_dataset_csv(_resolve(base, doc["dataset"]), template.n_states,
                                template.n_actions)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad solve input: {exc}") from exc

    model_kind = doc.get("model", "mle")
    if model_kind == "mle":
        model = mle_mdp(data, template)
    elif model_kind == "given":
        model = template
    else:
        raise ConfigError(f"model must be 'mle' or 'given', got {model_kind!r}")

    ref = doc.get("d_ref", "empirical")
    if ref == "empirical":
        d_ref = empirical_distribution(data, absorbing=doc.get("absorbing", []))
    elif ref == "mle-behavior":
        d_ref = stationary_distribution(model, behavior_policy_estimate(data))
    else:
        try:
            pi = np.array(json.loads(_resolve(base, ref).read_text()), dtype=float)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"d_ref must be 'empirical', 'mle-behavior' or a policy JSON: {exc}") from exc
        d_ref = stationary_distribution(model, pi)
    return model, d_ref, ref, model_kind


def cmd_solve(args) -> int:
    doc, base = _read_config(args.config, required=True)
    model, d_ref, ref, model_kind = _solve_inputs(doc, base)
    solver_doc = dict(doc.get("solver", {}))
    if args.seed is not None:
        solver_doc["seed"] = args.seed
    alphas = _parse_alphas(args.alpha) if args.alpha else [float(solver_doc.get("alpha", 1.0))]
    method = doc.get("method", "auto")
    out = _out_dir(args)

    results = []
    all_converged = True
    for alpha in alphas:
        try:
            config = SolverConfig.from_dict({**solver_doc, "alpha": alpha})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        res = solve(model, d_ref, config, method=method)
        entry = res.to_dict()
        entry["alpha"] = alpha
        entry["expected_reward"] = float(np.sum(d_ref * res.w * model.reward))
        results.append(entry)
        all_converged &= res.converged
        print(f"alpha={alpha:g} converged={res.converged} iterations={res.iterations} "
              f"objective={res.objective:.10g} grad_norm={res.grad_norm:.3e}")
    payload = {"model": model_kind, "d_ref": ref, "d_ref_values": d_ref.tolist(),
               "results": results}
    (out / "solve.json").write_text(json.dumps(payload, indent=1) + "\n")
    return EXIT_OK if all_converged else EXIT_UNCONVERGED


def cmd_fourrooms(args) -> int:
    doc, _ = _read_config(args.config, required=False)
    params = {"alpha": 1e-3, "n_episodes": 50, "max_steps": 50, **doc.get("fourrooms", doc)}
    unknown = set(params) - {"alpha", "n_episodes", "max_steps", "seed"}
    if unknown:
        raise ConfigError(f"unknown fourrooms config keys: {sorted(unknown)}")
    seed = args.seed if args.seed is not None else int(params.pop("seed", 0))
    params.pop("seed", None)
    out = _out_dir(args)
    result = run_illustrative(seed=seed, **params)
    for path in write_heatmaps(result, out):
        print(path)
    if not result.solve.converged:
        print("solver did not converge", file=sys.stderr)
        return EXIT_UNCONVERGED
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    results = run_selfcheck(seed=args.seed if args.seed is not None else 0)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {"bench": cmd_bench, "solve": cmd_solve, "fourrooms": cmd_fourrooms,
            "selfcheck": cmd_selfcheck}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optidice", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", metavar="PATH")
        if out:
            p.add_argument("--out", metavar="DIR", default=".")
        p.add_argument("--seed", type=int)
        return p

    bench = common(sub.add_parser("bench", help="random-MDP benchmark"))
    bench.add_argument("--workers", type=int)
    bench.add_argument("--timings", action="store_true",
                       help="record wall times in runs.csv (output no longer reproducible)")
    solve_p = common(sub.add_parser("solve", help="solve one MDP + dataset"))
    solve_p.add_argument("--alpha", metavar="LIST", help="comma-separated alpha sweep")
    common(sub.add_parser("fourrooms", help="Four Rooms heatmaps"))
    common(sub.add_parser("selfcheck", help="numerical property checks"), out=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # reported, never a traceback dump
        logger.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
