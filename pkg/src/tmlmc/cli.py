"""Command-line harness: baselines, training runs, estimator diagnostics.

All randomness is derived from ``--seed``. Outputs are CSV (and JSON for
baselines) so any plotting tool can consume them.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import rng as crng
from .core import Divergence, MinDomain, UncertaintySpec, load_mdp
from .envs import make_env
from .learner import LearnerConfig, Stepsize, recommended_nmax, run_many
from .mlmc import MLMCConfig, TabularGenerativeModel, estimate_operator
from .robustdp import ConvergenceError, RobustModel, robust_value_iteration

TRACE_HEADER = ["run_id", "iteration", "cum_samples", "q_gap_inf", "greedy_robust_value"]
SUMMARY_HEADER = ["iteration", "mean", "p5", "p95"]
BIAS_HEADER = ["n_max", "bias_hat", "bias_se", "var_hat", "mean_samples"]
COMPARE_HEADER = ["series", "n_max"] + TRACE_HEADER
UNTRUNCATED_NMAX = 62
BIAS_MAX_PAIRS = 64
BIAS_CHUNK = 1 << 17


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument handling


def _add_model_args(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--env", help="garnet:S,A,seed | robot:a,b | lake:slip | gambler:p,goal")
    src.add_argument("--mdp-file", help="MDP in the JSON schema written by save_mdp")
    p.add_argument("--div", choices=[d.value for d in Divergence], default="tv")
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--min-domain", choices=[d.value for d in MinDomain], default="support",
                   help="TV minimum over the perturbed distribution's support or over all states")
    p.add_argument("--gamma-override", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value file; flags given on the command line win")


def _add_mlmc_args(p):
    p.add_argument("--psi", type=float, default=0.5)
    n = p.add_mutually_exclusive_group()
    n.add_argument("--nmax", type=int, default=32)
    n.add_argument("--nmax-auto", action="store_true")
    p.add_argument("--include-base-in-full", action="store_true")


def _add_learner_args(p):
    _add_mlmc_args(p)
    b = p.add_mutually_exclusive_group()
    b.add_argument("--beta", type=float, default=0.01)
    b.add_argument("--beta-auto", action="store_true")
    p.add_argument("--T", type=int, default=20000)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--eval-every", type=int,
                   help="policy-evaluation period; default T/100, 0 disables")
    p.add_argument("--baseline", help="baseline JSON from the baseline command")
    p.add_argument("--no-clamp", action="store_true")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tmlmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("baseline", help="robust value iteration on the nominal model")
    _add_model_args(p)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("train", help="seeded replications of robust Q-learning")
    _add_model_args(p)
    _add_learner_args(p)
    p.add_argument("--summary-out", help="default: <out stem>_summary.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bias-study", help="Monte Carlo bias and variance of the operator estimate")
    _add_model_args(p)
    _add_mlmc_args(p)
    p.add_argument("--nmax-list", default="2,4,6,8")
    p.add_argument("--reps", type=int, default=100000)
    p.add_argument("--state", type=int, default=0)
    p.add_argument("--action", type=int, default=0)
    p.add_argument("--q-file", help="JSON with a 'q' table; default is the robust optimum")
    p.set_defaults(func=cmd_bias_study)

    p = sub.add_parser("compare-mlmc", help="configured threshold against an untruncated run")
    _add_model_args(p)
    _add_learner_args(p)
    p.set_defaults(func=cmd_compare_mlmc)
    return parser


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise CliError(f"not a boolean: {text!r}")


def _apply_config(parser, args, argv):
    """Fill options from ``--config`` that were not given on the command line."""
    if not args.config:
        return
    sub = parser._subparsers._group_actions[0].choices[args.command]
    given = set()
    for action in sub._actions:
        for opt in action.option_strings:
            if any(tok == opt or tok.startswith(opt + "=") for tok in argv):
                given.add(action.dest)
    by_dest = {a.dest: a for a in sub._actions if a.option_strings}
    try:
        lines = Path(args.config).read_text().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read config {args.config}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        dest = key.strip().lstrip("-").replace("-", "_")
        if not sep or dest not in by_dest or dest == "config":
            raise CliError(f"{args.config}:{lineno}: unknown setting {key.strip()!r}")
        if dest in given:
            continue
        action = by_dest[dest]
        value = value.strip()
        if isinstance(action, argparse._StoreTrueAction):
            parsed = _parse_bool(value)
        else:
            try:
                parsed = action.type(value) if action.type else value
            except ValueError:
                raise CliError(f"{args.config}:{lineno}: bad value for {dest}: {value!r}") from None
            if action.choices is not None and parsed not in action.choices:
                raise CliError(f"{args.config}:{lineno}: {dest} must be one of {action.choices}")
        setattr(args, dest, parsed)


def _load_model(args):
    if args.mdp_file:
        mdp = load_mdp(args.mdp_file)
    elif args.env:
        mdp = make_env(args.env)
    else:
        raise CliError("one of --env or --mdp-file is required")
    if args.gamma_override is not None:
        mdp = mdp.with_gamma(args.gamma_override)
    spec = UncertaintySpec(args.div, args.sigma, args.min_domain)
    return mdp, spec


def _mlmc_config(args, mdp, spec, T=None):
    n_max = args.nmax
    if args.nmax_auto:
        if T is None:
            raise CliError("--nmax-auto needs --T")
        n_max = recommended_nmax(spec, T, mdp)
    return MLMCConfig(psi=args.psi, n_max=n_max, include_base_in_full=args.include_base_in_full)


def _learner_config(args, mdp, spec, n_max=None):
    mlmc = _mlmc_config(args, mdp, spec, args.T)
    if n_max is not None:
        mlmc = MLMCConfig(mlmc.psi, n_max, mlmc.include_base_in_full)
    if args.runs < 1:
        raise CliError("--runs must be at least 1")
    stepsize = Stepsize() if args.beta_auto else Stepsize.constant(args.beta)
    return LearnerConfig(iterations=args.T, spec=spec, mlmc=mlmc, stepsize=stepsize,
                         seed=args.seed, clamp_q=not args.no_clamp, eval_every=args.eval_every)


def _load_q(path, key="q"):
    try:
        return np.asarray(json.loads(Path(path).read_text())[key], dtype=float)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"cannot read Q table from {path}: {exc}") from None


def _fmt(x):
    return "" if x is None else repr(float(x))


def nearest_rank(sorted_values, pct):
    """Nearest-rank percentile of an ascending sequence."""
    n = len(sorted_values)
    k = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[k - 1]


# ---------------------------------------------------------------------------
# commands


def cmd_baseline(args) -> int:
    mdp, spec = _load_model(args)
    model = RobustModel(mdp, spec)
    q, iters = robust_value_iteration(mdp, spec, tol=args.tol, model=model)
    residual = float(np.abs(model.bellman(q) - q).max())
    out = {
        "divergence": spec.divergence.value,
        "sigma": spec.sigma,
        "min_domain": spec.min_domain.value,
        "gamma": mdp.gamma,
        "tol": args.tol,
        "iterations": iters,
        "residual_inf": residual,
        "q": q.tolist(),
        "v": q.max(axis=1).tolist(),
        "policy": q.argmax(axis=1).tolist(),
    }
    Path(args.out).write_text(json.dumps(out, indent=1))
    print(f"residual_inf={residual:.3e} iterations={iters}")
    return 0


def _trace_rows(results):
    for res in results:
        for rec in res.trace.records:
            yield [res.trace.run_id, rec.iteration, rec.cum_samples,
                   _fmt(rec.q_gap_inf), _fmt(rec.greedy_robust_value)]


def _summary_rows(results):
    by_iter = {}
    for res in results:
        for rec in res.trace.records:
            if rec.greedy_robust_value is not None:
                by_iter.setdefault(rec.iteration, []).append(rec.greedy_robust_value)
    for it in sorted(by_iter):
        vals = sorted(by_iter[it])
        yield [it, _fmt(np.mean(vals)), _fmt(nearest_rank(vals, 5)), _fmt(nearest_rank(vals, 95))]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_train(args) -> int:
    mdp, spec = _load_model(args)
    config = _learner_config(args, mdp, spec)
    baseline = _load_q(args.baseline) if args.baseline else None
    gen = TabularGenerativeModel(mdp)
    results = run_many(gen, config, range(args.runs), baseline=baseline, workers=args.workers)
    _write_csv(args.out, TRACE_HEADER, _trace_rows(results))
    out = Path(args.out)
    summary = args.summary_out or str(out.with_name(out.stem + "_summary.csv"))
    _write_csv(summary, SUMMARY_HEADER, _summary_rows(results))
    return 0


def cmd_compare_mlmc(args) -> int:
    mdp, spec = _load_model(args)
    baseline = _load_q(args.baseline) if args.baseline else None
    gen = TabularGenerativeModel(mdp)
    rows = []
    configured = _learner_config(args, mdp, spec)
    for series, config in (("tmlmc", configured),
                           ("untruncated", _learner_config(args, mdp, spec, UNTRUNCATED_NMAX))):
        results = run_many(gen, config, range(args.runs), baseline=baseline,
                           workers=args.workers)
        rows += [[series, config.mlmc.n_max] + r for r in _trace_rows(results)]
    _write_csv(args.out, COMPARE_HEADER, rows)
    return 0


def bias_study(mdp, spec, q, s, a, n_max_list, reps, seed, psi=0.5, include_base=False):
    """Rows ``(n_max, bias_hat, bias_se, var_hat, mean_samples)``.

    Replication ``i`` uses the same stream for every ``n_max``, so the level
    draws coincide wherever both thresholds keep the correction.
    """
    gen = TabularGenerativeModel(mdp)
    exact = float(RobustModel(mdp, spec).bellman(q)[s, a])
    root = crng.derive_key(seed, s, a)
    out = []
    for n_max in n_max_list:
        config = MLMCConfig(psi=psi, n_max=n_max, include_base_in_full=include_base)
        total = total_sq = samples = 0.0
        for start in range(0, reps, BIAS_CHUNK):
            idx = np.arange(start, min(start + BIAS_CHUNK, reps))
            keys = crng.child_key(root, idx)
            est, used = estimate_operator(gen, q, np.full(idx.size, s), np.full(idx.size, a),
                                          keys, spec, config)
            dev = est - exact
            total += dev.sum()
            total_sq += (dev ** 2).sum()
            samples += used.sum()
        mean_dev = total / reps
        var = (total_sq - reps * mean_dev ** 2) / (reps - 1)
        out.append((n_max, abs(mean_dev), math.sqrt(var / reps), var, samples / reps))
    return out


def cmd_bias_study(args) -> int:
    mdp, spec = _load_model(args)
    if mdp.num_states * mdp.num_actions > BIAS_MAX_PAIRS:
        raise CliError(f"bias-study needs at most {BIAS_MAX_PAIRS} state-action pairs, "
                       f"got {mdp.num_states * mdp.num_actions}")
    if args.reps < 2:
        raise CliError("--reps must be at least 2")
    if not (0 <= args.state < mdp.num_states and 0 <= args.action < mdp.num_actions):
        raise CliError("--state/--action out of range")
    try:
        n_list = [int(x) for x in args.nmax_list.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"bad --nmax-list {args.nmax_list!r}") from None
    if args.q_file:
        q = _load_q(args.q_file)
        if q.shape != (mdp.num_states, mdp.num_actions):
            raise CliError(f"Q table shape {q.shape} does not match the MDP")
    else:
        q, _ = robust_value_iteration(mdp, spec)
    rows = bias_study(mdp, spec, q, args.state, args.action, n_list, args.reps, args.seed,
                      psi=args.psi, include_base=args.include_base_in_full)
    _write_csv(args.out, BIAS_HEADER, [[n] + [_fmt(x) for x in rest] for n, *rest in rows])
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(parser, args, argv)
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CliError, ValueError, OverflowError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
