"""Command-line front end: ``edacs <subcommand> [options]``.

Every run writes ``run-manifest.txt`` (``key=value`` lines) into its
output directory; ``edacs --from-manifest PATH`` replays it, with any
further options overriding the recorded ones.

Exit codes: 0 on success, 2 when a solve stopped at the iteration limit
(outputs are still written), 1 on invalid input or I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .coherence import coherence_params, error_bound_note
from .experiments import (
    DESK_C_VALUES,
    DESK_S_VALUES,
    DESK_TRIALS,
    FULL_C_VALUES,
    FULL_S_VALUES,
    FULL_TRIALS,
    read_clip_schedule,
    run_detection_experiment,
    run_phase_diagram,
    write_clip_schedule,
)
from .signals import build_impulse_response, difference_apply, downsample, read_signal_csv, write_series_csv
from .solver import SolverConfig, kkt_report, solve
from .synth import SynthConfig, compose_observation, labeled_corpus

MANIFEST = "run-manifest.txt"
EXIT_OK, EXIT_ERROR, EXIT_UNCONVERGED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_common(p):
    p.add_argument("--out-dir", required=True, help="directory for all outputs")
    p.add_argument("--tau1", type=float, default=10.0, help="slow time constant in seconds")
    p.add_argument("--tau2", type=float, default=1.0, help="fast time constant in seconds")
    p.add_argument("--ir-duration-s", type=float, default=40.0, help="impulse response support")
    p.add_argument("--sample-rate-hz", type=float, default=4.0)
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def _add_solver(p, eta_default=0.14):
    p.add_argument("--eta", type=float, default=eta_default, help="l2 radius of the data constraint")
    p.add_argument("--nonneg", action="store_true", help="constrain SCR events to be non-negative")
    p.add_argument("--max-iters", type=int, default=SolverConfig.max_iters)
    p.add_argument("--tol", type=float, default=SolverConfig.tol_rel, help="relative residual tolerance")


def _add_synth(p):
    p.add_argument("--T", type=int, default=240, help="number of event positions")
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--epsilon", type=float, default=0.01, help="l2 norm of the differenced noise")
    p.add_argument("--alpha", type=float, default=0.01, help="baseline scale")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="edacs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--from-manifest", metavar="PATH", help="replay a recorded run")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a synthetic instance or a labelled corpus")
    _add_common(p)
    _add_synth(p)
    p.add_argument("--s", type=int, default=10, help="number of SCR events")
    p.add_argument("--c", type=int, default=10, help="number of baseline jumps")
    p.add_argument("--level", type=float, default=2.0, help="initial baseline level")
    p.add_argument("--corpus", type=int, default=0, metavar="N",
                   help="write N labelled recordings with clip schedules instead")

    p = sub.add_parser("decompose", help="split a recording into SCR events and baseline")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--input", required=True, help="CSV with one sample per row (last column)")
    p.add_argument("--downsample-to-hz", type=float, default=None)

    p = sub.add_parser("coherence", help="coherence parameters and the sparsity condition")
    _add_common(p)
    p.add_argument("--T", type=int, default=240)
    p.add_argument("--s", type=int, default=None)
    p.add_argument("--c", type=int, default=None)

    p = sub.add_parser("phase-diagram", help="mean recovery error over an (s, c) grid")
    _add_common(p)
    _add_synth(p)
    p.add_argument("--s-values", type=_int_list, default=list(DESK_S_VALUES))
    p.add_argument("--c-values", type=_int_list, default=list(DESK_C_VALUES))
    p.add_argument("--trials", type=int, default=DESK_TRIALS)
    p.add_argument("--full-grid", action="store_true",
                   help=f"s up to {FULL_S_VALUES[-1]}, c up to {FULL_C_VALUES[-1]}, {FULL_TRIALS} trials")
    p.add_argument("--eta-factor", type=float, default=1.05)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-iters", type=int, default=SolverConfig.max_iters)
    p.add_argument("--tol", type=float, default=SolverConfig.tol_rel)

    p = sub.add_parser("evaluate", help="windowed SCR event detection with ROC/AUC")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--signals", nargs="*", default=[], help="recording CSVs")
    p.add_argument("--clips", nargs="*", default=[],
                   help="clip schedule CSVs (start_s,end_s,label): one shared or one per signal")
    p.add_argument("--synthetic-corpus", type=int, default=0, metavar="N",
                   help="evaluate on N simulated recordings instead of --signals")
    p.add_argument("--epsilon", type=float, default=0.01, help="noise level of the simulated corpus")
    p.add_argument("--seed", type=int, default=0, help="seed of the simulated corpus")
    p.add_argument("--downsample-to-hz", type=float, default=None)
    p.add_argument("--aggregation", choices=("clamp", "raw", "abs"), default="clamp")
    p.add_argument("--window-s", type=float, default=None, help="fixed window length from each clip start")
    return parser


# ---------------------------------------------------------------- manifest

_SKIP = {"from_manifest", "verbose"}


def write_manifest(out_dir, args):
    lines = [f"version={__version__}", f"subcommand={args.subcommand}"]
    for key, value in sorted(vars(args).items()):
        if key in _SKIP or key == "subcommand":
            continue
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    path = Path(out_dir) / MANIFEST
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    if "subcommand" not in out:
        raise ValueError(f"{path}: no subcommand recorded")
    return out


def manifest_argv(record, parser):
    """Rebuild the command line a manifest describes."""
    cmd = record["subcommand"]
    sub = parser._subparsers._group_actions[0].choices[cmd]
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    argv = [cmd]
    for key, value in record.items():
        if key in ("version", "subcommand") or key not in actions:
            continue
        action = actions[key]
        flag = action.option_strings[0]
        if isinstance(action, argparse._StoreTrueAction):
            if value == "True":
                argv.append(flag)
        elif value == "None":
            continue
        elif action.nargs == "*":
            argv.append(flag)
            argv.extend(v for v in value.split(",") if v)
        else:
            argv.extend([flag, value])
    return argv


# ---------------------------------------------------------------- commands


def _impulse(args, rate=None):
    return build_impulse_response(args.tau1, args.tau2, rate or args.sample_rate_hz, args.ir_duration_s)


def _solver_cfg(args):
    return SolverConfig(eta=args.eta, nonneg_x=args.nonneg, max_iters=args.max_iters, tol_rel=args.tol)


def _write_kv(path, mapping):
    with open(path, "w") as fh:
        for key, value in mapping.items():
            fh.write(f"{key}={value!r}\n" if isinstance(value, float) else f"{key}={value}\n")


def cmd_simulate(args, out):
    h = _impulse(args)
    if args.corpus:
        corpus = labeled_corpus(args.corpus, seed=args.seed, epsilon=args.epsilon, gamma=args.gamma,
                                level=args.level, h=h)
        for k, (sig, sched, x) in enumerate(zip(corpus.signals, corpus.schedules, corpus.x_true)):
            write_series_csv(out / f"signal_{k:02d}.csv", sig.samples, sig.sample_rate_hz)
            write_clip_schedule(out / f"clips_{k:02d}.csv", sched)
            write_series_csv(out / f"x_true_{k:02d}.csv", x)
        return EXIT_OK
    cfg = SynthConfig(T=args.T, s=args.s, c=args.c, delta=args.delta, gamma=args.gamma,
                      epsilon=args.epsilon, alpha=args.alpha, seed=args.seed, tau1=args.tau1,
                      tau2=args.tau2, sample_rate_hz=args.sample_rate_hz, ir_duration_s=args.ir_duration_s)
    inst = compose_observation(cfg, h)
    inst.write_csv(out)
    write_series_csv(out / "signal.csv", inst.raw_signal(args.level), args.sample_rate_hz)
    return EXIT_OK


def cmd_decompose(args, out):
    sig = read_signal_csv(args.input, args.sample_rate_hz)
    if args.downsample_to_hz:
        sig = downsample(sig, args.downsample_to_hz)
    h = _impulse(args, sig.sample_rate_hz)
    res = solve(sig, h, _solver_cfg(args))
    rate = sig.sample_rate_hz
    write_series_csv(out / "events.csv", res.x_hat, rate)
    write_series_csv(out / "baseline_diff.csv", res.u_hat, rate)
    write_series_csv(out / "scr_signal.csv", res.scr_signal, rate)
    diag = {
        "converged": res.converged,
        "stop_reason": res.stop_reason,
        "iterations": res.iterations,
        "objective": res.objective,
        "residual_norm": res.residual_norm,
        "eta": res.eta,
        "nonneg_x": res.nonneg_x,
        "T": res.x_hat.size,
        "t": len(h.samples),
    }
    diag.update(kkt_report(res, difference_apply(sig.samples), h).as_dict())
    _write_kv(out / "diagnostics.txt", diag)
    if not args.no_figures:
        from .plotting import plot_decomposition

        plot_decomposition(sig.samples, res, rate, out / "decomposition.png")
    return EXIT_OK if res.converged else EXIT_UNCONVERGED


def cmd_coherence(args, out):
    rep = coherence_params(_impulse(args), args.T)
    data = rep.as_dict()
    if args.s is not None or args.c is not None:
        note = error_bound_note(rep, args.s or 0, args.c or 0)
        data.update({k: note[k] for k in ("s", "c", "condition_holds", "certificate")})
    _write_kv(out / "coherence.txt", data)
    return EXIT_OK


def cmd_phase_diagram(args, out):
    if args.full_grid:
        s_values, c_values, trials = FULL_S_VALUES, FULL_C_VALUES, FULL_TRIALS
    else:
        s_values, c_values, trials = args.s_values, args.c_values, args.trials
    base = SynthConfig(T=args.T, delta=args.delta, gamma=args.gamma, epsilon=args.epsilon,
                       alpha=args.alpha, seed=args.seed, tau1=args.tau1, tau2=args.tau2,
                       sample_rate_hz=args.sample_rate_hz, ir_duration_s=args.ir_duration_s)
    scfg = SolverConfig(max_iters=args.max_iters, tol_rel=args.tol)
    grid = run_phase_diagram(base, s_values, c_values, trials, args.eta_factor, scfg, args.workers)
    grid.write_csv(out / "phase_diagram.csv")
    if not args.no_figures:
        from .plotting import plot_phase_diagram

        plot_phase_diagram(grid, out / "phase_diagram.png")
    return EXIT_UNCONVERGED if grid.unconverged.any() else EXIT_OK


def cmd_evaluate(args, out):
    if args.synthetic_corpus:
        corpus = labeled_corpus(args.synthetic_corpus, seed=args.seed, epsilon=args.epsilon,
                                h=_impulse(args))
        signals, schedules = corpus.signals, corpus.schedules
    else:
        if not args.signals or not args.clips:
            raise ValueError("evaluate needs --signals and --clips (or --synthetic-corpus)")
        signals = [read_signal_csv(p, args.sample_rate_hz) for p in args.signals]
        schedules = [read_clip_schedule(p) for p in args.clips]
        if len(schedules) == 1:
            schedules = schedules * len(signals)
        elif len(schedules) != len(signals):
            raise ValueError(f"{len(schedules)} clip files for {len(signals)} signals")
    outcomes = run_detection_experiment(signals, schedules, _impulse(args), _solver_cfg(args),
                                        args.downsample_to_hz, args.aggregation, window_s=args.window_s)
    summary = {}
    for name, o in outcomes.items():
        o.roc.write_csv(out / f"roc_{name}.csv")
        summary[f"auc_{name}"] = o.roc.auc
        summary[f"windows_{name}"] = len(o.scores)
        summary[f"failed_signals_{name}"] = len(o.failures)
        summary[f"unconverged_{name}"] = o.unconverged
    _write_kv(out / "auc.txt", summary)
    if not args.no_figures:
        from .plotting import plot_roc

        plot_roc(outcomes, out / "roc.png")
    bad = any(o.unconverged or o.failures for o in outcomes.values())
    return EXIT_UNCONVERGED if bad else EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "decompose": cmd_decompose,
    "coherence": cmd_coherence,
    "phase-diagram": cmd_phase_diagram,
    "evaluate": cmd_evaluate,
}


def _expand_manifest(argv, parser):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--from-manifest")
    ns, rest = pre.parse_known_args(argv)
    if not ns.from_manifest:
        return argv
    replay = manifest_argv(read_manifest(ns.from_manifest), parser)
    top = [a for a in rest if a in ("-v", "--verbose")]
    rest = [a for a in rest if a not in top]
    if rest and not rest[0].startswith("-"):
        if rest[0] != replay[0]:
            raise ValueError(f"subcommand {rest[0]!r} differs from the manifest's {replay[0]!r}")
        rest = rest[1:]
    # later options override the recorded ones
    return top + replay + rest


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_manifest(argv, parser)
    except (OSError, ValueError) as exc:
        print(f"edacs: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    args = parser.parse_args(argv)
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, args)
        return COMMANDS[args.subcommand](args, out)
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"edacs {args.subcommand}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
