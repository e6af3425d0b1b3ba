"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
model), 3 verification failure (simulator and reference disagree).
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources

import numpy as np

from . import perf
from .dataflow import DEFAULT_CLOCK_HZ, DEFAULT_LATENCY, LstmEngine
from .lstm import LstmState, lstm_step, projection
from .model_io import (
    Backend,
    ModelLoadError,
    SampleMode,
    SamplerConfig,
    UnknownCharacterError,
    compare_run,
    generate_detailed,
    load_model_file,
    one_hot,
    sample_next,
)
from .pwl import Activation, build_table, format_table, max_abs_error

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3

REFERENCE_MODEL = "reference_model.lstmq"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def reference_model_path() -> str:
    return str(resources.files("lstmq88").joinpath("data", REFERENCE_MODEL))


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return value


def _single_char(text: str) -> str:
    text = text.encode().decode("unicode_escape") if text.startswith("\\") else text
    if len(text) != 1:
        raise argparse.ArgumentTypeError("seed must be exactly one character")
    return text


def _load(path: str | None):
    path = path or reference_model_path()
    try:
        return load_model_file(path)
    except OSError as exc:
        raise ModelLoadError(f"cannot read {path}: {exc.strerror}") from exc


def _sampler(args) -> SamplerConfig:
    return SamplerConfig(SampleMode(args.mode), args.temperature, args.rng_seed)


def cmd_generate(args) -> int:
    model = _load(args.model)
    seed = args.seed_char if args.seed_char is not None else model.vocab.char(0)
    run = generate_detailed(model, seed, args.length, _sampler(args), Backend(args.backend))
    if args.json:
        print(json.dumps({"seed": seed, "text": run.text, "backend": args.backend}))
    else:
        sys.stdout.write(run.text)
        if run.text and not run.text.endswith("\n"):
            sys.stdout.write("\n")
    return EXIT_OK


def cmd_compare(args) -> int:
    model = _load(args.model)
    report = compare_run(model, args.length, args.seed_char)
    if args.json:
        print(json.dumps(report.to_dict()))
        return EXIT_OK
    print(f"steps {report.steps}")
    print(f"{'':4}{'mean %':>10}{'best %':>10}{'worst %':>10}")
    for name, stats in (("c", report.c), ("h", report.h)):
        print(f"{name:<4}{stats.mean:>10.3f}{stats.best:>10.3f}{stats.worst:>10.3f}")
    return EXIT_OK


def _tamper(gate: str, beats: np.ndarray) -> np.ndarray:
    if gate == "i":
        beats[0, 0] ^= 0x0100
    return beats


def cmd_simulate(args) -> int:
    model = _load(args.model)
    cfg = model.engine_config(latency=args.latency)
    engine = LstmEngine(cfg, weight_hook=_tamper if args.tamper_weights else None)
    sampler = SamplerConfig()
    ref_states = [LstmState.zeros(layer.hidden) for layer in model.layers]
    sim_states = [LstmState.zeros(layer.hidden) for layer in model.layers]
    idx = 0
    mismatches = 0
    for step in range(args.length):
        x = one_hot(model.vocab, model.vocab.char(idx))
        inp = x
        for layer, state in zip(model.layers, ref_states):
            lstm_step(layer, inp, state, engine.tables)
            inp = state.h.copy()
        ref_logits = projection(model.projection, inp)
        sim_logits = engine.step_model(model.layers, model.projection, x, sim_states)
        same = np.array_equal(ref_logits, sim_logits) and all(
            np.array_equal(a.c, b.c) and np.array_equal(a.h, b.h) for a, b in zip(ref_states, sim_states)
        )
        if not same:
            mismatches += 1
            print(f"mismatch at step {step}", file=sys.stderr)
        idx = sample_next(ref_logits, sampler)

    counters = engine.counters
    expected_macs = sum(perf.ops_count(layer.hidden, layer.padded_input) for layer in model.layers) * args.length
    if counters.mac_ops != expected_macs:
        print(f"mac_ops {counters.mac_ops} != analytic {expected_macs}", file=sys.stderr)
        mismatches += 1
    if args.json:
        out = counters.to_dict()
        out.update(verified=mismatches == 0, mismatches=mismatches)
        print(json.dumps(out))
    else:
        print(counters.format_text())
        print(f"{'verified':<20} {'yes' if mismatches == 0 else 'NO'}")
    return EXIT_OK if mismatches == 0 else EXIT_VERIFY


def cmd_bench(args) -> int:
    report = perf.bench(hidden=args.hidden, layers=args.layers, steps=args.steps,
                        input_size=args.input_size, vocab_size=args.vocab_size or None,
                        clock_hz=args.clock_hz, latency=args.latency)
    print(report.dumps() if args.json else report.format_text())
    return EXIT_OK


def cmd_pwl_dump(args) -> int:
    table = build_table(Activation(args.function))
    err = max_abs_error(table)
    if args.json:
        d = table.to_dict()
        d["max_abs_error"] = err
        print(json.dumps(d))
    else:
        print(format_table(table))
        print(f"max_abs_error {err:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lstmq88", description="Q8.8 LSTM accelerator model")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_cmd(name: str, help_: str):
        p = sub.add_parser(name, help=help_)
        p.add_argument("model", nargs="?", help="model file (default: bundled random reference model)")
        p.add_argument("--json", action="store_true", help="machine-readable output")
        return p

    p = model_cmd("generate", "generate text character by character")
    p.add_argument("--seed-char", type=_single_char, default=None)
    p.add_argument("--length", type=_non_negative, default=100)
    p.add_argument("--mode", choices=[m.value for m in SampleMode], default=SampleMode.ARGMAX.value)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--rng-seed", type=_non_negative, default=0)
    p.add_argument("--backend", choices=[b.value for b in Backend], default=Backend.FUNCTIONAL.value)
    p.set_defaults(func=cmd_generate)

    p = model_cmd("compare", "fixed-point vs float percentage error")
    p.add_argument("--length", type=_positive, default=100)
    p.add_argument("--seed-char", type=_single_char, default=None)
    p.set_defaults(func=cmd_compare)

    p = model_cmd("simulate", "run the dataflow simulator and verify it against the reference")
    p.add_argument("--length", type=_positive, default=10)
    p.add_argument("--latency", type=_non_negative, default=DEFAULT_LATENCY)
    p.add_argument("--tamper-weights", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="analytic ops / timing / bandwidth report")
    p.add_argument("--hidden", type=_positive, default=128)
    p.add_argument("--layers", type=_positive, default=2)
    p.add_argument("--steps", type=_positive, default=1000)
    p.add_argument("--input-size", type=_positive, default=65)
    p.add_argument("--vocab-size", type=_non_negative, default=65, help="0 disables the projection")
    p.add_argument("--clock-hz", type=_positive, default=DEFAULT_CLOCK_HZ)
    p.add_argument("--latency", type=_non_negative, default=DEFAULT_LATENCY)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("pwl-dump", help="print a piecewise-linear activation table")
    p.add_argument("--function", choices=[a.value for a in Activation], default=Activation.TANH.value)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_pwl_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ModelLoadError, UnknownCharacterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
