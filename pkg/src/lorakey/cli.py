"""Command-line front end.

Every subcommand works inside one output directory. ``run`` writes all
artifacts in one go; ``simulate``, ``quantize``, ``reconcile``, ``amplify``
and ``evaluate`` produce the same files one stage at a time, so any stage
can be fed externally captured traces instead.

Exit codes: 0 success, 1 usage or configuration error, 2 reconciliation
failure, 3 entropy budget too small for the requested key.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bch, channel, metrics, pipeline
from .core import (
    TraceError,
    bits_to_str,
    parse_trace,
    read_index_list,
    serialize_trace,
    str_to_bits,
    write_index_list,
)
from .pipeline import (
    EXIT_OK,
    EXIT_RECONCILE,
    EXIT_USAGE,
    AmplifyOutcome,
    ReconcileOutcome,
)
from .quantizer import AlignmentError, QuantizationResult, QuantizerConfig, differential_quantize
from .sketch import SketchFormatError, SketchMessage

CODE_CHOICES = tuple(bch.CODE_PRESETS)

# documented output layout
TRACE_FILES = {"a": "trace_a.csv", "b": "trace_b.csv", "e": "trace_e.csv"}
KEPT_FILES = {"a": "kept_a.csv", "b": "kept_b.csv"}
BITS_FILES = {"a": "bits_a.txt", "b": "bits_b.txt"}
KEY_FILES = {"a": "key_a.txt", "b": "key_b.txt"}
SKETCH_FILE = "sketch.json"
RECONCILE_FILE = "reconcile.json"
AMPLIFY_FILE = "amplify.json"
METRICS_FILE = "metrics.json"
NIST_FILE = "nist.json"
REPORT_FILE = "report.json"

_USER_ERRORS = (
    TraceError,
    SketchFormatError,
    channel.SimConfigError,
    AlignmentError,
    OSError,
    ValueError,
    KeyError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; 2 is reserved for reconcile failure here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _assignment(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def _common_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default="outdoor_urban",
                   help="preset name or path to a key=value config file (default: outdoor_urban)")
    p.add_argument("--seed", type=_u64, help="run seed, overrides the config")
    p.add_argument("--epsilon", type=int, help="quantizer resolution in dB")
    p.add_argument("--code", choices=CODE_CHOICES, help="BCH code preset")
    p.add_argument("--alpha", type=float, help="NIST significance level (default 0.01)")
    p.add_argument("--key-bits", type=int, help="final key length in bits (default 128)")
    p.add_argument("--set", dest="assignments", type=_assignment, action="append", default=[],
                   metavar="KEY=VALUE", help="override any config key, repeatable")
    p.add_argument("--out", default=".", help="working directory for artifacts (default: .)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parent()
    parser = _Parser(prog="lorakey", description="RSSI key generation over a simulated LoRa link.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("run", parents=[common], help="full protocol, all artifacts")
    sub.add_parser("simulate", parents=[common], help="write trace_{a,b,e}.csv")

    q = sub.add_parser("quantize", parents=[common], help="write kept_{a,b}.csv and bits_{a,b}.txt")
    q.add_argument("--trace-a", help="Alice's trace (default: OUT/trace_a.csv)")
    q.add_argument("--trace-b", help="Bob's trace (default: OUT/trace_b.csv)")
    q.add_argument("--trace", help="quantize a single trace instead of an aligned pair")
    q.add_argument("--party", choices=("a", "b"), default="a",
                   help="file suffix for single-trace mode (default: a)")

    r = sub.add_parser("reconcile", parents=[common], help="sketch and recover, write key_{a,b}.txt")
    r.add_argument("--sketch", help="use an existing sketch message instead of drawing one")

    sub.add_parser("amplify", parents=[common], help="hash the reconciled keys, write amplify.json")

    e = sub.add_parser("evaluate", parents=[common], help="metrics, NIST and the final report")
    e.add_argument("--trace-a", help="Alice's trace (default: OUT/trace_a.csv)")
    e.add_argument("--trace-b", help="Bob's trace (default: OUT/trace_b.csv)")
    e.add_argument("--trace-e", help="Eve's trace (default: OUT/trace_e.csv if present)")
    return parser


# -- config and file helpers ------------------------------------------------


def _coerce(value: str):
    return channel.parse_config_text(f"x = {value}")["x"]


def config_from_args(args) -> pipeline.PipelineConfig:
    overrides = {k: _coerce(v) for k, v in args.assignments}
    flags = {"seed": args.seed, "epsilon": args.epsilon, "code": args.code,
             "alpha": args.alpha, "key_bits": args.key_bits}
    overrides.update({k: v for k, v in flags.items() if v is not None})
    cfg = pipeline.load_pipeline_config(args.config, **overrides)
    if cfg.key_bits < 1:
        raise UsageError("--key-bits must be positive")
    return cfg


def _read(path: Path) -> str:
    try:
        return path.read_text()
    except FileNotFoundError:
        raise UsageError(f"missing input file {path}") from None


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _load_trace(path, device_id: str):
    return parse_trace(_read(Path(path)), device_id)


def _load_bits(path: Path) -> np.ndarray:
    return str_to_bits(_read(path))


def _load_json(path: Path) -> dict:
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


def _bits_text(bits) -> str:
    return bits_to_str(bits) + "\n"


# -- stage writers ------------------------------------------------------------


def write_traces(out: Path, sim: channel.SimulationResult):
    for party, trace in zip("abe", (sim.trace_a, sim.trace_b, sim.trace_e)):
        _write(out / TRACE_FILES[party], serialize_trace(trace))


def write_quantized(out: Path, res_a: QuantizationResult, res_b: QuantizationResult):
    for party, res in (("a", res_a), ("b", res_b)):
        _write(out / KEPT_FILES[party], write_index_list(res.kept_indices))
        _write(out / BITS_FILES[party], _bits_text(res.bits))


def write_reconciled(out: Path, sketch: SketchMessage | None, outcome: ReconcileOutcome):
    if sketch is not None:
        _write(out / SKETCH_FILE, sketch.to_json())
    _write(out / KEY_FILES["a"], _bits_text(outcome.key_a))
    key_b = out / KEY_FILES["b"]
    if outcome.ok:
        _write(key_b, _bits_text(outcome.key_b))
    elif key_b.exists():
        key_b.unlink()
    status = dict(outcome.status(), key_length=len(outcome.key_a))
    _write(out / RECONCILE_FILE, json.dumps(status, indent=2) + "\n")


def write_amplified(out: Path, amp: AmplifyOutcome):
    _write(out / AMPLIFY_FILE, json.dumps(amp.to_dict(), indent=2) + "\n")


def write_report(out: Path, report: pipeline.PipelineReport):
    _write(out / METRICS_FILE, report.metrics.to_json())
    _write(out / NIST_FILE, report.nist.to_json())
    _write(out / REPORT_FILE, report.to_json())


# -- text output --------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _table(rows) -> str:
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {_fmt(v)}" for k, v in rows)


def metrics_table(m: metrics.MetricsReport) -> str:
    return _table([
        ("rho", m.rho), ("kdr", m.kdr), ("I(A;B) bits", m.mi_ab_bits),
        ("I(A;E) bits", m.mi_ae_bits), ("I(B;E) bits", m.mi_be_bits),
        ("capacity bound", m.csk_lower_bits),
    ])


def report_table(report: pipeline.PipelineReport) -> str:
    amp = report.amplification
    head = _table([
        ("aligned probes", report.n_aligned),
        ("key length", report.key_length),
        ("bit yield", report.bit_yield),
        ("reconcile", report.reconcile_status),
        ("effective entropy", amp["effective_entropy_bits"]),
        ("amplification", amp["status"]),
        ("keys match", report.keys_match),
        ("eve kdr", report.eve_kdr),
    ])
    return "\n\n".join([head, metrics_table(report.metrics), report.nist.table(),
                        f"exit code {report.exit_code}"])


def _reconcile_message(outcome: ReconcileOutcome) -> str:
    if outcome.ok:
        return f"reconciled {len(outcome.key_a)} bits"
    return f"reconciliation failed in blocks {list(outcome.failed_blocks)}"


# -- subcommands ----------------------------------------------------------------


def cmd_run(args, cfg, out: Path) -> int:
    run = pipeline.run_pipeline(cfg)
    write_traces(out, run.sim)
    write_quantized(out, *run.quantized)
    write_reconciled(out, run.sketch, run.reconcile)
    write_amplified(out, run.amplification)
    write_report(out, run.report)
    print(report_table(run.report))
    return run.report.exit_code


def cmd_simulate(args, cfg, out: Path) -> int:
    sim = channel.simulate_probing(cfg.sim)
    write_traces(out, sim)
    print(_table([(f"trace_{p}", len(t)) for p, t in zip("abe", sim)]))
    return EXIT_OK


def cmd_quantize(args, cfg, out: Path) -> int:
    qcfg = QuantizerConfig(cfg.epsilon)
    if args.trace:
        res = differential_quantize(_load_trace(args.trace, args.party).rssi, qcfg)
        _write(out / KEPT_FILES[args.party], write_index_list(res.kept_indices))
        _write(out / BITS_FILES[args.party], _bits_text(res.bits))
        print(_table([("samples", res.n_samples), ("bits kept", len(res.bits))]))
        return EXIT_OK
    trace_a = _load_trace(args.trace_a or out / TRACE_FILES["a"], "alice")
    trace_b = _load_trace(args.trace_b or out / TRACE_FILES["b"], "bob")
    aligned = pipeline.pair_traces(trace_a, trace_b)
    res_a, res_b = pipeline.stage_quantize(aligned, cfg.epsilon)
    write_quantized(out, res_a, res_b)
    print(_table([("aligned probes", len(aligned)), ("bits kept by alice", len(res_a.bits)),
                  ("bits kept by bob", len(res_b.bits))]))
    return EXIT_OK


def _published(out: Path, party: str) -> QuantizationResult:
    kept = tuple(read_index_list(_read(out / KEPT_FILES[party])))
    bits = _load_bits(out / BITS_FILES[party])
    if len(bits) != len(kept):
        raise UsageError(f"{BITS_FILES[party]} and {KEPT_FILES[party]} differ in length")
    return QuantizationResult(bits, kept, ())


def _shared(out: Path):
    res_a, res_b = _published(out, "a"), _published(out, "b")
    return pipeline.shared_keys(res_a, res_b, res_a.kept_indices, res_b.kept_indices)


def cmd_reconcile(args, cfg, out: Path) -> int:
    _, k_a, k_b = _shared(out)
    if args.sketch:
        sketch = SketchMessage.from_json(_read(Path(args.sketch)))
    else:
        sketch = pipeline.stage_sketch(k_a, cfg.code, cfg.seed)
    outcome = pipeline.stage_recover(k_a, k_b, sketch, cfg.code)
    write_reconciled(out, sketch, outcome)
    print(_reconcile_message(outcome))
    return EXIT_OK if outcome.ok else EXIT_RECONCILE


def _load_outcome(out: Path) -> ReconcileOutcome:
    status = _load_json(out / RECONCILE_FILE)
    key_a = _load_bits(out / KEY_FILES["a"])
    if status.get("status") == "success":
        return ReconcileOutcome(key_a, _load_bits(out / KEY_FILES["b"]))
    return ReconcileOutcome(key_a, None, tuple(status.get("failed_blocks", ())))


def _load_sketch(out: Path, outcome: ReconcileOutcome, cfg) -> SketchMessage | None:
    if len(outcome.key_a) == 0:
        return None
    sketch = SketchMessage.from_json(_read(out / SKETCH_FILE))
    pipeline.check_sketch_code(sketch, cfg.code)
    return sketch


def cmd_amplify(args, cfg, out: Path) -> int:
    outcome = _load_outcome(out)
    sketch = _load_sketch(out, outcome, cfg)
    amp = pipeline.stage_amplify(outcome, sketch, cfg)
    write_amplified(out, amp)
    print(_table([("effective entropy", amp.effective_entropy_bits), ("status", amp.status),
                  ("keys match", amp.keys_match)]))
    return pipeline.exit_code_for(outcome, amp)


def cmd_evaluate(args, cfg, out: Path) -> int:
    trace_a = _load_trace(args.trace_a or out / TRACE_FILES["a"], "alice")
    trace_b = _load_trace(args.trace_b or out / TRACE_FILES["b"], "bob")
    eve_path = Path(args.trace_e) if args.trace_e else out / TRACE_FILES["e"]
    trace_e = _load_trace(eve_path, "eve") if args.trace_e or eve_path.exists() else None
    aligned = pipeline.pair_traces(trace_a, trace_b)

    staged = all((out / f).exists() for f in (*KEPT_FILES.values(), *BITS_FILES.values(),
                                             RECONCILE_FILE, AMPLIFY_FILE))
    if not staged:
        m = pipeline.stage_metrics(aligned, np.zeros(0, np.uint8), np.zeros(0, np.uint8),
                                   trace_e, cfg.mi_bins)
        _write(out / METRICS_FILE, m.to_json())
        print(metrics_table(m))
        return EXIT_OK

    positions, _, k_b_raw = _shared(out)
    outcome = _load_outcome(out)
    if len(outcome.key_a) != len(positions):
        raise UsageError(f"{KEY_FILES['a']} does not match the published index lists")
    amp = AmplifyOutcome.from_dict(_load_json(out / AMPLIFY_FILE))
    report = pipeline.build_report(cfg, aligned, trace_e, positions, outcome, k_b_raw, amp)
    write_report(out, report)
    print(report_table(report))
    return report.exit_code


COMMANDS = {
    "run": cmd_run,
    "simulate": cmd_simulate,
    "quantize": cmd_quantize,
    "reconcile": cmd_reconcile,
    "amplify": cmd_amplify,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](args, cfg, Path(args.out))
    except channel.ProtocolViolation as exc:
        print(f"lorakey: protocol violation: {exc}", file=sys.stderr)
    except (UsageError, *_USER_ERRORS) as exc:
        print(f"lorakey: error: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
