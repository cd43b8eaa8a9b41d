"""End-to-end key generation: probe, quantize, reconcile, amplify, evaluate.

Each stage is a plain function over in-memory values so the CLI can run
them one at a time from files or all at once with identical results.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import bch, channel, metrics, nist
from .core import AlignedProbes, RssiTrace, align_traces
from .quantizer import (
    AlignmentError,
    QuantizationResult,
    QuantizerConfig,
    common_kept,
    differential_quantize,
    select_bits,
)
from .sketch import (
    DEFAULT_KEY_BITS,
    EntropyBudgetError,
    ReconcileFailure,
    SketchMessage,
    amplify,
    confirmation_tag,
    effective_entropy,
    make_sketch,
    recover_key,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RECONCILE = 2
EXIT_ENTROPY = 3

PIPELINE_KEYS = ("epsilon", "code", "alpha", "key_bits", "mi_bins")
# tags mixed into the run seed for the sketch's codeword draws
_SKETCH_STREAM = 0x5EC5


class ConfigMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    sim: channel.SimConfig = field(default_factory=channel.SimConfig)
    epsilon: int = 2
    code: str = "bch15_t3"
    alpha: float = nist.DEFAULT_ALPHA
    key_bits: int = DEFAULT_KEY_BITS
    mi_bins: int = metrics.DEFAULT_MI_BINS

    def __post_init__(self):
        QuantizerConfig(self.epsilon)
        bch.get_code(self.code)
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.mi_bins < 2:
            raise ValueError("mi_bins must be at least 2")

    @property
    def seed(self) -> int:
        return self.sim.seed

    def replace(self, **changes) -> "PipelineConfig":
        sim_changes = {k: changes.pop(k) for k in list(changes) if k not in PIPELINE_KEYS}
        sim = self.sim.replace(**sim_changes) if sim_changes else self.sim
        return dataclasses.replace(self, sim=sim, **changes)

    def echo(self) -> dict:
        out = {"sim": self.sim.to_dict()}
        out.update({k: getattr(self, k) for k in PIPELINE_KEYS})
        return out


def load_pipeline_config(path_or_preset: str, **overrides) -> PipelineConfig:
    """Read a preset name or key=value file; pipeline keys may sit beside sim keys."""
    if path_or_preset in channel.PRESET_NAMES:
        from importlib import resources

        text = resources.files("lorakey.presets").joinpath(f"{path_or_preset}.conf").read_text()
    else:
        try:
            with open(path_or_preset) as fh:
                text = fh.read()
        except OSError as exc:
            raise channel.SimConfigError(f"cannot read config {path_or_preset}: {exc}") from exc
    values = channel.parse_config_text(text)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    values.update(overrides)
    pipe = {k: values.pop(k) for k in PIPELINE_KEYS if k in values}
    return PipelineConfig(sim=channel.config_from_mapping(values), **pipe)


# -- stages -----------------------------------------------------------------


def pair_traces(trace_a: RssiTrace, trace_b: RssiTrace) -> AlignedProbes:
    """Align Alice's and Bob's traces, enforcing same-carrier pairs."""
    freq_a = {r.seq_index: r.freq_hz for r in trace_a.records}
    bad = [r.seq_index for r in trace_b.records
           if r.seq_index in freq_a and freq_a[r.seq_index] != r.freq_hz]
    if bad:
        raise channel.ProtocolViolation(bad)
    return align_traces(trace_a, trace_b)


def stage_quantize(aligned: AlignedProbes, epsilon: int) -> tuple[QuantizationResult, QuantizationResult]:
    cfg = QuantizerConfig(epsilon)
    return differential_quantize(aligned.x_a, cfg), differential_quantize(aligned.x_b, cfg)


def shared_keys(res_a: QuantizationResult, res_b: QuantizationResult, kept_a, kept_b):
    """Each party keeps its own bits at the positions both published."""
    if tuple(kept_a) != res_a.kept_indices or tuple(kept_b) != res_b.kept_indices:
        raise AlignmentError("published index lists do not match the local quantization")
    positions = common_kept(kept_a, kept_b)
    return positions, select_bits(res_a, positions), select_bits(res_b, positions)


def sketch_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([_SKETCH_STREAM, seed])


def stage_sketch(k_a: np.ndarray, code_name: str, seed: int) -> SketchMessage | None:
    """Alice's sketch, or None when no bits survived quantization."""
    if len(k_a) == 0:
        return None
    return make_sketch(k_a, bch.get_code(code_name), sketch_rng(seed))


def check_sketch_code(sketch: SketchMessage, code_name: str):
    if bch.PRESET_ALIASES.get(code_name, code_name) != sketch.code_id:
        raise ConfigMismatchError(
            f"sketch was built with {sketch.code_id} but --code is {code_name}"
        )


@dataclass(frozen=True)
class ReconcileOutcome:
    key_a: np.ndarray
    key_b: np.ndarray | None
    failed_blocks: tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return self.key_b is not None

    def status(self) -> dict:
        if self.ok:
            return {"status": "success"}
        return {"status": "failure", "failed_blocks": list(self.failed_blocks)}


def stage_recover(k_a, k_b, sketch: SketchMessage | None, code_name: str) -> ReconcileOutcome:
    if sketch is None:
        # empty key: nothing to reconcile, amplification will refuse
        return ReconcileOutcome(np.asarray(k_a), np.asarray(k_b))
    check_sketch_code(sketch, code_name)
    try:
        rec = recover_key(k_b, sketch, bch.get_code(code_name))
    except ReconcileFailure as exc:
        return ReconcileOutcome(np.asarray(k_a), None, exc.failed_blocks)
    return ReconcileOutcome(np.asarray(k_a), rec.bits)


def session_salt(sketch: SketchMessage) -> bytes:
    """Public, per-session salt both parties derive from the sketch message."""
    return hashlib.sha256(sketch.to_json().encode()).digest()


@dataclass(frozen=True)
class AmplifyOutcome:
    effective_entropy_bits: int
    key_bits: int
    status: str  # amplified | refused | skipped
    tag_a: str | None = None
    tag_b: str | None = None

    @property
    def keys_match(self) -> bool:
        return self.status == "amplified" and self.tag_a == self.tag_b

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "key_bits": self.key_bits,
            "effective_entropy_bits": self.effective_entropy_bits,
            "tag_a": self.tag_a,
            "tag_b": self.tag_b,
            "keys_match": self.keys_match,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AmplifyOutcome":
        return cls(obj["effective_entropy_bits"], obj["key_bits"], obj["status"],
                   obj.get("tag_a"), obj.get("tag_b"))


def stage_amplify(outcome: ReconcileOutcome, sketch: SketchMessage | None, cfg: PipelineConfig) -> AmplifyOutcome:
    code = bch.get_code(cfg.code)
    budget = 0 if sketch is None else effective_entropy(len(outcome.key_a), sketch, code)
    if not outcome.ok:
        return AmplifyOutcome(budget, cfg.key_bits, "skipped")
    if budget < cfg.key_bits:
        return AmplifyOutcome(budget, cfg.key_bits, "refused")
    salt = session_salt(sketch)
    final_a = amplify(outcome.key_a, cfg.key_bits, salt)
    final_b = amplify(outcome.key_b, cfg.key_bits, salt)
    return AmplifyOutcome(
        budget, cfg.key_bits, "amplified",
        confirmation_tag(final_a.bits), confirmation_tag(final_b.bits),
    )


def eve_bits(aligned: AlignedProbes, trace_e: RssiTrace, positions) -> tuple[np.ndarray, np.ndarray]:
    """Eve's best guess of each public position's bit from her own trace.

    Returns (mask over ``positions`` Eve could evaluate, her bits there).
    """
    lookup = dict(zip(trace_e.seq_indices.tolist(), trace_e.rssi.tolist()))
    positions = np.asarray(positions, dtype=np.int64)
    mask = np.zeros(len(positions), dtype=bool)
    bits = []
    for j, i in enumerate(positions):
        before, after = aligned.indices[i - 1], aligned.indices[i]
        if before in lookup and after in lookup:
            mask[j] = True
            bits.append(1 if lookup[after] > lookup[before] else 0)
    return mask, np.array(bits, dtype=np.uint8)


def eve_series(aligned: AlignedProbes, trace_e: RssiTrace) -> tuple[np.ndarray, np.ndarray]:
    """Mask of aligned probes Eve also observed, and her RSSI there."""
    common, ia, ie = np.intersect1d(aligned.indices, trace_e.seq_indices, return_indices=True)
    mask = np.zeros(len(aligned), dtype=bool)
    mask[ia] = True
    return mask, trace_e.rssi[ie]


def stage_metrics(aligned: AlignedProbes, k_a, k_b, trace_e: RssiTrace | None, bins: int) -> metrics.MetricsReport:
    rho = metrics.pearson_rho(aligned.x_a, aligned.x_b)
    kdr = metrics.kdr(k_a, k_b) if len(k_a) else None
    if trace_e is None:
        i_ab = metrics.mi_plugin(aligned.x_a, aligned.x_b, bins)
        return metrics.MetricsReport(rho, kdr, i_ab, None, None, None)
    # MI terms share one sample set: the probes Eve also heard
    mask, x_e = eve_series(aligned, trace_e)
    x_a, x_b = aligned.x_a[mask], aligned.x_b[mask]
    i_ab = metrics.mi_plugin(x_a, x_b, bins)
    i_ae = metrics.mi_plugin(x_a, x_e, bins)
    i_be = metrics.mi_plugin(x_b, x_e, bins)
    return metrics.MetricsReport(rho, kdr, i_ab, i_ae, i_be, i_ab - min(i_ae, i_be))


@dataclass(frozen=True)
class PipelineReport:
    config_echo: dict
    n_aligned: int
    key_length: int
    bit_yield: float
    metrics: metrics.MetricsReport
    nist: nist.NistReport
    reconcile: dict
    amplification: dict
    keys_match: bool
    eve_kdr: float | None
    exit_code: int

    def __post_init__(self):
        if self.keys_match and self.reconcile["status"] != "success":
            raise AssertionError("keys cannot match after a failed reconciliation")

    @property
    def reconcile_status(self) -> str:
        return self.reconcile["status"]

    def to_dict(self) -> dict:
        return {
            "config_echo": self.config_echo,
            "n_aligned": self.n_aligned,
            "key_length": self.key_length,
            "bit_yield": self.bit_yield,
            "metrics": self.metrics.to_dict(),
            "nist": self.nist.to_dict(),
            "reconcile_status": self.reconcile,
            "amplification": self.amplification,
            "keys_match": self.keys_match,
            "eve_kdr": self.eve_kdr,
            "exit_code": self.exit_code,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def exit_code_for(outcome: ReconcileOutcome, amp: AmplifyOutcome) -> int:
    if not outcome.ok:
        return EXIT_RECONCILE
    if amp.status == "refused":
        return EXIT_ENTROPY
    return EXIT_OK if amp.keys_match else EXIT_RECONCILE


def build_report(cfg: PipelineConfig, aligned: AlignedProbes, trace_e: RssiTrace | None,
                 positions, outcome: ReconcileOutcome, k_b_raw, amp: AmplifyOutcome) -> PipelineReport:
    k_a = outcome.key_a
    eve_kdr = None
    if trace_e is not None and len(positions):
        mask, guess = eve_bits(aligned, trace_e, positions)
        if mask.any():
            eve_kdr = metrics.kdr(k_a[mask], guess)
    return PipelineReport(
        config_echo=cfg.echo(),
        n_aligned=len(aligned),
        key_length=len(k_a),
        bit_yield=len(k_a) / len(aligned) if len(aligned) else 0.0,
        metrics=stage_metrics(aligned, k_a, k_b_raw, trace_e, cfg.mi_bins),
        nist=nist.run_suite(k_a, cfg.alpha),
        reconcile=outcome.status(),
        amplification=amp.to_dict(),
        keys_match=amp.keys_match,
        eve_kdr=eve_kdr,
        exit_code=exit_code_for(outcome, amp),
    )


@dataclass(frozen=True)
class PipelineRun:
    """Everything a full run produces, for writing out or inspection."""

    report: PipelineReport
    sim: channel.SimulationResult
    aligned: AlignedProbes
    quantized: tuple[QuantizationResult, QuantizationResult]
    sketch: SketchMessage | None
    reconcile: ReconcileOutcome
    amplification: AmplifyOutcome


def run_pipeline(cfg: PipelineConfig) -> PipelineRun:
    sim = channel.simulate_probing(cfg.sim)
    aligned = channel.pair_uplink_ack(sim.events)
    from_traces = pair_traces(sim.trace_a, sim.trace_b)
    if not all(np.array_equal(getattr(aligned, f), getattr(from_traces, f))
               for f in ("indices", "x_a", "x_b")):
        raise AlignmentError("event pairing and trace alignment disagree")
    res_a, res_b = stage_quantize(aligned, cfg.epsilon)
    positions, k_a, k_b = shared_keys(res_a, res_b, res_a.kept_indices, res_b.kept_indices)
    sketch = stage_sketch(k_a, cfg.code, cfg.seed)
    outcome = stage_recover(k_a, k_b, sketch, cfg.code)
    amp = stage_amplify(outcome, sketch, cfg)
    report = build_report(cfg, aligned, sim.trace_e, positions, outcome, k_b, amp)
    return PipelineRun(report, sim, aligned, (res_a, res_b), sketch, outcome, amp)
