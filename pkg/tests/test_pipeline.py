import json

import numpy as np
import pytest

from lorakey import pipeline
from lorakey.pipeline import (
    EXIT_ENTROPY,
    EXIT_OK,
    EXIT_RECONCILE,
    AmplifyOutcome,
    ConfigMismatchError,
    PipelineConfig,
    PipelineReport,
    ReconcileOutcome,
    load_pipeline_config,
    run_pipeline,
)
from lorakey.quantizer import AlignmentError


@pytest.fixture(scope="module")
def outdoor_run():
    return run_pipeline(load_pipeline_config("outdoor_urban", seed=1))


def test_outdoor_run_succeeds(outdoor_run):
    rep = outdoor_run.report
    assert rep.exit_code == EXIT_OK
    assert rep.keys_match
    assert rep.reconcile_status == "success"
    assert 0.4 <= rep.eve_kdr <= 0.6
    assert rep.metrics.csk_lower_bits > 0
    assert rep.nist.sequence_length == rep.key_length
    assert rep.bit_yield == pytest.approx(rep.key_length / rep.n_aligned)


def test_report_is_deterministic(outdoor_run):
    again = run_pipeline(load_pipeline_config("outdoor_urban", seed=1))
    assert again.report.to_json() == outdoor_run.report.to_json()


def test_report_keys(outdoor_run):
    d = json.loads(outdoor_run.report.to_json())
    assert {"config_echo", "bit_yield", "metrics", "nist", "reconcile_status",
            "keys_match", "eve_kdr", "exit_code"} <= set(d)
    assert d["config_echo"]["code"] == "bch15_t3"
    assert d["config_echo"]["sim"]["seed"] == 1


def test_noise_inflation_fails_reconciliation():
    cfg = load_pipeline_config("outdoor_urban", seed=1, device_noise_sigma_db=(3.0, 3.0, 1.0))
    rep = run_pipeline(cfg).report
    assert rep.exit_code == EXIT_RECONCILE
    assert rep.reconcile["status"] == "failure"
    assert rep.reconcile["failed_blocks"]
    assert not rep.keys_match


def test_static_chamber_refuses():
    rep = run_pipeline(load_pipeline_config("static_chamber", seed=0)).report
    assert rep.exit_code == EXIT_ENTROPY
    assert rep.amplification["status"] == "refused"


def test_short_run_refuses_amplification():
    cfg = load_pipeline_config("outdoor_urban", seed=2, n_probes=600)
    rep = run_pipeline(cfg).report
    assert rep.amplification["effective_entropy_bits"] < 128
    assert rep.exit_code in (EXIT_ENTROPY, EXIT_RECONCILE)
    assert not rep.keys_match


def test_invariant_keys_match_needs_success(outdoor_run):
    d = dict(vars(outdoor_run.report))
    d["reconcile"] = {"status": "failure", "failed_blocks": [0]}
    with pytest.raises(AssertionError):
        PipelineReport(**d)


def test_exit_code_mapping():
    ok = ReconcileOutcome(np.zeros(3), np.zeros(3))
    bad = ReconcileOutcome(np.zeros(3), None, (1,))
    amp = AmplifyOutcome(200, 128, "amplified", "t", "t")
    assert pipeline.exit_code_for(ok, amp) == EXIT_OK
    assert pipeline.exit_code_for(ok, AmplifyOutcome(10, 128, "refused")) == EXIT_ENTROPY
    assert pipeline.exit_code_for(bad, AmplifyOutcome(10, 128, "skipped")) == EXIT_RECONCILE
    assert pipeline.exit_code_for(ok, AmplifyOutcome(200, 128, "amplified", "a", "b")) == EXIT_RECONCILE


def test_sketch_code_mismatch(outdoor_run):
    with pytest.raises(ConfigMismatchError):
        pipeline.check_sketch_code(outdoor_run.sketch, "bch31_t3")


def test_published_lists_checked(outdoor_run):
    res_a, res_b = outdoor_run.quantized
    with pytest.raises(AlignmentError):
        pipeline.shared_keys(res_a, res_b, res_a.kept_indices[1:], res_b.kept_indices)


def test_eve_bits_rule():
    from lorakey.core import AlignedProbes, ProbeRecord, RssiTrace

    al = AlignedProbes(np.array([0, 1, 2, 4]), np.zeros(4), np.zeros(4))
    eve = RssiTrace("e", [ProbeRecord(i, i, v, 1) for i, v in [(0, -70), (1, -60), (2, -65), (4, -64)]])
    mask, guess = pipeline.eve_bits(al, eve, [1, 2, 3])
    assert mask.tolist() == [True, True, True]
    assert guess.tolist() == [1, 0, 1]


def test_config_overrides_route_to_sim():
    cfg = PipelineConfig().replace(epsilon=3, n_probes=100)
    assert cfg.epsilon == 3 and cfg.sim.n_probes == 100


def test_config_file_with_pipeline_keys(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("n_probes = 300\nepsilon = 1\ncode = bch31_t3\n")
    cfg = load_pipeline_config(str(path))
    assert (cfg.sim.n_probes, cfg.epsilon, cfg.code) == (300, 1, "bch31_t3")


@pytest.mark.parametrize("bad", [dict(alpha=0.0), dict(code="nope"), dict(epsilon=-1)])
def test_invalid_pipeline_config(bad):
    with pytest.raises((ValueError, KeyError)):
        PipelineConfig(**bad)
