import numpy as np
import pytest
from test_trajectory import make_sample

from handflow import metrics, tokens
from handflow.tokens import (
    NoMotionOnset,
    ObjectTrack,
    TrajectoryTokenBundle,
    bundle_to_record,
    file_provider,
    infer_stages,
    noisy_provider,
    oracle_provider,
    validate_bundle,
    write_bundles,
)


def test_oracle_provider_matches_gt():
    rng = np.random.default_rng(0)
    s = make_sample(rng)
    b = oracle_provider(s)
    assert b.contact.timestamp == s.waypoints.contact.timestamp
    np.testing.assert_array_equal(b.contact.left.position, s.waypoints.contact.left.position)
    assert validate_bundle(b) == []
    b2 = oracle_provider(s)
    np.testing.assert_array_equal(b.act, b2.act)  # idempotent


def test_noisy_provider_zero_sigma_equals_oracle():
    rng = np.random.default_rng(1)
    s = make_sample(rng)
    a = oracle_provider(s)
    b = noisy_provider(s, sigma_pos=0.0, sigma_time=0.0, sigma_rot=0.0, seed=3)
    np.testing.assert_array_equal(a.end.left.position, b.end.left.position)
    np.testing.assert_array_equal(a.end.right.rotation, b.end.right.rotation)
    assert a.contact.timestamp == b.contact.timestamp


def test_noisy_provider_sigma_converges_to_oracle():
    rng = np.random.default_rng(2)
    s = make_sample(rng)
    a = oracle_provider(s)
    b = noisy_provider(s, sigma_pos=1e-9, sigma_time=1e-9, sigma_rot=1e-9, seed=5)
    np.testing.assert_allclose(a.contact.left.position, b.contact.left.position, atol=1e-7)
    np.testing.assert_allclose(a.contact.left.rotation, b.contact.left.rotation, atol=1e-7)


def test_noisy_provider_invariants_all_seeds():
    rng = np.random.default_rng(3)
    s = make_sample(rng)
    for seed in range(50):
        b = noisy_provider(s, sigma_pos=0.1, sigma_time=0.5, sigma_rot=20.0, seed=seed)
        assert validate_bundle(b) == []
        assert b.start.timestamp == 0.0
        assert b.contact.timestamp <= b.end.timestamp


def test_noisy_provider_contact_error_matches_monte_carlo():
    # independent oracle: expected contact_distance under isotropic position
    # noise, estimated by sampling the noise model directly
    rng = np.random.default_rng(4)
    s = make_sample(rng)
    sigma = 0.05
    n = 10_000
    vals = [
        metrics.contact_distance(
            noisy_provider(s, sigma_pos=sigma, seed=seed).contact, s
        )
        for seed in range(n)
    ]
    got = float(np.mean(vals))

    mc_rng = np.random.default_rng(998877)
    draws = np.linalg.norm(mc_rng.normal(scale=sigma, size=(n, 2, 3)), axis=-1).mean(axis=1)
    expected = float(draws.mean())
    assert abs(got - expected) / expected < 0.05


def test_file_provider_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    bundles = {}
    for i in range(5):
        s = make_sample(rng, n_future=8)
        bundles[f"s{i}"] = oracle_provider(s)
    path = tmp_path / "pred.jsonl"
    write_bundles(path, bundles)
    loaded, violations = file_provider(path)
    assert violations == []
    assert set(loaded) == set(bundles)
    for sid in bundles:
        np.testing.assert_allclose(
            loaded[sid].contact.left.position, bundles[sid].contact.left.position
        )
        np.testing.assert_allclose(loaded[sid].act, bundles[sid].act)


def test_file_provider_reports_malformed_line(tmp_path):
    rng = np.random.default_rng(6)
    s = make_sample(rng)
    rec = bundle_to_record("ok", oracle_provider(s))
    path = tmp_path / "pred.jsonl"
    import json

    bad = json.dumps(rec).replace('"t":', '"t": "oops", "x":', 1)
    path.write_text(json.dumps(rec) + "\n" + bad + "\n")
    loaded, violations = file_provider(path)
    assert "ok" in loaded
    assert len(violations) == 1 and "line 2" in violations[0]


def test_file_provider_rejects_contact_after_end(tmp_path):
    import dataclasses
    import json

    rng = np.random.default_rng(7)
    s = make_sample(rng)
    b = oracle_provider(s)
    bad = TrajectoryTokenBundle(
        act=b.act,
        start=b.start,
        contact=dataclasses.replace(b.contact, timestamp=b.end.timestamp + 1.0),
        end=b.end,
    )
    path = tmp_path / "pred.jsonl"
    path.write_text(json.dumps(bundle_to_record("bad", bad)) + "\n")
    loaded, violations = file_provider(path)
    assert loaded == {}
    assert len(violations) == 1 and "CONTACT" in violations[0]


def test_file_provider_unknown_sample_id(tmp_path):
    rng = np.random.default_rng(8)
    s = make_sample(rng)
    write_bundles(tmp_path / "p.jsonl", {"mystery": oracle_provider(s)})
    loaded, violations = file_provider(tmp_path / "p.jsonl", known_sample_ids={"s0"})
    assert loaded == {}
    assert len(violations) == 1 and "unknown sample_id" in violations[0]


def _track(move_at=3.0, end=4.0, dist=0.5, visible=True, speed=0.3):
    """10 FPS track: static at [0,0,dist], moving along x from move_at on."""
    ts = np.round(np.arange(0.0, end + 1e-9, 0.1), 6)
    pos = np.zeros((len(ts), 3))
    pos[:, 2] = dist
    moving = ts >= move_at - 1e-9
    pos[moving, 0] = speed * (ts[moving] - move_at + 0.1)
    vis = np.full(len(ts), visible)
    return ObjectTrack(ts, pos, vis)


def test_infer_stages_hand_constructed_case():
    stages = infer_stages(_track(move_at=3.0, end=4.0))
    assert stages.manipulation[0] == pytest.approx(3.0, abs=1e-9)
    assert stages.approach == pytest.approx((1.0, 2.5), abs=1e-9)


def test_infer_stages_static_track_raises():
    ts = np.round(np.arange(0.0, 2.0, 0.1), 6)
    track = ObjectTrack(ts, np.tile([0.1, 0.0, 0.5], (len(ts), 1)), np.ones(len(ts), bool))
    with pytest.raises(NoMotionOnset):
        infer_stages(track)


def test_infer_stages_distance_gate_drops_approach():
    stages = infer_stages(_track(move_at=3.0, end=4.0, dist=2.0))
    assert stages.approach is None
    assert stages.manipulation[0] == pytest.approx(3.0, abs=1e-9)


def test_infer_stages_visibility_gate_drops_approach():
    stages = infer_stages(_track(move_at=3.0, end=4.0, visible=False))
    assert stages.approach is None


def test_infer_stages_translation_invariance():
    base = infer_stages(_track(move_at=3.0, end=4.0))
    for c in (5.0, 42.3, 0.7):
        ts = np.round(np.arange(0.0, 4.0 + 1e-9, 0.1), 6) + c
        pos = _track(move_at=3.0, end=4.0).positions
        shifted = infer_stages(ObjectTrack(ts, pos, np.ones(len(ts), bool)))
        assert shifted.manipulation[0] == pytest.approx(base.manipulation[0] + c, abs=1e-9)
        assert shifted.approach[0] == pytest.approx(base.approach[0] + c, abs=1e-9)
        assert shifted.approach[1] == pytest.approx(base.approach[1] + c, abs=1e-9)


def test_infer_stages_first_onset_wins():
    # two motion bursts; the first one defines manipulation onset
    ts = np.round(np.arange(0.0, 6.0, 0.1), 6)
    pos = np.zeros((len(ts), 3))
    pos[:, 2] = 0.5
    pos[(ts >= 2.0) & (ts < 2.5), 0] = 0.2
    pos[ts >= 4.0, 1] = 0.3
    stages = infer_stages(ObjectTrack(ts, pos, np.ones(len(ts), bool)))
    assert stages.manipulation[0] == pytest.approx(2.0, abs=1e-9)
