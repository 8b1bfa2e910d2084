import math

import numpy as np
import pytest

from beliefnav.belief import DEFAULT_EPSILON
from beliefnav.failures import default_taxonomy
from beliefnav.predictor import PredictorConfig, ingest_frame, new_state
from beliefnav.sensor_sim import (
    Hazard,
    RngStream,
    SensorFidelity,
    SimEnvironment,
    frames_for_traversal,
    ground_truth_matrix,
    intervention_for_failure,
    load_environment,
    save_environment,
)
from beliefnav.topo_map import Edge, TopoMap

TAX = default_taxonomy()
EDGE = Edge(0, 1, 10.0)
TOPO = TopoMap((0, 1), (EDGE,))

CLEAN = SensorFidelity(tpr=1.0, fpr=0.0, global_noise_sd=0.0, frame_rate=5.0)


def test_frame_count_and_base_probs():
    frames = frames_for_traversal([], CLEAN, EDGE, RngStream(0))
    assert len(frames) == math.ceil(10.0 * 5.0)
    for f in frames:
        assert f.global_probs == (DEFAULT_EPSILON, DEFAULT_EPSILON)
        assert f.detections == ()


def test_hazard_visible_frames_deterministic():
    # 50 frames at midpoints u=(k+0.5)/50; visibility [0.3, 0.5] covers
    # frames 15..24 inclusive
    h = Hazard(EDGE.key, 0, position=0.5, contribution=0.8, visibility=0.2)
    frames = frames_for_traversal([h], CLEAN, EDGE, RngStream(0))
    with_det = [f.frame_index for f in frames if f.detections]
    assert with_det == list(range(15, 25))
    for f in frames:
        if f.detections:
            (d,) = f.detections
            assert d.position == (0.5, 0.0)
            assert f.global_probs[0] == pytest.approx(DEFAULT_EPSILON + 0.8)
            assert f.global_probs[1] == pytest.approx(DEFAULT_EPSILON)


def test_global_probs_clipped():
    h = Hazard(EDGE.key, 0, position=0.5, contribution=1.0, visibility=1.0)
    frames = frames_for_traversal([h], CLEAN, EDGE, RngStream(0))
    assert max(f.global_probs[0] for f in frames) <= 1.0


def test_tpr_monte_carlo_matches_binomial_mean():
    # 10 visible frames, tpr=0.8 -> mean detections per traversal = 8 +- 0.1
    h = Hazard(EDGE.key, 0, position=0.5, contribution=0.5, visibility=0.2)
    fid = SensorFidelity(tpr=0.8, fpr=0.0, global_noise_sd=0.0, frame_rate=5.0)
    rng = RngStream(123)
    total = 0
    trials = 10_000
    for k in range(trials):
        frames = frames_for_traversal([h], fid, EDGE, rng.substream(k))
        total += sum(len(f.detections) for f in frames)
    assert total / trials == pytest.approx(8.0, abs=0.1)


def test_false_detection_rate_matches_poisson():
    fid = SensorFidelity(tpr=1.0, fpr=0.3, global_noise_sd=0.0, frame_rate=5.0)
    rng = RngStream(77)
    counts = []
    for k in range(200):
        frames = frames_for_traversal([], fid, EDGE, rng.substream(k))
        counts.extend(len(f.detections) for f in frames)
    n = len(counts)
    se = math.sqrt(0.3 / n)
    assert np.mean(counts) == pytest.approx(0.3, abs=3 * se)


def test_streams_are_reproducible_and_keyed():
    h = Hazard(EDGE.key, 0, position=0.5, contribution=0.5, visibility=0.3)
    fid = SensorFidelity(tpr=0.7, fpr=0.2, global_noise_sd=0.1, frame_rate=5.0)
    a = frames_for_traversal([h], fid, EDGE, RngStream(9).substream(3, 0, 1))
    b = frames_for_traversal([h], fid, EDGE, RngStream(9).substream(3, 0, 1))
    c = frames_for_traversal([h], fid, EDGE, RngStream(9).substream(3, 0, 2))
    assert a == b
    assert a != c


def test_pipeline_triggers_exactly_on_hazard_edges():
    # perfect fidelity: triggers on the hazard edge, never on a clean edge
    h = Hazard(EDGE.key, 0, position=0.6, contribution=0.6, visibility=0.4)
    cfg = PredictorConfig()
    for hazards, expect in [([h], True), ([], False)]:
        frames = frames_for_traversal(hazards, CLEAN, EDGE, RngStream(1))
        state = new_state(TAX.num_failure_classes)
        fired = False
        for f in frames:
            state, est = ingest_frame(state, f, cfg)
            fired = fired or est.triggered
        assert fired == expect


def test_fidelity_sweep_over_generated_environment():
    # perfect fidelity: the consensus pipeline fires on exactly the
    # hazardous edges of a whole generated environment
    from beliefnav.envgen import EnvParams, generate_environment

    params = EnvParams(nodes=10, density=0.15, hazards=5, strength_min=0.5)
    env = generate_environment(params, CLEAN, seed=31)
    hazardous = {h.edge for h in env.hazards}
    cfg = PredictorConfig()
    for edge in env.topo.edges:
        frames = frames_for_traversal(
            env.hazards_on(edge.key), env.fidelity, edge, RngStream(0).substream(7)
        )
        state = new_state(TAX.num_failure_classes)
        fired = False
        for f in frames:
            state, est = ingest_frame(state, f, cfg)
            fired = fired or est.triggered
        assert fired == (edge.key in hazardous), edge.key


def test_failure_class_mass_capped_at_one():
    hazards = [
        Hazard(EDGE.key, 0, position=0.5, contribution=0.9, visibility=1.0),
        Hazard(EDGE.key, 1, position=0.5, contribution=0.9, visibility=1.0),
    ]
    frames = frames_for_traversal(hazards, CLEAN, EDGE, RngStream(0))
    for f in frames:
        assert sum(f.global_probs) <= 1.0 + 1e-12


def test_hazard_edge_mismatch_rejected():
    h = Hazard((5, 6), 0, 0.5, 0.5, 0.2)
    with pytest.raises(ValueError, match="does not belong"):
        frames_for_traversal([h], CLEAN, EDGE, RngStream(0))


def test_intervention_wrapper():
    obs = intervention_for_failure((0, 1), 1)
    assert obs.edge == (0, 1)
    assert obs.class_index == 1
    with pytest.raises(ValueError):
        intervention_for_failure((0, 1), 2)  # success is not a failure class


def test_ground_truth_composition():
    hazards = [
        Hazard(EDGE.key, 0, 0.3, 0.5, 0.2),
        Hazard(EDGE.key, 0, 0.7, 0.4, 0.2),
        Hazard(EDGE.key, 1, 0.5, 0.2, 0.2),
    ]
    gt = ground_truth_matrix(TOPO, hazards)
    assert gt[0, 0] == pytest.approx(1 - 0.5 * 0.6)  # 1 - (1-.5)(1-.4)
    assert gt[0, 1] == pytest.approx(0.2)
    assert gt[0].sum() == pytest.approx(1.0)


def test_ground_truth_rescales_when_overloaded():
    hazards = [
        Hazard(EDGE.key, 0, 0.3, 0.95, 0.2),
        Hazard(EDGE.key, 1, 0.5, 0.9, 0.2),
    ]
    gt = ground_truth_matrix(TOPO, hazards)
    assert gt[0, 2] == pytest.approx(1e-3)
    assert gt[0].sum() == pytest.approx(1.0)
    assert gt[0, 0] / gt[0, 1] == pytest.approx(0.95 / 0.9)


def test_environment_file_round_trip(tmp_path):
    env = SimEnvironment(
        TOPO,
        (Hazard(EDGE.key, 0, 0.5, 0.6, 0.3),),
        SensorFidelity(0.9, 0.1, 0.02, 5.0),
        TAX,
    )
    path = tmp_path / "env.json"
    save_environment(env, path)
    loaded = load_environment(path)
    assert loaded.topo == env.topo
    assert loaded.hazards == env.hazards
    assert loaded.fidelity == env.fidelity
    path2 = tmp_path / "env2.json"
    save_environment(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_environment_validation(tmp_path):
    base = SimEnvironment(TOPO, (), SensorFidelity(), TAX).to_json_dict()
    bad = dict(base)
    bad["hazards"] = [{"src": 0, "dst": 1, "class": "nope", "pos": 0.5, "p": 0.5, "vis": 0.2}]
    with pytest.raises(ValueError, match="unknown class"):
        p = tmp_path / "bad.json"
        import json

        p.write_text(json.dumps(bad))
        load_environment(p)
    bad["hazards"] = [{"src": 0, "dst": 9, "class": "CF", "pos": 0.5, "p": 0.5, "vis": 0.2}]
    with pytest.raises(ValueError, match="no edge"):
        p = tmp_path / "bad2.json"
        import json

        p.write_text(json.dumps(bad))
        load_environment(p)


def test_hazard_field_ranges():
    with pytest.raises(ValueError):
        Hazard(EDGE.key, 0, position=1.5, contribution=0.5, visibility=0.2)
    with pytest.raises(ValueError):
        Hazard(EDGE.key, 0, position=0.5, contribution=0.0, visibility=0.2)
    with pytest.raises(ValueError):
        SensorFidelity(tpr=1.2)
