import numpy as np
import pytest

from weaklift import evaluation as E
from weaklift.errors import ConfigError, ShapeMismatch
from weaklift.nets import Model, ModelConfig

from conftest import random_pose, random_rotation

SMALL = ModelConfig(hidden=16, gen_hidden=8, disc_hidden=8, seed=2)


def test_mpjpe_hand_cases(rng):
    gt = random_pose(rng)
    assert E.mpjpe(gt, gt) == 0
    shifted = gt + [3.0, 0.0, 4.0]
    shifted[0] = 0  # the root stays at the origin
    assert E.mpjpe(shifted, gt) == pytest.approx(5.0)
    p = random_pose(rng)
    assert E.mpjpe(p, gt) == E.mpjpe(gt, p)
    with pytest.raises(ShapeMismatch):
        E.mpjpe(gt, gt[:15])


def test_batched_metrics_match_single(rng):
    p, g = random_pose(rng, 5), random_pose(rng, 5)
    np.testing.assert_allclose(E.mpjpe(p, g), [E.mpjpe(a, b) for a, b in zip(p, g)])
    np.testing.assert_allclose(E.pa_mpjpe(p, g), [E.pa_mpjpe(a, b) for a, b in zip(p, g)])


def test_pa_never_exceeds_mpjpe_on_1000_pairs():
    rng = np.random.default_rng(77)
    gt = random_pose(rng, 1000)
    pred = random_pose(rng, 1000, scale=rng.uniform(50, 600))
    # mix in predictions that are already close to the truth
    pred[:500] = gt[:500] + rng.normal(scale=20, size=(500, 16, 3))
    pred[:, 0] = 0
    violations = np.sum(E.pa_mpjpe(pred, gt) > E.mpjpe(pred, gt) + 1e-9)
    assert violations == 0


def test_similarity_copy_has_zero_pa_error(rng):
    for _ in range(50):
        gt = random_pose(rng)
        r = random_rotation(rng)
        pred = rng.uniform(0.5, 2.0) * gt @ r.T + rng.normal(scale=500, size=3)
        assert E.pa_mpjpe(pred, gt) < 1e-6


def test_mpjpe_invariant_under_shared_rigid_motion(rng):
    p, g = random_pose(rng), random_pose(rng)
    r = random_rotation(rng)
    assert E.mpjpe(p @ r.T, g @ r.T) == pytest.approx(E.mpjpe(p, g), rel=1e-12)
    t = rng.normal(size=3) * 100
    assert E.mpjpe(p + t, g + t) == pytest.approx(E.mpjpe(p, g), rel=1e-12)


@pytest.fixture(scope="module")
def report_inputs():
    from weaklift import data as D
    recs, _ = D.generate_synthetic(D.SynthConfig(n_samples=30, seed=8))
    return Model(SMALL), recs


def test_report_means_are_consistent(report_inputs):
    model, recs = report_inputs
    rep = E.evaluate(model, recs, use_refine=True, input_source="corrupted", seed=3)
    assert rep.mpjpe_mm == pytest.approx(np.mean(rep.per_sample_mpjpe_mm), rel=1e-12)
    assert rep.pa_mpjpe_mm == pytest.approx(np.mean(rep.per_sample_pa_mpjpe_mm), rel=1e-12)
    assert rep.mpjpe_mm == pytest.approx(np.mean(list(rep.per_joint_mpjpe_mm.values())), rel=1e-12)
    assert rep.pa_mpjpe_mm == pytest.approx(np.mean(list(rep.per_joint_pa_mpjpe_mm.values())), rel=1e-12)
    assert all(pa <= m + 1e-9 for pa, m in zip(rep.per_sample_pa_mpjpe_mm, rep.per_sample_mpjpe_mm))
    assert "Pelvis" not in rep.per_joint_mpjpe_mm and len(rep.per_joint_mpjpe_mm) == 15
    assert rep.sample_ids == [r.id for r in recs]


def test_report_is_deterministic_and_round_trips(report_inputs, tmp_path):
    model, recs = report_inputs
    a = E.evaluate(model, recs, input_source="corrupted", seed=4, dataset_tag="t")
    b = E.evaluate(model, recs, input_source="corrupted", seed=4, dataset_tag="t")
    assert a.to_json() == b.to_json()
    a.save(tmp_path / "r.json")
    assert E.EvalReport.load(tmp_path / "r.json") == a
    assert E.evaluate(model, recs, input_source="corrupted", seed=5).to_json() != a.to_json()
    assert "mean" in a.table() and "RWrist" in a.table()


def test_clean_input_has_no_corruption(report_inputs):
    model, recs = report_inputs
    rep = E.evaluate(model, recs)
    assert rep.mean_input_2d_error == 0 and rep.corrupt_sigma == 0
    assert E.evaluate(model, recs, input_source="corrupted").mean_input_2d_error > 0
    with pytest.raises(ConfigError):
        E.evaluate(model, recs, input_source="detector")


def test_eval_requires_paired_data(report_inputs, synth_small):
    model, _ = report_inputs
    with pytest.raises(ConfigError, match="eval requires paired data"):
        E.evaluate(model, synth_small[1])
    with pytest.raises(ConfigError):
        E.evaluate(model, [])


def test_model_id_tracks_parameters():
    a, b = Model(SMALL), Model(SMALL)
    assert E.model_id(a) == E.model_id(b)
    b.params["lifter.exit.b"].data[0] += 1e-9
    assert E.model_id(a) != E.model_id(b)


def test_camera_reprojection_error_zero_for_exact_camera(report_inputs):
    """A model whose camera head is pinned to the truth reprojects exactly."""
    from weaklift import data as D
    model, recs = report_inputs
    arr = D.to_arrays(recs)
    n = len(recs)
    proj = E.project_normalized(arr.x3d.reshape(n, 16, 3) * 1000, arr.intr, arr.offset * 1000)
    np.testing.assert_allclose(proj, arr.x2d.reshape(n, 16, 2), atol=1e-12)
    assert E.camera_reprojection_error(model, recs) > 0
