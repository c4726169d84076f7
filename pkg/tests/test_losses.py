import warnings

import numpy as np
import pytest

from weaklift import autograd as ag
from weaklift import data as D
from weaklift import losses as L
from weaklift.autograd import Tensor, gradcheck
from weaklift.errors import BehindCamera, ComponentKindMismatch, EmptyPool, MissingCameraGroundTruth, ShapeMismatch
from weaklift.losses import LossWeights

from conftest import random_pose


def test_default_weights():
    w = LossWeights()
    assert (w.cam, w.reproj_paired, w.reproj_weak, w.pose3d) == (0.01, 0.5, 0.2, 1.0)
    assert w.ref_paired == 1.0 and w.ref_weak == 1.0
    with pytest.raises(ValueError):
        LossWeights(cam=-1)


def test_normalize_confidence_cases():
    np.testing.assert_allclose(L.normalize_confidence([0.5, 0.5]), [0.5, 0.5])
    np.testing.assert_allclose(L.normalize_confidence([1, 0, 1]), [0.5, 0, 0.5])
    for k in (0.01, 1.0, 37.0):
        np.testing.assert_allclose(L.normalize_confidence(np.full(16, k)), np.full(16, 1 / 16))
    with pytest.warns(L.AllZeroConfidence):
        np.testing.assert_allclose(L.normalize_confidence(np.zeros((2, 4))), np.full((2, 4), 0.25))
    with pytest.raises(ValueError):
        L.normalize_confidence([1, -1])


def test_refinement_loss_hand_values(rng):
    assert L.refinement_loss([[0.3, 0.4]], [[0.0, 0.0]], [[1.0]]).item() == pytest.approx(0.25)
    x = rng.normal(size=(3, 32))
    c = L.normalize_confidence(rng.uniform(0.1, 1, size=(3, 16)))
    assert L.refinement_loss(x, x, c).item() == 0
    # halving one joint's weight halves its contribution
    y = x.copy()
    y[0, 4:6] += 0.1
    c2 = c.copy()
    c2[0, 2] /= 2
    assert L.refinement_loss(x, y, c2).item() == pytest.approx(L.refinement_loss(x, y, c).item() / 2)


def _paired_internal(n=8, seed=2):
    paired, _ = D.generate_synthetic(D.SynthConfig(n_samples=n, seed=seed))
    return D.to_arrays(paired)


def test_reprojection_exact_on_ground_truth():
    a = _paired_internal()
    assert L.reprojection_loss(a.x3d, a.intr, a.offset, a.x2d).item() < 1e-12


def test_reprojection_gradient_wrt_focal():
    a = _paired_internal()
    target = a.x2d + np.random.default_rng(0).normal(scale=0.01, size=a.x2d.shape)
    err = gradcheck(lambda k: L.reprojection_loss(a.x3d, k, a.offset, target), [a.intr])
    assert err < 1e-4
    err = gradcheck(lambda x, t: L.reprojection_loss(x, a.intr, t, target), [a.x3d, a.offset])
    assert err < 1e-4


def test_reprojection_projective_ambiguity():
    a = _paired_internal()
    target = a.x2d + 0.01
    base = L.reprojection_loss(a.x3d, a.intr, a.offset, target).item()
    # scaling depths of (X + t) by s and focal lengths by s leaves the image unchanged
    s = 1.7
    n = len(a)
    cam = a.x3d.reshape(n, 16, 3) + a.offset[:, None]
    cam[..., 2] *= s
    intr = a.intr.copy()
    intr[:, :2] *= s
    moved = L.reprojection_loss((cam - cam[:, :1]).reshape(n, -1), intr, cam[:, 0], target).item()
    assert moved == pytest.approx(base, rel=1e-10)


def test_reprojection_behind_camera():
    a = _paired_internal(2)
    off = a.offset.copy()
    off[:, 2] = -1.0
    with pytest.raises(BehindCamera):
        L.reprojection_loss(a.x3d, a.intr, off, a.x2d)
    assert np.isfinite(L.reprojection_loss(a.x3d, a.intr, off, a.x2d, strict=False).item())


def test_camera_loss_cases(rng):
    k, t = rng.normal(size=(1, 4)), rng.normal(size=(1, 3))
    assert L.camera_loss(k, t, k, t).item() == 0
    k2 = k.copy()
    k2[0, 0] += 0.1
    assert L.camera_loss(k2, t, k, t).item() == pytest.approx(0.01)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    t5 = t.repeat(5, 0)
    assert L.camera_loss(a, t5, b, t5).item() == L.camera_loss(b, t5, a, t5).item()
    with pytest.raises(MissingCameraGroundTruth):
        L.camera_loss(k, t, None, t)


def test_pose3d_loss_cases(rng):
    x = random_pose(rng, 3)
    assert L.pose3d_loss(x, x).item() == 0
    shifted = x.copy()
    shifted[:, 1:] += [3.0, 0, 4.0]
    # root excluded from the offset: 15 of 16 joints at 25 mm^2
    assert L.pose3d_loss(shifted[:, 1:], x[:, 1:]).item() == pytest.approx(25.0)
    y = x + rng.normal(size=x.shape)
    assert L.pose3d_loss(np.concatenate([y, y]), np.concatenate([x, x])).item() == pytest.approx(
        L.pose3d_loss(y, x).item())
    with pytest.raises(ShapeMismatch):
        L.pose3d_loss(x, x[:2])


def test_weighted_sums():
    w = LossWeights()
    assert L.paired_total({"cam": 1.0, "reproj": 1.0, "pose3d": 1.0, "ref": 0.0}, w) == pytest.approx(1.51)
    assert L.paired_total({"cam": 0.0, "reproj": 0.0, "pose3d": 0.0, "ref": 0.0}, w) == 0
    assert L.weak_total({"reproj": 1.0, "ref": 1.0}, w) == pytest.approx(1.2)
    with pytest.raises(ComponentKindMismatch):
        L.weak_total({"reproj": 1.0, "pose3d": 1.0}, w)
    with pytest.raises(ComponentKindMismatch):
        L.weak_total({"cam": 1.0}, w)


def test_weak_total_ignores_any_3d_ground_truth(rng):
    """Mutating the (unused) 3D truth of a weak batch changes nothing."""
    a = _paired_internal()
    pred3d, intr, off = Tensor(a.x3d * 1.1, requires_grad=True), Tensor(a.intr), Tensor(a.offset)

    def weak_loss(_gt3d):
        comps = {"reproj": L.reprojection_loss(pred3d, intr, off, a.x2d)}
        return L.weak_total(comps)

    v1 = weak_loss(a.x3d).item()
    v2 = weak_loss(a.x3d + rng.normal(size=a.x3d.shape)).item()
    assert v1 == v2
    weak_loss(None).backward()
    assert np.abs(pred3d.grad).sum() > 0


def test_lsgan_hand_cases():
    assert L.lsgan_discriminator_loss(np.ones((4, 1)), np.zeros((6, 1))).item() == 0
    assert L.lsgan_discriminator_loss(np.full((4, 1), 0.5), np.full((3, 1), 0.5)).item() == pytest.approx(0.25)
    assert L.lsgan_generator_loss(np.ones((5, 1))).item() == 0
    assert L.lsgan_generator_loss(np.full((5, 1), 0.5)).item() > 0
    with pytest.raises(EmptyPool):
        L.lsgan_discriminator_loss(np.ones((2, 1)), np.zeros((0, 1)))


def test_lsgan_losses_with_mixed_fake_pool():
    const = lambda v: (lambda x: ag.scale(ag.tsum(x, axis=1, keepdims=True), 0.0) + v)  # noqa: E731
    real2, fake2a, fake2b = np.ones((3, 32)), np.ones((2, 32)), np.ones((4, 32))
    real3, fake3 = np.ones((3, 48)), np.ones((2, 48))
    dis2, dis3, gen = L.lsgan_losses(const(0.5), const(0.5), real2, real3, [fake2a, fake2b], fake3)
    assert dis2.item() == pytest.approx(0.25) and dis3.item() == pytest.approx(0.25)
    assert gen.item() == pytest.approx(0.25)
    with pytest.raises(EmptyPool):
        L.lsgan_losses(const(0.5), const(0.5), real2, real3, [np.ones((0, 32))], fake3)


def test_losses_permutation_invariant_and_nonnegative(rng):
    a = _paired_internal()
    perm = rng.permutation(len(a))
    pred = a.x3d + rng.normal(scale=0.02, size=a.x3d.shape)
    target = a.x2d + rng.normal(scale=0.01, size=a.x2d.shape)
    v = L.reprojection_loss(pred, a.intr, a.offset, target).item()
    vp = L.reprojection_loss(pred[perm], a.intr[perm], a.offset[perm], target[perm]).item()
    assert v == pytest.approx(vp, rel=1e-12) and v >= 0
    assert L.pose3d_loss(pred[perm], a.x3d[perm]).item() == pytest.approx(L.pose3d_loss(pred, a.x3d).item())


LOSS_CHECKS = {
    "refinement": lambda r: (lambda p, c=L.normalize_confidence(r.uniform(0.1, 1, (3, 16))):
                             L.refinement_loss(p, np.full((3, 32), 0.3), c), [r.normal(size=(3, 32))]),
    "camera": lambda r: (lambda k, t: L.camera_loss(k, t, np.ones((3, 4)), np.ones((3, 3))),
                         [r.normal(size=(3, 4)), r.normal(size=(3, 3))]),
    "pose3d": lambda r: (lambda x: L.pose3d_loss(x, np.zeros((3, 48))), [r.normal(size=(3, 48))]),
    "lsgan_dis": lambda r: (L.lsgan_discriminator_loss, [r.normal(size=(4, 1)), r.normal(size=(5, 1))]),
    "lsgan_gen": lambda r: (L.lsgan_generator_loss, [r.normal(size=(4, 1))]),
}


@pytest.mark.parametrize("name", sorted(LOSS_CHECKS))
def test_loss_gradients(name):
    r = np.random.default_rng(7)
    for _ in range(20):
        fn, inputs = LOSS_CHECKS[name](r)
        assert gradcheck(fn, inputs) < 1e-4


def test_report_serializes():
    rep = L.report("weak", 8, {"ref": Tensor(0.5), "reproj": 0.25}, 0.55)
    assert '"kind": "weak"' in rep.to_json() and rep.pose3d is None


def test_no_warning_for_positive_confidences():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        L.normalize_confidence(np.ones((3, 16)))
