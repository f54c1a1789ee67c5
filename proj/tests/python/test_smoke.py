import math

import numpy as np
import pytest

import elbclm


def test_pts_round_trip():
    text = "version: 1\nn_points: 3\n{\n1.5 2\n3 4.25\n-1 0\n}\n"
    pts = elbclm.parse_pts(text)
    assert pts.shape == (3, 2)
    np.testing.assert_array_equal(pts, [[1.5, 2.0], [3.0, 4.25], [-1.0, 0.0]])
    np.testing.assert_array_equal(elbclm.parse_pts(elbclm.format_pts(pts)), pts)


def test_parse_error_carries_line():
    with pytest.raises(elbclm.ParseError, match="line 4"):
        elbclm.parse_pts("version: 1\nn_points: 3\n{\n1 2 3\n}\n")
    assert issubclass(elbclm.ParseError, elbclm.Error)


def test_procrustes_recovers_similarity():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(10, 2))
    s, theta, tx, ty = 1.7, 0.4, 3.0, -2.0
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    dst = s * src @ rot.T + [tx, ty]
    got = elbclm.procrustes_align_pair(src, dst)
    np.testing.assert_allclose(got, (s, theta, tx, ty), atol=1e-10)


def test_template_synthesis_and_jacobian():
    pdm = elbclm.face_template_pdm()
    assert (pdm.landmarks, pdm.modes) == (68, 8)
    q = 0.5 * np.sqrt(pdm.eigenvalues)
    pose = np.concatenate([[80.0, 0.1, 64.0, 60.0], q])
    pts = pdm.synthesize(80.0, 0.1, 64.0, 60.0, q)
    assert pts.shape == (68, 2)

    jac = pdm.jacobian(pose)
    numeric = np.empty_like(jac)
    h = 1e-6
    for k in range(pose.size):
        plus, minus = pose.copy(), pose.copy()
        plus[k] += h
        minus[k] -= h
        numeric[:, k] = (pdm.synthesize(*plus[:4], plus[4:]).ravel() - pdm.synthesize(*minus[:4], minus[4:]).ravel()) / (2 * h)
    np.testing.assert_allclose(jac, numeric, rtol=1e-5, atol=1e-6)

    fitted = pdm.fit_pose(pts)
    np.testing.assert_allclose(fitted["q"], q, atol=1e-9)


def test_train_fit_and_serialize():
    images, shapes, boxes = elbclm.synthetic_corpus(8, seed=3)
    assert images[0].shape == (128, 128)
    model, errors = elbclm.train_cascade(images, shapes, boxes, stages="pixel2", aug_count=1, seed=5)
    assert model.stages == 2
    assert len(errors) == 3
    assert errors[-1] <= errors[0]

    result = model.fit(images[0], boxes[0], trace=True)
    assert result["shape"].shape == (68, 2)
    assert len(result["stages"]) == 3
    pose = result["pose"]
    np.testing.assert_allclose(
        model.pdm.synthesize(pose["s"], pose["theta"], pose["tx"], pose["ty"], pose["q"]), result["shape"], atol=1e-9
    )

    clone = elbclm.Model.from_bytes(model.to_bytes())
    np.testing.assert_array_equal(clone.fit(images[1], boxes[1])["shape"], model.fit(images[1], boxes[1])["shape"])
    with pytest.raises(elbclm.FormatError):
        elbclm.Model.from_bytes(model.to_bytes()[:20])


def test_metrics():
    gt = elbclm.face_template_pdm().synthesize(100.0, 0.0, 0.0, 0.0, np.zeros(8))
    assert elbclm.normalized_error(gt, gt) == 0.0
    iod = np.linalg.norm(gt[36] - gt[45])
    assert elbclm.normalized_error(gt + [iod, 0.0], gt) == pytest.approx(1.0)
    curve = elbclm.ced_curve([0.02, 0.04, 0.08], [0.05])
    assert curve[0][1] == pytest.approx(2.0 / 3.0)
