import numpy as np
import pytest

from mmfp.datagen import (POUR_LEVEL1, TOY_PEAKS, TOY_WALL_MARGIN, Annotation, MotionDataset, gen_se3_pouring,
                          gen_toy2d, gen_waving7dof, pouring_paraphrases, resample_trajectory, toy2d_paraphrases,
                          waving_paraphrases)
from mmfp.errors import ParseError, ShapeError, ValidationError
from mmfp.liegeom import pose, so3_exp, so3_log
from mmfp.trajectory import Normalization, Space, Trajectory


@pytest.fixture(scope="module")
def toy():
    return gen_toy2d(0)


@pytest.fixture(scope="module")
def pouring():
    return gen_se3_pouring(0)


@pytest.fixture(scope="module")
def waving():
    return gen_waving7dof(0)


def test_toy_shape(toy):
    # 20 demonstrations of length 201
    assert len(toy) == 20
    assert all(x.T == 201 for x in toy.trajectories)
    assert toy.space == Space.euclidean(2)


def test_toy_endpoints(toy):
    for x in toy.trajectories:
        assert np.array_equal(x.points[-1], [0.0, 0.0])
        assert np.array_equal(x.points[0], toy.trajectories[0].points[0])


def test_toy_annotations(toy):
    assert toy.levels == [1, 2]
    assert toy.texts(1) == ["go to the origin"]
    assert len(toy.texts(2)) == 4
    for t in toy.texts(2):
        assert len(toy.indices_for_text(t)) == 5


def test_toy_bytes_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    gen_toy2d(7).save(a)
    gen_toy2d(7).save(b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != gen_toy2d(8).to_json().encode()


def test_toy_class_separation(toy):
    texts = toy.texts(2)
    X = {t: np.stack([toy.trajectories[i].points.ravel() for i in toy.indices_for_text(t)]) for t in texts}

    def dists(A, B):
        return np.sqrt(((A[:, None] - B[None]) ** 2).sum(-1))

    max_intra = max(dists(X[t], X[t]).max() for t in texts)
    min_inter = min(dists(X[a], X[b]).min() for a in texts for b in texts if a != b)
    assert min_inter > max_intra


def test_toy_negatives_cut_walls(toy):
    # recover each negative as a blend a*x_i + (1-a)*x_j of two demos, then check
    # the nominal blended passage height keeps the wall margin from every passage
    assert len(toy.negatives) == 40
    X = np.stack([x.points.ravel() for x in toy.trajectories])
    route = [anns[1].tags["task"] for anns in toy.annotations]
    for x, tags in toy.negatives:
        assert tags == {"path": 0}
        y = x.points.ravel()
        best = None
        for i in range(len(X)):
            for j in range(len(X)):
                d = X[i] - X[j]
                if not d.any():
                    continue
                a = float(d @ (y - X[j]) / (d @ d))
                res = np.linalg.norm(y - X[j] - a * d)
                if best is None or res < best[0]:
                    best = (res, i, j, a)
        res, i, j, a = best
        assert res < 1e-9
        assert route[i] != route[j] and 0.3 <= a <= 0.7
        h = a * TOY_PEAKS[route[i]] + (1 - a) * TOY_PEAKS[route[j]]
        assert np.min(np.abs(np.asarray(TOY_PEAKS) - h)) >= TOY_WALL_MARGIN


def test_many_to_many(toy, pouring, waving):
    for ds in (toy, pouring, waving):
        for t in ds.texts(1):
            assert len(ds.indices_for_text(t)) >= 2
        assert all(len(anns) >= 2 for anns in ds.annotations)
        ds.validate()


def test_pouring_shape(pouring):
    assert len(pouring) == 10
    assert pouring.T == 480 and pouring.space == Space.se3()
    assert {a.text for anns in pouring.annotations for a in anns if a.level == 1} == {POUR_LEVEL1}
    assert POUR_LEVEL1 == "Give me a drink, anything please"
    assert pouring.levels == [1, 2, 3]


def test_pouring_wine_adds_terminal_roll(pouring):
    ends = {}
    for x, anns in zip(pouring.trajectories, pouring.annotations):
        tags = anns[2].tags
        ends[(tags["style"], tags["direction"])] = x.points[-1, :3, :3]
    for d in range(5):
        rel = so3_log(ends[(0, d)].T @ ends[(1, d)])
        angle = np.linalg.norm(rel)
        assert angle >= np.pi / 4
        # the relative rotation is about the bottle's own z axis
        assert abs(rel[2]) / angle > 0.95


def test_waving_shape(waving):
    assert len(waving) == 30
    assert waving.T == 720 and waving.space == Space.euclidean(7)


def test_waving_amplitudes_ordered(waving):
    exc = {0: [], 1: [], 2: []}
    for x, anns in zip(waving.trajectories, waving.annotations):
        exc[anns[2].tags["style"]].append(np.mean(np.abs(x.points - x.points.mean(0))))
    means = [np.mean(exc[s]) for s in range(3)]
    assert means[0] < means[1] < means[2]


def test_other_generators_deterministic(pouring, waving):
    assert gen_se3_pouring(0).to_json() == pouring.to_json()
    assert gen_waving7dof(0).to_json() == waving.to_json()


def test_paraphrases_disjoint_from_canonical():
    for train, held in (toy2d_paraphrases(), pouring_paraphrases(), waving_paraphrases()):
        assert set(train) == set(held)
        for t in train:
            assert t not in train[t] and t not in held[t]
            assert not set(train[t]) & set(held[t])
            assert held[t]


def test_resample_identity_and_line():
    x = Trajectory(Space.euclidean(2), np.random.default_rng(0).normal(size=(7, 2)))
    assert np.array_equal(resample_trajectory(x, 7).points, x.points)
    line = Trajectory(Space.euclidean(1), [[0.0], [1.0]])
    np.testing.assert_allclose(resample_trajectory(line, 5).points[:, 0], [0, 0.25, 0.5, 0.75, 1.0], atol=1e-15)


def test_resample_round_trip_piecewise_linear():
    rng = np.random.default_rng(1)
    x = Trajectory(Space.euclidean(3), rng.normal(size=(9, 3)))
    # refining to 2T - 1 keeps every original sample as a breakpoint
    back = resample_trajectory(resample_trajectory(x, 17), 9)
    assert np.abs(back.points - x.points).max() <= 1e-9
    affine = Trajectory(Space.euclidean(2), np.linspace(0, 1, 9)[:, None] * [[2.0, -3.0]] + [[1.0, 0.5]])
    back = resample_trajectory(resample_trajectory(affine, 18), 9)
    assert np.abs(back.points - affine.points).max() <= 1e-9


def test_resample_se3_geodesic():
    axis = np.array([1.0, 2.0, 2.0]) / 3.0
    P = np.stack([pose(so3_exp(axis * 0.3 * k), [0.1 * k, 0.0, 0.0]) for k in range(5)])
    x = Trajectory(Space.se3(), P)
    y = resample_trajectory(x, 9)
    assert np.array_equal(y.points[0], P[0]) and np.array_equal(y.points[-1], P[-1])
    for j, Q in enumerate(y.points):
        np.testing.assert_allclose(so3_log(Q[:3, :3]), axis * 0.15 * j, atol=1e-12)
        np.testing.assert_allclose(Q[0, 3], 0.05 * j, atol=1e-12)
    back = resample_trajectory(y, 5)
    assert np.abs(back.points - P).max() <= 1e-9


def test_resample_errors():
    x = Trajectory(Space.euclidean(1), [[0.0]])
    with pytest.raises(ShapeError):
        resample_trajectory(x, 5)
    with pytest.raises(ShapeError):
        resample_trajectory(Trajectory(Space.euclidean(1), [[0.0], [1.0]]), 1)


def test_dataset_file_round_trip(tmp_path, pouring):
    path = tmp_path / "d.json"
    pouring.save(path)
    back = MotionDataset.load(path)
    assert back.to_json() == pouring.to_json()
    assert back.fingerprint() == pouring.fingerprint()


def test_dataset_parse_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{\n  \"schema_version\": 1,\n  oops\n}")
    with pytest.raises(ParseError) as exc:
        MotionDataset.load(path)
    assert exc.value.line == 3
    path.write_text('{"schema_version": 99}')
    with pytest.raises(ParseError):
        MotionDataset.load(path)
    path.write_text('{"schema_version": 1, "space": "euclidean:2"}')
    with pytest.raises(ParseError):
        MotionDataset.load(path)


def test_dataset_validation():
    space = Space.euclidean(1)
    x = Trajectory(space, np.zeros((3, 1)))
    norm = Normalization.identity(space)
    with pytest.raises(ValidationError):
        MotionDataset(space, 3, [x], [[]], norm).validate()
    with pytest.raises(ValidationError):
        MotionDataset(space, 3, [x], [[Annotation(2, "a")]], norm).validate()
    with pytest.raises(ValidationError):
        MotionDataset(space, 3, [x, x], [[Annotation(1, "a", {"k": 0})], [Annotation(1, "a", {"k": 1})]],
                      norm).validate()
