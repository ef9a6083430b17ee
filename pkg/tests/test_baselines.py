import numpy as np
import pytest
import torch

from conftest import random_lines
from linereg.baselines import IclConfig, icl_register, regression_loss, regression_register
from linereg.errors import DegenerateDirections
from linereg.features import LineNet, NetConfig
from linereg.plucker import (
    RigidTransform,
    axis_angle_to_rotation,
    canonicalize_lines,
    rotation_error,
    transform_lines,
    translation_error,
)
from linereg.synth import NoiseConfig, PoseRanges, make_scene_pair, random_scene_lines


def small_perturbation(rng, deg=5.0, metres=0.1):
    axis = rng.normal(size=3)
    t = rng.normal(size=3)
    return RigidTransform(axis_angle_to_rotation(axis, np.radians(deg)), metres * t / np.linalg.norm(t))


def test_icl_identity_one_iteration(rng):
    L = canonicalize_lines(random_lines(rng, 30))
    res = icl_register(L, L)
    assert res.hypothesis_count == 1
    assert res.pose == RigidTransform.identity()
    np.testing.assert_array_equal(res.inlier_pairs[:, 1], np.arange(30))


def test_icl_recovers_small_perturbation(rng):
    for _ in range(20):
        L = random_scene_lines(rng, 40)
        g = small_perturbation(rng)
        res = icl_register(L, transform_lines(g, L))
        assert rotation_error(g.R, res.pose.R) < 1e-6
        assert translation_error(g.t, res.pose.t) < 1e-6


def test_icl_trace_non_increasing():
    for seed in range(100):
        r = np.random.default_rng(seed)
        sc = make_scene_pair(r, random_scene_lines(r, 40), 1.0, NoiseConfig.zero(), PoseRanges((0, 0), (0, 0)))
        g = small_perturbation(r, r.uniform(0, 5), r.uniform(0, 0.1))
        res = icl_register(sc.source, transform_lines(g, sc.target))
        assert all(b <= a + 1e-9 for a, b in zip(res.trace, res.trace[1:])), seed


def test_icl_deterministic(rng):
    L = random_scene_lines(rng, 40)
    T = transform_lines(small_perturbation(rng, 20, 0.5), L[rng.permutation(40)])
    a, b = icl_register(L, T), icl_register(L, T)
    assert a.pose == b.pose and a.trace == b.trace


def test_icl_parallel_source():
    src = np.array([[1.0, 0, 0, 0, 0, z] for z in range(4)])
    with pytest.raises(DegenerateDirections):
        icl_register(src, src)


def test_icl_config_validation():
    with pytest.raises(ValueError):
        IclConfig(max_iterations=0)


def test_regression_loss_examples():
    I = RigidTransform.identity()
    assert regression_loss(I, I) == 0.0
    assert regression_loss(I, RigidTransform(np.eye(3), np.array([1.0, 0, 0]))) == pytest.approx(1.0)


def test_regression_loss_sign_canonical(rng):
    # a rotation near pi about x: both quaternion signs collapse to the same canonical one
    R = axis_angle_to_rotation([1, 0, 0], np.pi - 1e-3)
    g = RigidTransform(R, np.zeros(3))
    assert regression_loss(g, RigidTransform(R.copy(), np.zeros(3))) == 0.0
    assert regression_loss(g, RigidTransform.identity()) > 0


def test_regression_register_valid_and_deterministic(rng):
    torch.manual_seed(0)
    net = LineNet(NetConfig.tiny()).double()
    L, T = random_scene_lines(rng, 20), random_scene_lines(rng, 20)
    a = regression_register(L, T, net)
    b = regression_register(L, T, net)
    assert a == b
    assert abs(np.linalg.det(a.R) - 1) < 1e-9


def test_regression_register_float32_network(rng):
    # the default network runs in float32; the returned rotation must still be orthonormal
    torch.manual_seed(1)
    net = LineNet(NetConfig.tiny())
    for _ in range(20):
        g = regression_register(random_scene_lines(rng, 20), random_scene_lines(rng, 20), net)
        assert np.abs(g.R.T @ g.R - np.eye(3)).max() < 1e-12
