import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_ensemble_stats, rotation_from_quaternion
from uncgrasp.cloud import PointCloud, RigidTransform
from uncgrasp.completion import EnsembleStack, MirrorCompleter, MirrorCompleterConfig, complete_ensemble
from uncgrasp.errors import InvalidStackError, LengthMismatchError
from uncgrasp.uncertainty import (
    GENERATED,
    OBSERVED,
    UncertainCloud,
    aggregate,
    load_uncertain_cloud,
    save_uncertain_cloud,
    std_summary,
)


@st.composite
def stacks(draw):
    T = draw(st.integers(2, 6))
    N = draw(st.integers(1, 12))
    P = draw(st.integers(0, N))
    arr = draw(arrays(np.float64, (T, N, 3), elements=st.floats(-0.5, 0.5)))
    arr[:, :P] = arr[0, :P]
    return EnsembleStack(arr, P)


def test_identical_passes_have_zero_std(rng):
    one = rng.normal(size=(30, 3))
    uc = aggregate(EnsembleStack(np.stack([one] * 5), 10))
    assert np.array_equal(uc.mean.points, one)
    assert np.all(uc.std == 0)


def test_two_sample_example():
    passes = np.zeros((2, 3, 3))
    passes[0, 1, 2] = 0.001
    passes[1, 1, 2] = -0.001
    uc = aggregate(EnsembleStack(passes, 0))
    assert np.array_equal(uc.mean.points[1], [0.0, 0.0, 0.0])
    assert uc.std[1] == pytest.approx(math.sqrt(2) * 0.001, abs=1e-15)
    _, bs = brute_ensemble_stats(passes.tolist())
    assert abs(uc.std[1] - bs[1]) <= 1e-15
    assert uc.std[0] == 0 and uc.std[2] == 0


@given(stacks())
def test_matches_brute_force(stack):
    uc = aggregate(stack)
    bm, bs = brute_ensemble_stats(stack.passes.tolist())
    assert np.max(np.abs(uc.mean.points - np.array(bm).reshape(-1, 3))) <= 1e-12
    assert np.max(np.abs(uc.std - np.array(bs))) <= 1e-12
    P = stack.partial_count
    assert np.all(uc.std[:P] == 0)
    assert uc.provenance[:P].tolist() == [OBSERVED] * P
    assert np.all(uc.provenance[P:] == GENERATED)


@given(stacks(), st.randoms(use_true_random=False))
def test_pass_order_invariance(stack, rnd):
    order = list(range(stack.T))
    rnd.shuffle(order)
    a = aggregate(stack)
    b = aggregate(EnsembleStack(stack.passes[order], stack.partial_count))
    assert np.allclose(a.mean.points, b.mean.points, atol=1e-15)
    assert np.allclose(a.std, b.std, atol=1e-15)


quats = st.tuples(*[st.floats(-1, 1) for _ in range(4)]).filter(
    lambda q: sum(v * v for v in q) > 1e-3)


@given(stacks(), quats, arrays(np.float64, 3, elements=st.floats(-2, 2)))
def test_rigid_invariance(stack, q, t):
    tr = RigidTransform(rotation_from_quaternion(*q), t)
    moved = EnsembleStack(np.stack([tr.apply(p) for p in stack.passes]), stack.partial_count, tol=1e-12)
    a, b = aggregate(stack), aggregate(moved)
    assert np.allclose(b.mean.points, tr.apply(a.mean.points), atol=1e-9)
    assert np.all(np.abs(b.std - a.std) <= 1e-9)


@given(stacks(), st.floats(0.01, 100))
def test_scaling(stack, k):
    a = aggregate(stack)
    b = aggregate(EnsembleStack(stack.passes * k, stack.partial_count))
    assert np.allclose(b.std, k * a.std, rtol=1e-12, atol=1e-15)


def test_uncertain_cloud_invariants():
    with pytest.raises(InvalidStackError):
        UncertainCloud(PointCloud(np.zeros((2, 3))), [0.001, 0.0], [OBSERVED, GENERATED], 2)
    with pytest.raises(InvalidStackError):
        UncertainCloud(PointCloud(np.zeros((1, 3))), [-1.0], [GENERATED], 2)
    with pytest.raises(LengthMismatchError):
        UncertainCloud(PointCloud(np.zeros((2, 3))), [0.0], [OBSERVED, GENERATED], 2)
    with pytest.raises(InvalidStackError):
        aggregate(np.zeros((3, 4, 3)))


def toy_uc(std, prov=None):
    std = np.asarray(std, dtype=float)
    prov = [GENERATED] * len(std) if prov is None else prov
    return UncertainCloud(PointCloud(np.zeros((len(std), 3))), std, prov, 2)


def test_summary_examples():
    s = std_summary(toy_uc([0.0, 0.0], [OBSERVED, OBSERVED]))
    assert s["min"] == s["max"] == s["mean"] == 0
    s = std_summary(toy_uc([0.002, 0.006]))
    assert s["min"] == 2.0 and s["max"] == 6.0
    assert s["in_band_fraction"] == 1.0


def test_summary_matches_raw_stack():
    rng = np.random.default_rng(0)
    partial = PointCloud(rng.normal(scale=0.03, size=(300, 3)))
    b = MirrorCompleter(MirrorCompleterConfig(seed=3, output_size=1024), view_origin=[0, -0.5, 0.3], up=[0, 0, 1])
    stack = complete_ensemble(b, partial, 20, seed=5)
    s = std_summary(aggregate(stack))
    _, bs = brute_ensemble_stats(stack.passes.tolist())
    gen = [v * 1e3 for v in bs[300:]]
    assert s["generated"]["min"] == pytest.approx(min(gen), abs=1e-9)
    assert s["generated"]["max"] == pytest.approx(max(gen), abs=1e-9)
    assert s["generated"]["mean"] == pytest.approx(math.fsum(gen) / len(gen), abs=1e-9)
    assert s["observed"]["max"] == 0.0
    assert s["in_band_fraction"] == pytest.approx(sum(2 <= v <= 6 for v in gen) / len(gen))


def test_calibrated_fixture_band(std_runs):
    for run in std_runs:
        s = std_summary(run.uncertain)
        assert s["in_band_fraction"] >= 0.8, run.scene.scene_id
        assert s["observed"]["max"] == 0.0


def test_save_load_round_trip(tmp_path, std_runs):
    uc = std_runs[0].uncertain
    path = save_uncertain_cloud(uc, tmp_path / "u.ply")
    back = load_uncertain_cloud(path)
    assert back.mean == uc.mean
    assert np.array_equal(back.std, uc.std)
    assert np.array_equal(back.provenance, uc.provenance)
    assert back.T_used == uc.T_used
    path.with_suffix(".json").unlink()
    assert load_uncertain_cloud(path).partial_count == uc.partial_count
