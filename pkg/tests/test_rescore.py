import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_obb_indices, exact_sum
from uncgrasp.cloud import PointCloud, RigidTransform
from uncgrasp.errors import ConfigError, EmptyCandidatesError
from uncgrasp.gripper import GraspCandidate, GraspPose, GripperModel
from uncgrasp.rescore import (
    CropResult,
    RescoreConfig,
    crop_for_grasp,
    rank_by_penalty,
    rescore,
    uncertainty_penalty,
    write_report,
)
from uncgrasp.uncertainty import GENERATED, OBSERVED, UncertainCloud

G = GripperModel()


def make_uc(rng, n=600, P=200, spread=0.06):
    pts = rng.uniform(-spread, spread, (n, 3))
    std = np.where(np.arange(n) < P, 0.0, rng.uniform(0.001, 0.008, n))
    prov = np.where(np.arange(n) < P, OBSERVED, GENERATED)
    return UncertainCloud(PointCloud(pts), std, prov, 60)


def make_cands(rng, m, spread=0.04, scores=None):
    out = []
    for i in range(m):
        t = RigidTransform.random(rng, spread)
        s = float(rng.uniform(100, 3000)) if scores is None else scores[i]
        out.append(GraspCandidate(GraspPose(t), s))
    return out


def crop_of(stds):
    stds = np.asarray(stds, dtype=float)
    return CropResult(np.arange(len(stds)), np.zeros((len(stds), 3)), stds, None)


def test_penalty_examples():
    assert uncertainty_penalty(crop_of([])) == 0.0
    got = uncertainty_penalty(crop_of([0.002, 0.003, 0.004]))
    # exactly rounded sum of the binary inputs, one ulp from decimal 0.009
    assert got == exact_sum([0.002, 0.003, 0.004])
    assert abs(got - 0.009) <= math.ulp(0.009)
    assert uncertainty_penalty(crop_of([0.002, 0.004]), "mean") == pytest.approx(0.003)


def test_penalty_matches_exact_sum(rng):
    stds = rng.uniform(0.0, 0.008, 412)
    assert uncertainty_penalty(crop_of(stds)) == exact_sum(stds)


def test_far_grasp_has_empty_crop(rng):
    uc = make_uc(rng)
    far = GraspCandidate(GraspPose(RigidTransform(np.eye(3), [5.0, 5.0, 5.0])), 10.0)
    assert crop_for_grasp(uc, far, G).size == 0


def test_huge_box_crops_everything(rng):
    uc = make_uc(rng)
    g = GripperModel(max_opening=1.0, finger_depth=1.0, finger_width=1.0)
    c = GraspCandidate(GraspPose(RigidTransform.identity()), 1.0)
    assert crop_for_grasp(uc, c, g).indices.tolist() == list(range(uc.count))


def test_crop_matches_oracle(rng):
    uc = make_uc(rng)
    for c in make_cands(rng, 20):
        crop = crop_for_grasp(uc, c, G)
        b = crop.box
        assert crop.indices.tolist() == brute_obb_indices(uc.mean.points, b.center, b.axes, b.half_extents)
        assert np.array_equal(crop.stds, uc.std[crop.indices])
        assert np.array_equal(crop.points, uc.mean.points[crop.indices])


def test_two_candidate_example():
    assert [i + 1 for i in rank_by_penalty([1000.0, 900.0], [0.003, 0.0005], 1e5)] == [2, 1]
    s_prime = [1000.0 - 1e5 * 0.003, 900.0 - 1e5 * 0.0005]
    assert s_prime == pytest.approx([700.0, 850.0])


def test_zero_weight_is_identity(rng):
    uc = make_uc(rng)
    cands = make_cands(rng, 15, scores=[5.0] * 5 + [3.0] * 10)
    r = rescore(cands, uc, G, RescoreConfig(W_u=0.0))
    assert r.permutation == list(range(1, 16))
    assert all(e.S_prime == e.S for e in r.entries)


def test_observed_only_crops_keep_order(rng):
    uc = make_uc(rng, P=600)
    cands = make_cands(rng, 15)
    cands.sort(key=lambda c: -c.score)
    for w in (0.0, 0.1, 1e5, 1e12):
        assert rescore(cands, uc, G, RescoreConfig(W_u=w)).permutation == list(range(1, 16))


def test_full_rescore_fields(rng):
    uc = make_uc(rng)
    cands = make_cands(rng, 15)
    r = rescore(cands, uc, G)
    assert sorted(r.permutation) == list(range(1, 16))
    s_prime = [e.S_prime for e in r.entries]
    assert s_prime == sorted(s_prime, reverse=True)
    for e in r.entries:
        crop = crop_for_grasp(uc, cands[e.original_rank - 1], G)
        assert e.crop_size == crop.size
        assert e.penalty == exact_sum(crop.stds)
        assert e.S_prime == e.S - 1e5 * e.penalty
        assert e.S_prime <= e.S
        assert r.entries[e.new_rank - 1] is e


def test_parallel_rescore_is_identical(rng):
    uc = make_uc(rng)
    cands = make_cands(rng, 15)
    a = rescore(cands, uc, G)
    b = rescore(cands, uc, G, workers=4)
    assert [e.to_dict() for e in a.entries] == [e.to_dict() for e in b.entries]


def test_no_cross_candidate_coupling(rng):
    uc = make_uc(rng)
    cands = make_cands(rng, 15)
    full = {e.original_rank: e for e in rescore(cands, uc, G).entries}
    for i, c in enumerate(cands):
        (single,) = rescore([c], uc, G).entries
        assert (single.penalty, single.S_prime, single.crop_size) == (
            full[i + 1].penalty, full[i + 1].S_prime, full[i + 1].crop_size)


def test_errors_and_report(rng, tmp_path):
    uc = make_uc(rng)
    with pytest.raises(EmptyCandidatesError):
        rescore([], uc, G)
    with pytest.raises(ConfigError):
        RescoreConfig(W_u=-1.0)
    with pytest.raises(ConfigError):
        RescoreConfig(penalty_mode="max")
    cfg = RescoreConfig()
    r = rescore(make_cands(rng, 4), uc, G, cfg)
    doc = json.loads(write_report(r, tmp_path / "r.json", cfg).read_text())
    assert doc["permutation"] == r.permutation
    assert set(doc["candidates"][0]) == {"original_rank", "S", "crop_size", "penalty_m", "S_prime", "new_rank"}


# ---- ranking invariants over arbitrary score / penalty lists

scores_st = st.lists(st.sampled_from([100.0, 250.0, 900.0, 1000.0]) | st.floats(0, 5000), min_size=1, max_size=20)
weights = st.sampled_from([0.0, 0.1, 1e5]) | st.floats(0, 1e6)


@st.composite
def instances(draw):
    s = draw(scores_st)
    p = draw(st.lists(st.sampled_from([0.0, 0.001]) | st.floats(0, 0.05), min_size=len(s), max_size=len(s)))
    return s, p, draw(weights)


@given(instances())
def test_order_is_sorted_and_stable(inst):
    s, p, w = inst
    order = rank_by_penalty(s, p, w)
    assert sorted(order) == list(range(len(s)))
    sp = [s[i] - w * p[i] for i in order]
    for a in range(len(order) - 1):
        assert sp[a] > sp[a + 1] or (sp[a] == sp[a + 1] and order[a] < order[a + 1])


@given(instances(), st.floats(1.0001, 100), st.data())
def test_inflating_stds_never_promotes(inst, factor, data):
    s, p, w = inst
    j = data.draw(st.integers(0, len(s) - 1))
    before = rank_by_penalty(s, p, w).index(j)
    q = list(p)
    q[j] = p[j] * factor
    assert rank_by_penalty(s, q, w).index(j) >= before


@given(instances(), st.floats(0, 5000), st.floats(0, 0.05), st.data())
def test_insertion_keeps_relative_order(inst, s_new, p_new, data):
    s, p, w = inst
    pos = data.draw(st.integers(0, len(s)))
    old = rank_by_penalty(s, p, w)
    s2 = s[:pos] + [s_new] + s[pos:]
    p2 = p[:pos] + [p_new] + p[pos:]
    new = [i for i in rank_by_penalty(s2, p2, w) if i != pos]
    assert [i - (i > pos) for i in new] == old


@given(scores_st)
def test_zero_weight_identity_property(s):
    ranked = sorted(range(len(s)), key=lambda i: (-s[i], i))
    assert rank_by_penalty(s, [0.01] * len(s), 0.0) == ranked
