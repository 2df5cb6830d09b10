import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SPECS, finger_spec, mirror_spec
from masa.symmetry import (
    AGENT_INDEXED,
    CENTRAL_VARIANT,
    PLANAR_ROTATE,
    SCALAR_INVARIANT,
    SIGN_FLIP,
    Block,
    BlockLayout,
    DimensionError,
    LayoutError,
    SpecMismatchError,
    SymmetrySpec,
    TransformSet,
    apply,
    build_transform_set,
    compose,
    inverse,
    transform_at,
    verify_group_axioms,
)


def test_finger_layout_t1_shifts_agents_and_rotates_object():
    ts = build_transform_set(finger_spec(3, 9))
    alphas = [np.full(9, 10.0 * (k + 1)) + np.arange(9) for k in range(3)]
    o = np.concatenate([[0.25], *alphas, [1.0, 0.0]])
    out = apply(ts.obs[1], o)
    theta = -2 * math.pi / 3
    expected = np.concatenate([[0.25], alphas[1], alphas[2], alphas[0], [math.cos(theta), math.sin(theta)]])
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_identity_element(tset, rng):
    v = rng.standard_normal((50, tset.obs[0].width))
    assert np.array_equal(tset.obs[0].apply(v), v)
    a = rng.standard_normal((50, tset.act[0].width))
    assert np.array_equal(tset.act[0].apply(a), a)


def test_reflection_sign_flip_on_y():
    spec = SymmetrySpec(
        "reflection", 2,
        BlockLayout((Block("pos", 2, CENTRAL_VARIANT, SIGN_FLIP, mask=(0, 1)),)),
        BlockLayout((Block("f", 1, CENTRAL_VARIANT, SIGN_FLIP, mask=(1,)),)),
    )
    ts = build_transform_set(spec)
    np.testing.assert_array_equal(ts.obs[1].apply(np.array([0.3, 0.7])), [0.3, -0.7])


def test_rotation_convention_basis_vector():
    ts = build_transform_set(finger_spec(3, 1))
    o = np.zeros(ts.obs[0].width)
    o[-2:] = [1.0, 0.0]
    np.testing.assert_allclose(ts.obs[1].apply(o)[-2:], [-0.5, -0.8660254], atol=1e-7)


def test_scalar_invariant_untouched(tset):
    width = tset.obs[0].width
    o = np.zeros(width)
    layout = tset.spec.obs_layout
    for off, b in zip(layout.offsets, layout.blocks):
        if b.kind == SCALAR_INVARIANT:
            o[off:off + b.width] = 7.0
    for t in tset.obs:
        out = t.apply(o)
        for off, b in zip(layout.offsets, layout.blocks):
            if b.kind == SCALAR_INVARIANT:
                assert np.all(out[off:off + b.width] == 7.0)


def test_t1_then_t2_is_identity_brute_force():
    base = finger_spec(3, 12)
    obs = BlockLayout(base.obs_layout.blocks + (Block("phase", 1, SCALAR_INVARIANT),))
    ts = build_transform_set(SymmetrySpec("cyclic", 3, obs, base.act_layout))
    assert ts.obs[0].width == 40
    v = np.random.default_rng(0).standard_normal((1000, ts.obs[0].width))
    back = ts.obs[2].apply(ts.obs[1].apply(v))
    assert np.max(np.abs(back - v)) <= 1e-12


def test_length_mismatch_raises(tset):
    with pytest.raises(DimensionError):
        tset.obs[1].apply(np.zeros(tset.obs[0].width + 1))


@pytest.mark.parametrize("n,i,j,k", [(3, 1, 2, 0), (2, 1, 1, 0), (4, 1, 1, 2), (5, 3, 4, 2)])
def test_compose_indices(n, i, j, k):
    ts = build_transform_set(finger_spec(n, 2) if n != 2 else mirror_spec())
    for fam in (ts.obs, ts.act):
        c = compose(fam[i], fam[j])
        assert c is fam[k]
        np.testing.assert_allclose(fam[j].matrix() @ fam[i].matrix(), c.matrix(), atol=1e-12)


@pytest.mark.parametrize("n,i,k", [(3, 1, 2), (2, 1, 1), (5, 2, 3), (4, 0, 0)])
def test_inverse(n, i, k):
    ts = build_transform_set(finger_spec(n, 2) if n != 2 else mirror_spec())
    inv = inverse(ts.obs[i])
    assert inv is ts.obs[k]
    v = np.random.default_rng(n).standard_normal((20, inv.width))
    np.testing.assert_allclose(inv.apply(ts.obs[i].apply(v)), v, atol=1e-12)


def test_compose_across_sets_rejected():
    a = build_transform_set(finger_spec(3, 2))
    b = build_transform_set(finger_spec(3, 2))
    with pytest.raises(SpecMismatchError):
        compose(a.obs[1], b.obs[1])
    with pytest.raises(SpecMismatchError):
        compose(a.obs[1], a.act[1])


def test_transform_at_is_cyclic():
    ts = build_transform_set(finger_spec(3, 2))
    assert transform_at(ts.obs, 4) is ts.obs[1]
    assert transform_at(ts.obs, -1) is ts.obs[2]


def test_group_axioms_within_tolerance(tset):
    report = verify_group_axioms(tset, sample_count=1000, rng_seed=3)
    assert set(report) >= {"commutativity", "distributivity", "cyclicity", "orthogonality"}
    for name, res in report.items():
        assert res <= 1e-12, name


def test_corrupted_element_map_reported():
    ts = build_transform_set(finger_spec(3, 2))
    bad_scale = ts.obs[1].scale.copy()
    bad_scale[0] = 1.5
    bad = dataclasses.replace(ts.obs[1], scale=bad_scale)
    corrupt = TransformSet(ts.spec, (ts.obs[0], bad, ts.obs[2]), ts.act)
    report = verify_group_axioms(corrupt, sample_count=10, rng_seed=0)
    assert report["orthogonality"] > 0.1


def test_agent_block_shift_with_sentinels():
    n = 4
    ts = build_transform_set(finger_spec(n, 3))
    layout = ts.spec.obs_layout
    o = np.zeros(layout.total_width)
    for j in range(n):
        o[layout.agent_indices(j)] = 100.0 + j
    for i in range(n):
        out = ts.obs[i].apply(o)
        for j in range(n):
            # block j's content lands in slot (j - i) mod n
            assert np.all(out[layout.agent_indices((j - i) % n)] == 100.0 + j)


def test_transpose_is_inverse(tset, rng):
    for fam in (tset.obs, tset.act):
        for t in fam:
            v = rng.standard_normal((5, t.width))
            np.testing.assert_allclose(t.apply_transpose(t.apply(v)), v, atol=1e-12)
            np.testing.assert_allclose(t.apply_transpose(np.eye(t.width)).T, t.matrix().T, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(SPECS)), st.integers(0, 7), st.integers(0, 7),
       st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=1))
def test_group_law_property(name, i, j, seed_val):
    ts = build_transform_set(SPECS[name]())
    n = ts.n
    v = np.random.default_rng(int(abs(seed_val[0]) * 1000) % 2**32).standard_normal(ts.obs[0].width) * 10
    lhs = transform_at(ts.obs, j).apply(transform_at(ts.obs, i).apply(v))
    assert np.max(np.abs(lhs - ts.obs[(i + j) % n].apply(v))) <= 1e-12
    # norm preservation
    assert abs(np.linalg.norm(ts.obs[i % n].apply(v)) - np.linalg.norm(v)) <= 1e-9


def test_distributivity_exact(tset, rng):
    v, w = rng.standard_normal((2, 100, tset.obs[0].width))
    for t in tset.obs:
        lhs = t.apply(v + w)
        rhs = t.apply(v) + t.apply(w)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12


# -- layout errors -----------------------------------------------------------

def test_wrong_agent_cardinality_names_block():
    obs = BlockLayout((Block("arm0", 2, AGENT_INDEXED), Block("arm1", 2, AGENT_INDEXED)))
    act = BlockLayout((Block("u0", 1, AGENT_INDEXED), Block("u1", 1, AGENT_INDEXED), Block("u2", 1, AGENT_INDEXED)))
    with pytest.raises(LayoutError, match="arm0"):
        SymmetrySpec("cyclic", 3, obs, act)


def test_mixed_agent_widths_rejected():
    obs = BlockLayout((Block("leg0", 2, AGENT_INDEXED), Block("leg1", 3, AGENT_INDEXED)))
    with pytest.raises(LayoutError, match="leg0"):
        obs.validate(2)


@pytest.mark.parametrize("block", [
    dict(name="p", width=2, kind=CENTRAL_VARIANT, rule=PLANAR_ROTATE, pairs=((0, 2),)),
    dict(name="p", width=3, kind=CENTRAL_VARIANT, rule=PLANAR_ROTATE, pairs=((0, 1), (1, 2))),
    dict(name="p", width=2, kind=CENTRAL_VARIANT, rule=SIGN_FLIP, mask=(1,)),
    dict(name="q", width=4, kind=CENTRAL_VARIANT, rule="quaternion"),
    dict(name="p", width=0, kind=CENTRAL_VARIANT),
    dict(name="p", width=1, kind="weird"),
])
def test_bad_blocks(block):
    with pytest.raises(LayoutError, match=block["name"]):
        BlockLayout((Block(**block),))


def test_reflection_needs_two_elements():
    with pytest.raises(LayoutError):
        SymmetrySpec("reflection", 3, BlockLayout(()), BlockLayout(()))


def test_sign_flip_needs_even_order():
    obs = BlockLayout((Block("x", 1, CENTRAL_VARIANT, SIGN_FLIP, mask=(1,)),))
    with pytest.raises(LayoutError, match="x"):
        SymmetrySpec("cyclic", 3, obs, BlockLayout(()))


def test_spec_json_round_trip():
    for make in SPECS.values():
        spec = make()
        again = SymmetrySpec.from_json(spec.to_json())
        assert again == spec
        assert again.to_dict() == spec.to_dict()


def test_spec_json_rejects_unknown_keys():
    doc = finger_spec().to_dict()
    doc["extra"] = 1
    with pytest.raises(LayoutError):
        SymmetrySpec.from_dict(doc)
