import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from tensorgee.tensor_core import (CpModel, DenseTensor, apply_perm, block_design, inner,
                                   khatri_rao, khatri_rao_chain, matricize, mode_design,
                                   normalize, normalize_jacobian, outer, perm_map,
                                   reconstruct, tensor_inner, vec)

dims_st = st.lists(st.integers(1, 4), min_size=1, max_size=4).map(tuple)


def brute_matricize(arr, d):
    """Entry-by-entry unfolding: column index runs over the other modes, earliest fastest."""
    dims = arr.shape
    others = [k for k in range(len(dims)) if k != d]
    ncol = int(np.prod([dims[k] for k in others]))
    out = np.zeros((dims[d], ncol))
    for idx in itertools.product(*[range(p) for p in dims]):
        col, stride = 0, 1
        for k in others:
            col += idx[k] * stride
            stride *= dims[k]
        out[idx[d], col] = arr[idx]
    return out


def brute_vec(arr):
    dims = arr.shape
    out = np.zeros(arr.size)
    for idx in itertools.product(*[range(p) for p in dims]):
        pos, stride = 0, 1
        for k, i in enumerate(idx):
            pos += i * stride
            stride *= dims[k]
        out[pos] = arr[idx]
    return out


def random_model(rng, dims, rank):
    return CpModel(tuple(rng.standard_normal((p, rank)) for p in dims))


@settings(max_examples=60, deadline=None)
@given(dims=dims_st, seed=st.integers(0, 2**31 - 1))
def test_vec_and_matricize_match_index_enumeration(dims, seed):
    arr = np.random.default_rng(seed).standard_normal(dims)
    t = DenseTensor.from_array(arr)
    assert_array_equal(vec(t), brute_vec(arr))
    for d in range(len(dims)):
        assert_array_equal(matricize(t, d), brute_matricize(arr, d))
    assert_array_equal(t.to_array(), arr)


def test_matricize_known_3way():
    arr = np.arange(24, dtype=float).reshape((2, 3, 4), order="F")
    t = DenseTensor.from_array(arr)
    assert_array_equal(vec(t), np.arange(24))
    # mode-0 unfolding of a column-major tensor is a plain reshape
    assert_array_equal(matricize(t, 0), np.arange(24).reshape(2, 12, order="F"))
    m1 = matricize(t, 1)
    assert m1.shape == (3, 8)
    assert m1[2, 5] == arr[1, 2, 2]


@settings(max_examples=50, deadline=None)
@given(p=st.integers(1, 5), q=st.integers(1, 5), r=st.integers(1, 4),
       seed=st.integers(0, 2**31 - 1))
def test_khatri_rao_columns_are_kronecker(p, q, r, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((p, r)), rng.standard_normal((q, r))
    kr = khatri_rao(a, b)
    assert kr.shape == (p * q, r)
    for k in range(r):
        assert_allclose(kr[:, k], np.kron(a[:, k], b[:, k]), atol=1e-14)


def test_khatri_rao_shape_mismatch():
    with pytest.raises(ValueError):
        khatri_rao(np.ones((2, 2)), np.ones((2, 3)))


def test_khatri_rao_chain_single_mode_is_ones():
    f = np.ones((3, 2))
    assert_array_equal(khatri_rao_chain([f], skip=0), np.ones((1, 2)))


@settings(max_examples=50, deadline=None)
@given(dims=dims_st, rank=st.integers(1, 3), seed=st.integers(0, 2**31 - 1))
def test_reconstruct_is_sum_of_outer_products(dims, rank, seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, dims, rank)
    expected = sum(outer(*[f[:, r] for f in model.factors]).to_array() for r in range(rank))
    assert_allclose(reconstruct(model).to_array(), expected, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(dims=dims_st, rank=st.integers(1, 3), seed=st.integers(0, 2**31 - 1))
def test_matricization_of_cp_model(dims, rank, seed):
    # B_(d) = B_d (B_D ⊙ ... ⊙ B_{d+1} ⊙ B_{d-1} ⊙ ... ⊙ B_1)'
    rng = np.random.default_rng(seed)
    model = random_model(rng, dims, rank)
    t = reconstruct(model)
    for d in range(len(dims)):
        rhs = model.factors[d] @ khatri_rao_chain(model.factors, skip=d).T
        assert_allclose(matricize(t, d), rhs, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(dims=dims_st, rank=st.integers(1, 3), seed=st.integers(0, 2**31 - 1))
def test_mode_design_reproduces_inner_product(dims, rank, seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, dims, rank)
    x = DenseTensor.from_array(rng.standard_normal(dims))
    target = inner(reconstruct(model), x)
    for d in range(len(dims)):
        row = mode_design(x, model, d)
        assert_allclose(row @ model.factors[d].ravel(order="F"), target, rtol=1e-10, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(dims=dims_st, rank=st.integers(1, 3), seed=st.integers(0, 2**31 - 1))
def test_block_design_matches_mode_design(dims, rank, seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, dims, rank)
    x = rng.standard_normal((3, 2) + dims)
    for d in range(len(dims)):
        batched = block_design(x, model.factors, d)
        for i, j in itertools.product(range(3), range(2)):
            row = mode_design(DenseTensor.from_array(x[i, j]), model, d)
            assert_allclose(batched[i, j], row, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(dims=dims_st, seed=st.integers(0, 2**31 - 1))
def test_perm_map_relates_vec_and_unfolding(dims, seed):
    t = DenseTensor.from_array(np.random.default_rng(seed).standard_normal(dims))
    for d in range(len(dims)):
        pi = perm_map(dims, d)
        unfolded = matricize(t, d).ravel(order="F")
        assert_array_equal(np.sort(pi), np.arange(t.values.size))
        assert_array_equal(vec(t)[pi], unfolded)
        assert_array_equal(apply_perm(pi, unfolded), vec(t))


def test_perm_map_mode0_is_identity():
    assert_array_equal(perm_map((3, 4, 2), 0), np.arange(24))


def test_tensor_inner_batched():
    rng = np.random.default_rng(0)
    b = rng.standard_normal((3, 4))
    x = rng.standard_normal((5, 2, 3, 4))
    expected = np.array([[np.sum(x[i, j] * b) for j in range(2)] for i in range(5)])
    assert_allclose(tensor_inner(x, b), expected, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(dims=st.lists(st.integers(2, 5), min_size=2, max_size=4).map(tuple),
       rank=st.integers(1, 3), seed=st.integers(0, 2**31 - 1))
def test_normalize_keeps_tensor_and_fixes_gauge(dims, rank, seed):
    model = random_model(np.random.default_rng(seed), dims, rank)
    nm = normalize(model)
    assert_allclose(nm.full(), model.full(), atol=1e-10)
    for f in nm.factors[:-1]:
        assert_allclose(np.linalg.norm(f, axis=0), 1.0, atol=1e-12)
        lead = f[np.argmax(np.abs(f), axis=0), np.arange(rank)]
        assert np.all(lead > 0)
    assert_allclose(normalize(nm).beta(), nm.beta(), atol=1e-12)


def test_normalize_zero_component():
    model = CpModel((np.array([[1.0, 0.0], [2.0, 0.0]]), np.array([[3.0, 5.0], [4.0, 6.0]])))
    nm = normalize(model)
    assert_array_equal(nm.factors[1][:, 1], 0.0)
    assert_allclose(nm.full(), model.full())


def test_normalize_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    model = normalize(random_model(rng, (3, 4, 2), 2))
    beta = model.beta()
    jac = normalize_jacobian(model)
    h = 1e-6
    fd = np.zeros_like(jac)
    for k in range(beta.size):
        step = np.zeros_like(beta)
        step[k] = h
        plus = normalize(CpModel.from_beta(beta + step, model.dims, model.rank)).beta()
        minus = normalize(CpModel.from_beta(beta - step, model.dims, model.rank)).beta()
        fd[:, k] = (plus - minus) / (2 * h)
    assert_allclose(jac, fd, atol=1e-6)


def test_normalize_jacobian_kills_scale_directions():
    rng = np.random.default_rng(4)
    model = normalize(random_model(rng, (3, 4), 1))
    b1, b2 = model.factors[0][:, 0], model.factors[1][:, 0]
    direction = np.concatenate([b1, -b2])
    assert_allclose(normalize_jacobian(model) @ direction, 0.0, atol=1e-12)


def test_beta_round_trip():
    rng = np.random.default_rng(5)
    model = random_model(rng, (2, 3, 4), 2)
    back = CpModel.from_beta(model.beta(), model.dims, model.rank)
    for a, b in zip(model.factors, back.factors):
        assert_array_equal(a, b)
    with pytest.raises(ValueError):
        CpModel.from_beta(np.ones(6), (2, 3), 1)


def test_validation_errors():
    with pytest.raises(ValueError):
        DenseTensor((2, 2), np.ones(3))
    with pytest.raises(ValueError):
        DenseTensor((), np.ones(1))
    with pytest.raises(ValueError):
        CpModel((np.ones((2, 1)), np.ones((2, 2))))
    t = DenseTensor.from_array(np.ones((2, 2)))
    with pytest.raises(ValueError):
        matricize(t, 2)
    with pytest.raises(ValueError):
        inner(t, DenseTensor.from_array(np.ones((2, 3))))
    with pytest.raises(ValueError):
        mode_design(t, CpModel((np.ones((3, 1)), np.ones((2, 1)))), 0)
