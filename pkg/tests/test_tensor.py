import math
import struct

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from attnssm.tensor import (DimensionError, FormatError, RngState, load_checkpoint, load_tensor,
                            log_softmax_lastdim, matmul, save_checkpoint, save_tensor, softmax_lastdim)


def naive_matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def test_matmul_matches_triple_loop_exactly(g):
    # dyadic values make every partial sum exact in any order
    a = g.integers(-8, 9, (5, 7)) / 4.0
    b = g.integers(-8, 9, (7, 3)) / 8.0
    assert np.array_equal(matmul(a, b), naive_matmul(a, b))


def test_matmul_random_close(g):
    a, b = g.standard_normal((6, 9)), g.standard_normal((9, 4))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-12, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_softmax_against_mpmath(g):
    x = g.standard_normal((4, 7)) * 5
    got = softmax_lastdim(x)
    for row, out in zip(x, got):
        ex = [mpmath.exp(mpmath.mpf(float(v))) for v in row]
        s = mpmath.fsum(ex)
        ref = np.array([float(e / s) for e in ex])
        np.testing.assert_allclose(out, ref, rtol=1e-14, atol=0)


def test_log_softmax_known_values():
    lp = log_softmax_lastdim(np.log(np.array([2.0, 1.0, 1.0])))
    np.testing.assert_allclose(np.exp(lp), [0.5, 0.25, 0.25], rtol=1e-15)


def test_softmax_extreme_logits_stay_finite():
    out = softmax_lastdim(np.array([1e308, -1e308, 0.0]))
    assert np.all(np.isfinite(out)) and out[0] == 1.0


def test_softmax_empty_raises():
    with pytest.raises(DimensionError):
        softmax_lastdim(np.zeros((3, 0)))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, min_side=1, max_side=6),
                  elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    s = softmax_lastdim(x)
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.exp(log_softmax_lastdim(x)), s, atol=1e-12)


def test_rng_reproducible_and_split_disjoint():
    a = RngState(7).generator().standard_normal(8)
    b = RngState(7).generator().standard_normal(8)
    assert np.array_equal(a, b)
    c = RngState(7).split(1).generator().standard_normal(8)
    d = RngState(7).split(2).generator().standard_normal(8)
    assert not np.array_equal(a, c) and not np.array_equal(c, d)
    assert RngState(7).split(1, 5) == RngState(7).split(1).split(5)


def test_rng_split_tags_order_matters():
    assert RngState(0).split(1, 2) != RngState(0).split(2, 1)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(), (0,), (3,), (2, 3, 4)])
def test_tensor_roundtrip(tmp_path, dtype, shape, g):
    t = g.standard_normal(shape).astype(dtype)
    save_tensor(t, tmp_path / "t.atsm")
    back = load_tensor(tmp_path / "t.atsm")
    assert back.dtype == dtype and back.shape == t.shape and np.array_equal(back, t)


def test_tensor_header_layout(tmp_path):
    save_tensor(np.zeros((2, 5), np.float32), tmp_path / "t.atsm")
    raw = (tmp_path / "t.atsm").read_bytes()
    assert raw[:4] == b"ATSM"
    assert struct.unpack_from("<IBB2Q", raw, 4) == (1, 0, 2, 2, 5)
    assert len(raw) == 4 + 4 + 2 + 16 + 40


def test_bad_magic_reports_offset_zero(tmp_path):
    p = tmp_path / "bad.atsm"
    p.write_bytes(b"XXXX" + b"\0" * 20)
    with pytest.raises(FormatError) as exc:
        load_tensor(p)
    assert exc.value.offset == 0


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.atsm"
    save_tensor(np.ones(10), p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_tensor(p)


def test_checkpoint_roundtrip_preserves_order(tmp_path, g):
    recs = [("b.weight", g.standard_normal((3, 2))), ("a", np.arange(4, dtype=np.float32))]
    save_checkpoint(recs, tmp_path / "c.atsm")
    back = load_checkpoint(tmp_path / "c.atsm")
    assert list(back) == ["b.weight", "a"]
    for k, v in recs:
        assert np.array_equal(back[k], v)


def test_checkpoint_truncated_record(tmp_path):
    p = tmp_path / "c.atsm"
    save_checkpoint([("w", np.ones(3))], p)
    p.write_bytes(p.read_bytes() + b"\x05\x00")
    with pytest.raises(FormatError):
        load_checkpoint(p)
