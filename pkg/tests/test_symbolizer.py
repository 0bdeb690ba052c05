import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rosa.errors import ConfigurationError, InputError
from rosa.oracle import binarize_reference
from rosa.symbolizer import (
    AdapterParams,
    pack_bits,
    project_and_binarize,
    read_symbol_stream,
    unpack_symbol,
    unpack_symbols,
    write_symbol_stream,
)


def identity_params(dim):
    eye = np.eye(dim)
    return AdapterParams(w_q=eye, w_k=eye.copy(), w_v=eye.copy())


def test_zero_input_gives_zero_bits():
    h = np.zeros((2, 3, 4))
    qvec, _, _, qbit, kbit, vbit = project_and_binarize(h, identity_params(4), normalize=False)
    assert np.all(qvec == 0)
    assert np.all(qbit == 0) and np.all(kbit == 0) and np.all(vbit == 0)


def test_threshold_is_strict():
    h = np.array([[[0.3, -0.3, 0.0, 1e-12]]])
    _, _, _, qbit, _, _ = project_and_binarize(h, identity_params(4), normalize=False)
    assert qbit[0, 0].tolist() == [1, 0, 0, 1]


def test_bits_match_elementwise_reference():
    rng = np.random.default_rng(7)
    h = rng.normal(size=(2, 5, 8))
    qvec, kvec, vvec, qbit, kbit, vbit = project_and_binarize(
        h, identity_params(8), normalize=False
    )
    np.testing.assert_array_equal(qbit, binarize_reference(h))
    np.testing.assert_array_equal(kbit, binarize_reference(kvec))
    np.testing.assert_array_equal(vbit, binarize_reference(vvec))


def test_binarization_scale_invariant():
    rng = np.random.default_rng(3)
    h = rng.normal(size=(1, 4, 6))
    _, _, _, b1, _, _ = project_and_binarize(h, identity_params(6), normalize=False)
    _, _, _, b2, _, _ = project_and_binarize(2.5 * h, identity_params(6), normalize=False)
    np.testing.assert_array_equal(b1, b2)


def test_dimension_mismatch_is_config_error():
    with pytest.raises(ConfigurationError):
        project_and_binarize(np.zeros((1, 2, 4)), identity_params(6))


def test_nonfinite_input_rejected():
    h = np.zeros((1, 2, 4))
    h[0, 0, 0] = np.nan
    with pytest.raises(InputError):
        project_and_binarize(h, identity_params(4))


def test_pack_examples():
    bits = np.array([1, 0, 1, 1], dtype=np.uint8).reshape(1, 1, 4)
    assert pack_bits(bits, 4)[0, 0, 0] == 13
    assert pack_bits(np.array([[[0, 0]]], dtype=np.uint8), 2)[0, 0, 0] == 0
    assert pack_bits(np.array([[[1, 1]]], dtype=np.uint8), 2)[0, 0, 0] == 3


def test_pack_requires_divisible_width():
    with pytest.raises(ConfigurationError):
        pack_bits(np.zeros((1, 1, 5), dtype=np.uint8), 2)


def test_unpack_symbol_examples():
    assert unpack_symbol(13, 4) == [1, 0, 1, 1]
    assert unpack_symbol(0, 7) == [0] * 7
    with pytest.raises(InputError):
        unpack_symbol(16, 4)


@pytest.mark.parametrize("m", [2, 4, 8])
def test_exhaustive_round_trip(m):
    symbols = np.arange(1 << m).reshape(1, -1, 1)
    bits = unpack_symbols(symbols, m)
    repacked = pack_bits(bits.reshape(1, -1, m), m)
    np.testing.assert_array_equal(repacked, symbols)


@given(
    st.integers(min_value=1, max_value=8).flatmap(
        lambda m: st.tuples(
            st.just(m),
            st.lists(
                st.lists(st.integers(0, 1), min_size=m, max_size=m),
                min_size=1,
                max_size=32,
            ),
        )
    )
)
@settings(max_examples=60, deadline=None)
def test_pack_unpack_identity_property(case):
    m, rows = case
    bits = np.array(rows, dtype=np.uint8).reshape(1, len(rows), m)
    symbols = pack_bits(bits, m)
    np.testing.assert_array_equal(unpack_symbols(symbols, m).reshape(bits.shape), bits)


def test_balanced_bits_under_symmetric_input():
    rng = np.random.default_rng(11)
    h = rng.normal(size=(1, 125_000, 1))
    _, _, _, qbit, _, _ = project_and_binarize(h, identity_params(1), normalize=False)
    n = qbit.size
    p_hat = qbit.mean()
    sigma = np.sqrt(0.25 / n)
    assert abs(p_hat - 0.5) < 3 * sigma + 1e-12


def test_stream_file_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    symbols = rng.integers(0, 16, size=(2, 7, 3))
    path = tmp_path / "q.rosa"
    write_symbol_stream(path, symbols, 4)
    back, m = read_symbol_stream(path)
    assert m == 4
    np.testing.assert_array_equal(back, symbols)


def test_stream_file_header_layout(tmp_path):
    path = tmp_path / "s.rosa"
    write_symbol_stream(path, np.zeros((1, 2, 3), dtype=np.int64), 4)
    raw = path.read_bytes()
    assert raw[:4] == b"ROSA"
    assert int.from_bytes(raw[4:6], "little") == 1
    dims = [int.from_bytes(raw[6 + 4 * i : 10 + 4 * i], "little") for i in range(4)]
    assert dims == [1, 2, 3, 4]
    assert len(raw) == 22 + 1 * 2 * 3 * 2
