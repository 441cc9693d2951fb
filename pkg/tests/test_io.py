import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmrconv.io import (
    GMR_MAGIC,
    FormatError,
    load_dataset,
    load_gmr,
    read_gmr,
    read_network,
    save_dataset,
    save_gmr,
    write_gmr,
    write_network,
)
from gmrconv.kernel import GmrLayerParams, SigmaParams, init_layer, ring_geometry


def _blob(p):
    buf = io.BytesIO()
    write_gmr(buf, p)
    return buf.getvalue()


def _same(a, b):
    return (a.geometry == b.geometry and a.weights.tobytes() == b.weights.tobytes()
            and a.sigma.log_sigma.tobytes() == b.sigma.log_sigma.tobytes())


@settings(max_examples=40)
@given(k=st.sampled_from([3, 5, 7, 9]), dims=st.sampled_from([2, 3]), ci=st.integers(1, 4),
       co=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_gmr_round_trip_bitwise(k, dims, ci, co, seed):
    rng = np.random.default_rng(seed)
    g = ring_geometry(k, dims=dims)
    p = GmrLayerParams(g, rng.normal(size=(co, ci, g.n)) * 10.0 ** rng.integers(-300, 300),
                       SigmaParams(rng.uniform(-4, 2, g.n)))
    assert _same(read_gmr(io.BytesIO(_blob(p))), p)


def test_gmr_file_round_trip(tmp_path):
    p = init_layer(3, 2, 7, seed=1)
    save_gmr(tmp_path / "a.gmr", p)
    assert _same(load_gmr(tmp_path / "a.gmr"), p)
    raw = (tmp_path / "a.gmr").read_bytes()
    assert raw[:8] == GMR_MAGIC
    (length,) = struct.unpack("<I", raw[8:12])
    assert len(raw) == 12 + length + 8 * (2 * 3 * 4 + 4)


def test_gmr_rejects_bad_magic():
    raw = bytearray(_blob(init_layer(1, 1, 3)))
    raw[0:1] = b"X"
    with pytest.raises(FormatError, match="magic"):
        read_gmr(io.BytesIO(bytes(raw)))


def test_gmr_rejects_truncation_and_trailing(tmp_path):
    raw = _blob(init_layer(2, 2, 5))
    for cut in (4, 10, 20, len(raw) - 1):
        with pytest.raises(FormatError):
            read_gmr(io.BytesIO(raw[:cut]))
    (tmp_path / "t.gmr").write_bytes(raw + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_gmr(tmp_path / "t.gmr")


def _with_header(header: bytes, payload=b""):
    return io.BytesIO(GMR_MAGIC + struct.pack("<I", len(header)) + header + payload)


@pytest.mark.parametrize("header", [
    b'{"dims":2,"k":5,"n":3,"c_in":1}',
    b'{"dims":2,"k":4,"n":3,"c_in":1,"c_out":1}',
    b'{"dims":2,"k":5,"n":3,"c_in":0,"c_out":1}',
    b'{"dims":2,"k":5,"n":3,"c_in":1,"c_out":1,"clip":[0.01,5.0]}',
    b"not json",
])
def test_gmr_rejects_bad_headers(header):
    with pytest.raises(FormatError):
        read_gmr(_with_header(header, b"\0" * 1024))


def test_network_container_round_trip():
    p = init_layer(2, 3, 5, seed=4)
    dense = {"kernel": np.random.default_rng(0).normal(size=(3, 2, 3, 3)), "b": np.arange(3.0)}
    manifest = [{"kind": "gmr_conv", "k": 5}, {"kind": "relu"}, {"kind": "dense_conv"}]
    buf = io.BytesIO()
    write_network(buf, manifest, [p, None, dense])
    m2, blocks = read_network(io.BytesIO(buf.getvalue()))
    assert m2 == manifest
    assert _same(blocks[0], p) and blocks[1] is None
    assert {k: v.tobytes() for k, v in blocks[2].items()} == {k: v.tobytes() for k, v in dense.items()}


def test_network_container_rejects_corruption():
    buf = io.BytesIO()
    write_network(buf, [{"kind": "relu"}], [None])
    raw = buf.getvalue()
    with pytest.raises(FormatError):
        read_network(io.BytesIO(b"GMRNET02" + raw[8:]))
    with pytest.raises(FormatError):
        read_network(io.BytesIO(raw + b"x"))
    with pytest.raises(ValueError):
        write_network(io.BytesIO(), [{}], [])


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(5, 1, 6, 6))
    y = np.array([0, 1, 2, 3, 0])
    save_dataset(tmp_path / "d.bin", X, y, {"seed": 3})
    X2, y2, meta = load_dataset(tmp_path / "d.bin")
    assert X2.tobytes() == X.tobytes() and y2.tolist() == y.tolist() and meta == {"seed": 3}
    with pytest.raises(ValueError):
        save_dataset(tmp_path / "e.bin", X, y[:2])
