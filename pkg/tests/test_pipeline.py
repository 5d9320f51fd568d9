import numpy as np
import pytest

from condvc.entropy.bitstream import Bitstream, BitstreamError, ChunkType
from condvc.frames import Frame
from condvc.model import ReferenceState
from condvc.pipeline import CodingSession, decode_gop, encode_gop, lambda_index

from _util import moving_frames, toy_codec


@pytest.fixture(scope="module")
def coded():
    model = toy_codec(seed=7)
    frames = moving_frames(6, 40, seed=7)
    return model, frames, encode_gop(model, frames, gop=3, lam_idx=1)


def test_gop_structure_and_schema(coded):
    model, frames, res = coded
    assert "".join(p.kind for p in res.points) == "IPPIPP"
    kinds = [k for k, _ in res.bitstream.chunks]
    assert kinds.count(ChunkType.INTRA) == 2 and kinds.count(ChunkType.INTER) == 4
    d = res.points[0].to_dict()
    assert set(d) == {"frame", "type", "bits", "est_bits", "bpp", "psnr"}
    assert all(r.shape == (40, 40) for r in res.reconstructions)
    assert res.total_bits == 8 * sum(len(p) for _, p in res.bitstream.chunks)


def test_decode_is_bit_identical_and_psnr_matches(coded):
    model, frames, res = coded
    decoded = decode_gop(res.bitstream.to_bytes(), model)
    for enc, dec, point, orig in zip(res.reconstructions, decoded, res.points, frames):
        np.testing.assert_array_equal(enc.data, dec.data)
        diff = np.mean((orig.data.astype(np.float64) - dec.data) ** 2)
        assert abs(10 * np.log10(1 / diff) - point.psnr) < 1e-9


def test_estimation_only_mode(coded):
    model, frames, res = coded
    est = encode_gop(model, frames, gop=3, lam_idx=1, arithmetic=False)
    assert est.bitstream is None
    assert [p.bits for p in est.points] == [p.est_bits for p in est.points]
    for a, b in zip(est.reconstructions, res.reconstructions):
        np.testing.assert_array_equal(a.data, b.data)


def test_decode_errors(coded):
    model, frames, res = coded
    data = res.bitstream.to_bytes()
    with pytest.raises(BitstreamError):
        decode_gop(data[:-5], model)
    with pytest.raises(BitstreamError, match="no frames"):
        decode_gop(b"", model)
    bad = Bitstream(40, 40, 3, 1)
    bad.add(ChunkType.MOTION, b"")
    with pytest.raises(BitstreamError, match="intra"):
        decode_gop(bad, model)
    with pytest.raises(ValueError, match="lambda"):
        decode_gop(data, model, model_lambda=2048)


def test_encode_errors():
    model = toy_codec(seed=0)
    with pytest.raises(ValueError):
        encode_gop(model, [], 4, 0)
    frames = [Frame(np.zeros((32, 32, 3), np.float32)), Frame(np.zeros((32, 40, 3), np.float32))]
    with pytest.raises(ValueError, match="size changed"):
        encode_gop(model, frames, 4, 0, arithmetic=False)
    with pytest.raises(ValueError):
        encode_gop(model, frames[:1], 4, 0, model_lambda=512)
    with pytest.raises(ValueError):
        lambda_index(300)
    assert lambda_index(256) == 0 and lambda_index(2048) == 3


def test_session_resets_at_gop_boundary():
    s = CodingSession(2, 0)
    assert s.next_is_intra
    s.advance(ReferenceState(t=1))
    assert not s.next_is_intra and s.state.t == 1
    s.advance(ReferenceState(t=2))
    assert s.next_is_intra and s.state.t == 0
    with pytest.raises(ValueError):
        CodingSession(0, 0)
    with pytest.raises(ValueError):
        CodingSession(4, 9)
