import pytest
import torch

from condvc.checkpoint import checkpoint_name, load_checkpoint, read_checkpoint, save_checkpoint
from condvc.codec import CANFCodec, HyperpriorCodec
from condvc.config import ModelConfig
from condvc.layers import modulate, modulation_sites
from condvc.mcnet import FeatureExtractor, GridNet, Modulator, MultiScaleMCNet, SigmaExtractor
from condvc.model import FRAME_DEPTH, ReferenceState, VideoCodec, clamp_pixels
from condvc.quant import QuantMode, quantize, ste_round

from _util import randomize, toy_codec

# -- quantization -----------------------------------------------------------


def test_ste_round_forward_and_gradient():
    x = torch.tensor([0.4, 1.6, -2.5], requires_grad=True)
    y = ste_round(x)
    assert torch.equal(y, torch.round(x.detach()))
    y.sum().backward()
    assert torch.equal(x.grad, torch.ones(3))


def test_quantize_modes():
    y = torch.randn(2, 4, 3, 3) * 3
    mean = torch.randn_like(y)
    assert torch.equal(quantize(y, QuantMode.ROUND_STE, training=False, mean=mean), torch.round(y - mean) + mean)
    assert torch.equal(quantize(y, "round-ste", training=True, mean=mean), torch.round(y - mean) + mean)
    noisy = quantize(y, QuantMode.NOISE, training=True)
    assert ((noisy - y).abs() <= 0.5).all()
    # noise mode never leaks into inference
    assert torch.equal(quantize(y, QuantMode.NOISE, training=False), torch.round(y))


def test_clamp_pixels_is_straight_through():
    x = torch.tensor([-0.5, 0.3, 1.7], requires_grad=True)
    y = clamp_pixels(x)
    assert torch.equal(y.detach(), torch.tensor([0.0, 0.3, 1.0]))
    y.sum().backward()
    assert torch.equal(x.grad, torch.ones(3))


# -- codecs -----------------------------------------------------------------


def test_canf_is_exactly_invertible_without_quantization():
    codec = randomize(CANFCodec(3, 16, 8, 12, use_context=False), std=0.05, seed=3)
    x, cond = torch.rand(2, 3, 32, 32, dtype=torch.float64), torch.rand(2, 3, 32, 32, dtype=torch.float64)
    codec.double()
    y2, _, x2 = codec.canf_forward(x, cond)
    assert torch.allclose(codec.canf_inverse(y2, cond, x2=x2), x, atol=1e-10)


def test_canf_shape_checks():
    codec = CANFCodec(3, 16, 8, 12)
    with pytest.raises(ValueError):
        codec.canf_forward(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 16, 32))
    with pytest.raises(ValueError):
        codec.canf_forward(torch.rand(1, 2, 32, 32), torch.rand(1, 2, 32, 32))
    with pytest.raises(ValueError):
        codec.canf_inverse(torch.rand(1, 16, 3, 2), torch.rand(1, 3, 32, 32))


def test_canf_code_and_decode_agree():
    codec = randomize(CANFCodec(3, 16, 8, 12, temporal_ch=16), std=0.05, seed=4).eval()
    x, cond = torch.rand(1, 3, 64, 64), torch.rand(1, 3, 64, 64)
    tctx = torch.randn(1, 16, 4, 4)
    with torch.no_grad():
        out = codec(x, cond, temporal_ctx=tctx, code=True)
        dec = codec.decode(out.payload, cond, temporal_ctx=tctx)
    assert torch.equal(out.reconstruction, dec.reconstruction)


def test_hyperprior_codec_roundtrip():
    codec = randomize(HyperpriorCodec(3, 16, 8, 12), std=0.05, seed=5).eval()
    x = torch.rand(1, 3, 64, 128)
    with torch.no_grad():
        out = codec(x, code=True)
        dec = codec.decode(out.payload, (64, 128))
    assert torch.equal(out.reconstruction, dec.reconstruction)
    assert out.rate_bits.item() > 0


# -- motion compensation and modulation -------------------------------------


def test_modulate_identity_and_errors():
    x = torch.randn(2, 4, 5, 5)
    assert torch.equal(modulate(x, torch.ones(2, 4), torch.zeros(2, 4)), x)
    out = modulate(x, torch.full((4,), 2.0), torch.ones(4))
    assert torch.allclose(out, 2 * x + 1)
    with pytest.raises(ValueError):
        modulate(x, torch.ones(2, 3), torch.zeros(2, 3))


def test_modulator_starts_at_identity():
    sites = {"a": 4, "b": 6}
    mod = Modulator(sites, dim=8, width=8)
    out = mod(torch.randn(2, 2, 16, 16))
    for name, ch in sites.items():
        alpha, beta = out[name]
        assert torch.equal(alpha, torch.ones(2, ch)) and torch.equal(beta, torch.zeros(2, ch))
    with pytest.raises(KeyError):
        mod.make_alpha_beta(torch.zeros(1, 8), "nope")
    with pytest.raises(ValueError):
        SigmaExtractor(8)(None)


def test_feature_pyramid_shapes():
    pyr = FeatureExtractor((4, 6, 8))(torch.rand(1, 3, 32, 32))
    assert [tuple(f.shape[1:]) for f in pyr.levels] == [(4, 32, 32), (6, 16, 16), (8, 8, 8)]


def test_gridnet_output_and_sites():
    net = GridNet((7, 10, 12), (4, 6, 8), site_prefix="grid", modulate_out=True)
    ins = [torch.rand(1, 7, 16, 16), torch.rand(1, 10, 8, 8), torch.rand(1, 12, 4, 4)]
    assert net(ins).shape == (1, 3, 16, 16)
    sites = modulation_sites(net)
    assert "grid_out" in sites and any(s.startswith("grid") and s != "grid_out" for s in sites)


def test_mcnet_targets():
    with pytest.raises(ValueError):
        MultiScaleMCNet((4, 6, 8), ("bogus",))
    plain = modulation_sites(MultiScaleMCNet((4, 6, 8), ()))
    assert plain == {}
    feats = modulation_sites(MultiScaleMCNet((4, 6, 8), ("features",)))
    assert feats and all(s.startswith("feat_") for s in feats)
    last = modulation_sites(MultiScaleMCNet((4, 6, 8), ("grid_last",)))
    assert set(last) == {"grid_out"}


def test_model_sites_follow_config():
    assert toy_codec(active=False, feature_mod=False).modulator is None
    m = toy_codec(active=False, mod_targets=("inter",))
    assert m.modulator is not None and all(s.startswith("inter") for s in m.modulator.sites)


def test_identity_modulation_changes_nothing():
    torch.manual_seed(0)
    a = toy_codec(seed=1, feature_mod=True)
    b = VideoCodec(ModelConfig.toy(feature_mod=False))
    b.load_state_dict({k: v for k, v in a.state_dict().items() if not k.startswith("modulator.")})
    with torch.no_grad():
        # restore the identity (alpha 1, beta 0) the jitter disturbed
        for name in a.modulator.sites:
            a.modulator.alpha[name].weight.zero_()
            a.modulator.alpha[name].bias.fill_(1.0)
            a.modulator.beta[name].weight.zero_()
            a.modulator.beta[name].bias.zero_()
    a.eval(), b.eval()
    x = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        sa = ReferenceState().after_intra(a.code_iframe(x).reconstruction)
        sb = ReferenceState().after_intra(b.code_iframe(x).reconstruction)
        ra, rb = a.code_pframe(x, sa), b.code_pframe(x, sb)
    assert torch.allclose(ra.reconstruction, rb.reconstruction, atol=1e-6)


# -- references and full model ----------------------------------------------


def test_reference_state_depth_and_buffer():
    s = ReferenceState().after_intra(torch.zeros(1, 3, 8, 8))
    assert s.depth == (1, 0) and s.t == 1
    from condvc.flow import PropagatedFlowState

    for i in range(5):
        s = s.after_inter(torch.zeros(1, 3, 8, 8), torch.zeros(1, 2, 8, 8), PropagatedFlowState(torch.zeros(1, 2, 8, 8)))
    assert s.depth == (FRAME_DEPTH, 2) and s.t == 6
    assert s.buffer_maps() == 9 + 4 + 2


def test_pframe_needs_reference():
    m = toy_codec(active=False)
    with pytest.raises(ValueError):
        m.code_pframe(torch.rand(1, 3, 64, 64), ReferenceState())


def test_model_decode_matches_encode_over_gop():
    m = toy_codec(seed=2).eval()
    frames = [torch.rand(1, 3, 64, 64) for _ in range(4)]
    with torch.no_grad():
        i = m.code_iframe(frames[0], code=True)
        enc_state = ReferenceState().after_intra(i.reconstruction)
        dec_state = ReferenceState().after_intra(m.decode_iframe(i.payload, (64, 64)).reconstruction)
        for x in frames[1:]:
            r = m.code_pframe(x, enc_state, code=True)
            d = m.decode_pframe(r.motion.payload, r.inter.payload, dec_state)
            assert torch.equal(r.reconstruction, d.reconstruction)
            enc_state, dec_state = r.state, d.state


def test_parameter_groups_partition_known_modules():
    m = toy_codec(active=False)
    groups = m.parameter_groups()
    assert groups["iframe"] and groups["mcnet"] and groups["modulation"]
    assert all(n.startswith("inter.") or n.startswith("motion.") for n in groups["entropy_context"])


# -- checkpoints ------------------------------------------------------------


def test_checkpoint_roundtrip_and_partial_load(tmp_path):
    m = toy_codec(seed=3, feature_mod=False)
    path = save_checkpoint(tmp_path / checkpoint_name(2, 512), m, 512, 2)
    assert path.name == "stage2_lambda512.ckpt"
    manifest, arrays = read_checkpoint(path)
    assert manifest["lambda"] == 512 and manifest["config"]["feature_mod"] is False
    back, man = load_checkpoint(path)
    for k, v in m.state_dict().items():
        assert torch.equal(v, back.state_dict()[k])
    # a later stage adds the modulator; everything else loads by name
    bigger, man = load_checkpoint(path, ModelConfig.toy(feature_mod=True))
    report = man["load_report"]
    assert report.missing and all(n.startswith("modulator.") or "grid" in n or "feat" in n for n in report.missing)
    assert not report.unexpected
    with pytest.raises(FileNotFoundError):
        read_checkpoint(tmp_path / "nope.ckpt")
