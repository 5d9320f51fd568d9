import math

import numpy as np
import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from condvc.complexity import MacCounter, buffer_capacity, complexity_report, count_params
from condvc.frames import Frame
from condvc.metrics import RDCurve, aggregate_bpp, bd_rate, bpp, fmt_db, parse_db, psnr_from_mse, psnr_rgb

from _util import toy_codec

ANCHOR = RDCurve([0.05, 0.1, 0.2, 0.4, 0.8], [30.0, 32.5, 35.0, 37.2, 39.0], "anchor")


def _scaled(c: RDCurve, k: float) -> RDCurve:
    return RDCurve(c.bpp * k, c.psnr)


def bd_dense_oracle(a: RDCurve, b: RDCurve, n: int = 200_001) -> float:
    """Riemann average of the log-rate gap on a dense PSNR grid."""
    from scipy.interpolate import PchipInterpolator

    lo, hi = max(a.psnr.min(), b.psnr.min()), min(a.psnr.max(), b.psnr.max())
    grid = np.linspace(lo, hi, n)
    fa = PchipInterpolator(a.psnr, np.log10(a.bpp))(grid)
    fb = PchipInterpolator(b.psnr, np.log10(b.bpp))(grid)
    return 100 * (10 ** np.mean(fb - fa) - 1)


def test_psnr_examples():
    a = np.zeros((4, 4, 3))
    assert psnr_rgb(a, a) == math.inf
    assert psnr_rgb(a, np.ones_like(a)) == 0.0
    assert abs(psnr_from_mse(65.025, 255) - 30.0) < 1e-9
    f = Frame(np.zeros((5, 5, 3), np.float32))
    assert psnr_rgb(f, f) == math.inf
    with pytest.raises(ValueError):
        psnr_rgb(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-8, 1.0), st.floats(1.001, 10.0))
def test_psnr_monotone_in_mse(mse, k):
    assert psnr_from_mse(mse * k) < psnr_from_mse(mse)


def test_bpp_examples():
    assert bpp(1_036_800, 1080, 1920) == 0.5
    assert bpp(0, 10, 10) == 0.0
    assert aggregate_bpp([(100, 10, 10), (300, 10, 10)]) == 2.0
    with pytest.raises(ValueError):
        bpp(1, 0, 5)


def test_aggregate_is_order_invariant():
    items = [(120.0, 8, 8), (7.0, 4, 16), (333.0, 16, 16)]
    assert aggregate_bpp(items) == aggregate_bpp(items[::-1])


def test_db_serialization():
    assert fmt_db(math.inf) == "inf" and parse_db("inf") == math.inf
    assert fmt_db(31.5) == 31.5 and parse_db("31.5") == 31.5


def test_bd_rate_oracles():
    assert bd_rate(ANCHOR, ANCHOR) == 0.0
    assert abs(bd_rate(ANCHOR, _scaled(ANCHOR, 0.5)) + 50.0) < 0.1
    assert abs(bd_rate(ANCHOR, _scaled(ANCHOR, 2.0)) - 100.0) < 0.2


def test_bd_rate_matches_dense_oracle():
    test = RDCurve([0.06, 0.11, 0.19, 0.35, 0.7], [30.5, 33.0, 35.2, 37.5, 39.4])
    assert abs(bd_rate(ANCHOR, test) - bd_dense_oracle(ANCHOR, test)) < 1e-3


def test_bd_rate_antisymmetry():
    test = RDCurve([0.04, 0.09, 0.18, 0.38, 0.75], [30.2, 32.9, 35.3, 37.4, 39.1])
    ab, ba = bd_rate(ANCHOR, test), bd_rate(test, ANCHOR)
    assert abs(ab - (-ba / (1 + ba / 100))) < 0.5


def test_bd_rate_errors():
    short = RDCurve([0.1, 0.2, 0.4], [30, 32, 34])
    with pytest.raises(ValueError, match="4 points"):
        bd_rate(short, ANCHOR)
    far = RDCurve([0.1, 0.2, 0.4, 0.8], [50, 51, 52, 53])
    with pytest.raises(ValueError, match="overlap"):
        bd_rate(ANCHOR, far)


def test_rd_curve_validation():
    with pytest.raises(ValueError):
        RDCurve([0.1], [30])
    with pytest.raises(ValueError):
        RDCurve([0.1, 0.1], [30, 31])
    with pytest.raises(ValueError):
        RDCurve([0.1, 0.2], [30, math.inf])
    c = RDCurve.from_points([(0.4, 35), (0.1, 30)])
    assert list(c.bpp) == [0.1, 0.4]


# -- complexity -------------------------------------------------------------


def test_single_conv_report():
    conv = nn.Conv2d(8, 16, 3, padding=1)
    rep = complexity_report(conv, (64, 64), example=torch.zeros(1, 8, 64, 64))
    assert count_params(conv) == 1168
    assert rep.kmacs_per_pixel * 1e3 == 1152
    assert rep.params_m * 1e6 == pytest.approx(1168)


def test_empty_model_and_schema():
    rep = complexity_report(nn.Sequential(), (32, 32))
    assert (rep.params_m, rep.kmacs_per_pixel, rep.buffer_frfm) == (0, 0, 0)
    assert set(rep.to_dict()) >= {"params_m", "kmacs_per_pixel", "buffer_frfm"}


def test_deconv_and_linear_macs():
    de = nn.ConvTranspose2d(4, 2, 4, stride=2, padding=1)
    with MacCounter(de) as mc:
        de(torch.zeros(1, 4, 8, 8))
    assert mc.macs == 4 * 8 * 8 * 4 * 4 * 2
    lin = nn.Linear(10, 3)
    with MacCounter(lin) as mc:
        lin(torch.zeros(5, 10))
    assert mc.macs == 150


def test_buffer_capacity():
    assert buffer_capacity(toy_codec(active=False, feature_mod=False)) == 13
    assert buffer_capacity(toy_codec(active=False)) == 15


def test_codec_report_scales_with_resolution_only_in_macs():
    m = toy_codec(active=False)
    a, b = complexity_report(m, (64, 64)), complexity_report(m, (64, 128))
    assert a.params_m == b.params_m and a.kmacs_per_pixel > 0
    assert abs(a.kmacs_per_pixel - b.kmacs_per_pixel) / a.kmacs_per_pixel < 0.2
