import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def direct_conv(x, w, b, stride=1, pad=0):
    """Six nested loops over a single [C,H,W] image; float64 accumulation."""
    c, h, wd = x.shape
    out_c, _, k, _ = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    y = np.zeros((out_c, ho, wo))
    for f in range(out_c):
        for oy in range(ho):
            for ox in range(wo):
                s = 0.0
                for ch in range(c):
                    for ki in range(k):
                        for kj in range(k):
                            s += w[f, ch, ki, kj] * xp[ch, oy * stride + ki, ox * stride + kj]
                y[f, oy, ox] = s + b[f]
    return y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
