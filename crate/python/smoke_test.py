"""Smoke test for the mvres Python bindings.

Build first with `pip install --no-build-isolation -e crates/python`.
"""

import math
import random
import tempfile

import mvres_py as mv


def textured(width, height, seed):
    rng = random.Random(seed)
    y = bytearray()
    for r in range(height):
        for c in range(width):
            v = 128 + 50 * math.sin(0.11 * c + 0.07 * r) + rng.uniform(-3, 3)
            y.append(max(0, min(255, round(v))))
    chroma = bytes([128]) * (width * height // 2)
    return mv.Frame(width, height, bytes(y) + chroma)


def shifted(frame, dx):
    data = frame.to_bytes()
    w, h = frame.width, frame.height
    y = bytearray(data[: w * h])
    out = bytearray(w * h)
    for r in range(h):
        for c in range(w):
            out[r * w + c] = y[r * w + min(w - 1, max(0, c + dx))]
    return mv.Frame(w, h, bytes(out) + data[w * h :])


def main():
    with tempfile.TemporaryDirectory() as tmp:
        mv.init_weights(tmp, preset="compact", seed=3)
        ref = textured(64, 64, 1)
        tgt = shifted(ref, 2)

        codec = mv.Codec(tmp, 2)
        blob, recon, stats = codec.encode(ref, tgt)
        assert stats["q"] == 2 and stats["container_bytes"] == len(blob)
        assert 0.0 <= stats["msssim"] <= 1.0
        decoded = codec.decode(blob, ref)
        assert decoded == recon, "decoder must reproduce the encoder reconstruction"
        blob2, _, _ = codec.encode(ref, tgt)
        assert blob == blob2, "encoding is deterministic"

        try:
            codec.decode(blob[:-3], ref)
        except mv.FormatError:
            pass
        else:
            raise AssertionError("truncated stream accepted")

        w, h = 64, 64
        flow = ([1.5] * (w * h), [-0.5] * (w * h))
        blob3, recon3, _ = codec.encode(ref, tgt, flow=flow)
        assert codec.decode(blob3, ref) == recon3

    assert mv.ms_ssim(ref, ref) == 1.0
    assert mv.psnr(ref, ref) == math.inf
    assert 0.0 < mv.ms_ssim(ref, tgt) < 1.0

    plan = mv.allocate(
        [[(0, 10000, 0.90), (1, 20000, 0.95)], [(0, 10000, 0.80), (1, 30000, 0.99)]],
        40000,
        granularity=1,
    )
    assert plan["q"] == [0, 1] and plan["total_rate"] == 40000
    try:
        mv.allocate([[(0, 10, 0.5)]], 5, granularity=1)
    except mv.InfeasibleError:
        pass
    else:
        raise AssertionError("infeasible budget accepted")

    assert abs(mv.laplace_pmf(0, 0.0, 1.0) - 0.393469) < 1e-6
    assert abs(mv.evaluate_loss(0.9969, 1000.0, 100.0, 20.0) - 1100.062) < 1e-9
    assert mv.lambda_for_quality(4) == 28.0

    freqs = mv.build_cdf([0.6, 0.3, 0.1])
    assert sum(freqs) == 65536 and min(freqs) >= 1
    symbols = [0, 1, 2, 0, 0, 1]
    data = mv.encode_symbols(symbols, [freqs] * len(symbols))
    assert mv.decode_symbols(data, [freqs] * len(symbols), len(symbols)) == symbols

    n = 4 * 5
    taps = 3
    reference = [float(i) for i in range(n)]
    delta = [0.0] * n + [1.0] * n + [0.0] * n
    out = mv.sdc_warp(reference, 1, 4, 5, [0.0] * (2 * n), delta, delta, taps)
    assert out == reference

    try:
        mv.Frame(3, 4, bytes(18))
    except ValueError:
        pass
    else:
        raise AssertionError("odd width accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
