import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mocogen.latent import (
    CHANNELS,
    LatentBlock,
    LatentError,
    decode_pixels,
    encode_pixels,
    from_tokens,
    latent_shape,
    to_tokens,
)


def f32_frames(rng, F, H, W):
    # dataset precision: f32 values in [0, 1]; the affine map is exact on this grid
    return rng.uniform(0, 1, size=(F, H, W, 3)).astype(np.float32).astype(np.float64)


def test_desk_shape():
    z = encode_pixels(np.full((17, 64, 64, 3), 0.3))
    assert z.data.shape == (3072, 5, 4, 4)


def test_paper_scale_shape():
    assert latent_shape(81, 704, 1280) == (3072, 21, 44, 80)


@pytest.mark.parametrize("F", range(5, 82, 4))
def test_shape_law(F):
    assert latent_shape(F, 64, 64) == (CHANNELS, (F - 1) // 4 + 1, 4, 4)


def test_constant_half_is_zero_latent():
    assert not encode_pixels(np.full((9, 32, 48, 3), 0.5)).data.any()


@pytest.mark.parametrize("bad", [(4, 64, 64), (6, 64, 64), (9, 60, 64), (9, 64, 8)])
def test_geometry_rejected(bad):
    with pytest.raises(LatentError):
        encode_pixels(np.zeros(bad + (3,)))


def test_round_trip_bit_exact(rng):
    x = f32_frames(rng, 13, 32, 64)
    assert decode_pixels(encode_pixels(x)).tobytes() == x.tobytes()


def test_round_trip_arbitrary_f64_within_one_ulp(rng):
    x = rng.uniform(0, 1, size=(5, 16, 16, 3))
    assert np.abs(decode_pixels(encode_pixels(x)) - x).max() <= 2.0**-53


def test_encode_of_decode_is_identity_on_image(rng):
    z = encode_pixels(f32_frames(rng, 9, 32, 32))
    again = encode_pixels(decode_pixels(z))
    assert again.data.tobytes() == z.data.tobytes()


def test_impulse_location_and_locality():
    x = np.full((9, 32, 32, 3), 0.5)
    x[6, 20, 3, 1] = 1.0
    z = encode_pixels(x).data
    nz = np.argwhere(z != 0)
    assert len(nz) == 1
    c, t, yy, xx = nz[0]
    assert (t, yy, xx) == (2, 1, 0)  # frame 6 is in group [5..8]
    assert c == ((1 * 16 + 4) * 16 + 3) * 3 + 1  # time 1 in group, y 4, x 3, channel 1
    back = decode_pixels(encode_pixels(x))
    assert np.argwhere(back != 0.5).tolist() == [[6, 20, 3, 1]]


def test_frame_zero_replicated_four_times():
    x = np.zeros((5, 16, 16, 3))
    x[0] = 1.0
    z = encode_pixels(x).data[:, 0, 0, 0].reshape(4, 16, 16, 3)
    assert np.all(z == 1.0)


def test_block_rejects_bad_shape():
    with pytest.raises(LatentError):
        LatentBlock(np.zeros((3072, 4, 4, 4)), 17, 64, 64)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 20), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_round_trip_property(k, h, w, seed):
    rng = np.random.default_rng(seed)
    x = f32_frames(rng, 4 * k + 1, 16 * h, 16 * w)
    z = encode_pixels(x)
    assert z.data.shape == latent_shape(4 * k + 1, 16 * h, 16 * w)
    assert decode_pixels(z).tobytes() == x.tobytes()


def test_tokens_round_trip(rng):
    z = rng.normal(size=(2, CHANNELS, 3, 2, 4))
    t = to_tokens(z)
    assert t.shape == (2, 3, 8, CHANNELS)
    assert np.array_equal(from_tokens(t, 2, 4), z)
