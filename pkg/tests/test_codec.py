import numpy as np
import pytest
from hypothesis import given, strategies as st

from mocogen.codec import (
    CodecError,
    build_palette,
    decode_color,
    decode_colors,
    encode_color,
    encode_colors,
    quantize8,
    remap_representation,
)


def sphere_grid(step_deg=1.0, min_abs_z=0.05):
    theta = np.radians(np.arange(0, 180 + step_deg / 2, step_deg))
    phi = np.radians(np.arange(0, 360, step_deg))
    T, P = np.meshgrid(theta, phi, indexing="ij")
    n = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1).reshape(-1, 3)
    return n[np.abs(n[:, 2]) >= min_abs_z]


def test_palette_endpoints():
    assert build_palette(1).red_list == (0.0, 1.0)


def test_palette_r24_uniform():
    p = build_palette(24)
    assert len(p.red_list) == 48
    assert p.red_list[6] == 6 / 47
    assert p.min_gap == pytest.approx(1 / 47)


@pytest.mark.parametrize("R", [0, 33, 100])
def test_palette_rejects_out_of_range(R):
    with pytest.raises(CodecError):
        build_palette(R)


def test_palette_max_parts_still_decodable():
    assert build_palette(32).min_gap > 4 / 255


def test_encode_examples(palette24):
    assert encode_color((0, 0, 1), 0, palette24) == (0.0, 0.5, 0.5)
    c = encode_color((0, 0, -1), 0, palette24)
    assert c.red == 1 / 47 and c.green == 0.5 and c.blue == 0.5
    c = encode_color((0.6, 0, 0.8), 3, palette24)
    assert c.blue == pytest.approx(0.8) and c.green == 0.5 and c.red == 6 / 47
    d = decode_color(c, palette24)
    assert d.part == 3 and d.sign == 1
    np.testing.assert_allclose(d.normal, (0.6, 0, 0.8), atol=1e-12)


def test_zero_z_counts_as_front(palette24):
    assert encode_color((1.0, 0.0, 0.0), 2, palette24).red == palette24.red_list[4]
    assert encode_color((1.0, 0.0, -0.0), 2, palette24).red == palette24.red_list[4]


def test_encode_rejects_bad_input(palette24):
    with pytest.raises(CodecError):
        encode_color((0, 0, 2), 0, palette24)
    with pytest.raises(CodecError):
        encode_color((0, 0, 1), 24, palette24)
    with pytest.raises(CodecError):
        decode_color((1.2, 0, 0), palette24)


def test_background_sentinel_infeasible(palette24):
    assert decode_color((0, 0, 0), palette24).infeasible


def test_tie_breaks_to_lower_index():
    p = build_palette(2)  # 0, 1/3, 2/3, 1
    d = decode_color((1 / 6, 0.5, 0.5), p)
    assert d.part == 0 and d.sign == 1


def test_exact_round_trip_all_parts(palette24):
    n = sphere_grid(5.0, min_abs_z=1e-3)
    for part in range(24):
        colors = encode_colors(n, np.full(len(n), part), palette24)
        dn, dp, ds, inf = decode_colors(colors, palette24)
        assert not inf.any()
        assert np.all(dp == part)
        assert np.all(ds == np.where(n[:, 2] < 0, -1, 1))
        np.testing.assert_allclose(dn, n, atol=1e-12)


def test_8bit_sweep_parts_and_signs_exact(palette24):
    n = sphere_grid(1.0, 0.05)
    for part in range(24):
        q = quantize8(encode_colors(n, np.full(len(n), part), palette24))
        dn, dp, ds, _ = decode_colors(q, palette24)
        assert np.all(dp == part)
        assert np.all(ds == np.sign(n[:, 2]))
        assert np.abs(dn[:, :2] - n[:, :2]).max() <= 2 / 255


@given(
    st.floats(0, np.pi, allow_nan=False),
    st.floats(0, 2 * np.pi, allow_nan=False),
    st.integers(0, 23),
)
def test_round_trip_property(theta, phi, part):
    n = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    palette = build_palette(24)
    d = decode_color(encode_color(n, part, palette), palette)
    assert d.part == part
    if abs(n[2]) >= 1e-3:
        np.testing.assert_allclose(d.normal, n, atol=1e-12)
        assert d.sign == (1 if n[2] >= 0 else -1)


def test_decoded_z_matches_unit_identity(palette24, rng):
    c = rng.uniform(0, 1, size=(1000, 3))
    dn, _, _, inf = decode_colors(c, palette24)
    x, y = 2 * c[:, 2] - 1, 2 * c[:, 1] - 1
    ok = x * x + y * y <= 1
    np.testing.assert_allclose(np.abs(dn[ok, 2]), np.sqrt(1 - x[ok] ** 2 - y[ok] ** 2), atol=1e-6)
    assert np.all(inf == (x * x + y * y > 1.05))


def test_palette_injective_over_part_sign(palette24):
    colors = {encode_color((0, 0, s), p, palette24).red for p in range(24) for s in (1, -1)}
    assert len(colors) == 48


def test_representation_ablations(palette24):
    frame = np.zeros((4, 4, 3))
    frame[1, 1] = encode_color((0.6, 0, 0.8), 5, palette24)
    n_only = remap_representation(frame, palette24, "normal_only")
    s_only = remap_representation(frame, palette24, "semantics_only")
    assert n_only[1, 1, 2] == frame[1, 1, 2] and n_only[1, 1, 0] != frame[1, 1, 0]
    assert s_only[1, 1, 0] == frame[1, 1, 0] and s_only[1, 1, 2] == 0.5
    assert not n_only[0, 0].any() and not s_only[0, 0].any()
