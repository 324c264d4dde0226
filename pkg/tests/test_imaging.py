import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edgeprior import imaging
from edgeprior.imaging import (CANNY_CONFIGS, CannyParams, DecodeError, DiagnosticsError, EdgeMap,
                               ParameterError, RasterImage, adaptive_rescale, background_noise_sigma,
                               canny, color_instability, normalize_alpha)


def rgba_pixel(*px):
    return RasterImage(np.array([[px]], dtype=np.uint8))


class TestNormalizeAlpha:
    def test_transparent_becomes_white(self):
        assert normalize_alpha(rgba_pixel(0, 0, 0, 0)).pixels[0, 0].tolist() == [255, 255, 255]

    def test_opaque_unchanged(self):
        assert normalize_alpha(rgba_pixel(255, 0, 0, 255)).pixels[0, 0].tolist() == [255, 0, 0]

    def test_half_alpha_black(self):
        # by hand: a = 128/255; 0*a + (1 - a)*255 = 127.0 -> 127
        assert normalize_alpha(rgba_pixel(0, 0, 0, 128)).pixels[0, 0].tolist() == [127, 127, 127]

    def test_gray_is_replicated(self):
        out = normalize_alpha(RasterImage(np.array([[7, 200]], dtype=np.uint8)))
        assert out.mode == "RGB"
        assert out.pixels.tolist() == [[[7, 7, 7], [200, 200, 200]]]

    def test_rgb_passthrough(self):
        img = RasterImage(np.arange(12, dtype=np.uint8).reshape(2, 2, 3))
        assert normalize_alpha(img) == img

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3, 4]))))
    def test_idempotent(self, px):
        once = normalize_alpha(RasterImage(px))
        assert normalize_alpha(once) == once


class TestRasterImage:
    def test_buffer_length_mismatch(self):
        with pytest.raises(DecodeError):
            RasterImage.from_buffer(2, 2, "RGB", bytes(11))

    def test_buffer_round_trip(self):
        data = bytes(range(16))
        img = RasterImage.from_buffer(2, 2, "RGBA", data)
        assert (img.width, img.height, img.channels) == (2, 2, 4)
        assert img.tobytes() == data

    def test_rejects_empty(self):
        with pytest.raises(DecodeError):
            RasterImage(np.zeros((0, 3), dtype=np.uint8))


class TestAdaptiveRescale:
    @pytest.mark.parametrize("size,expected", [
        ((8000, 2000), (4000, 1000)),
        ((3000, 2000), (3000, 2000)),
        ((4001, 4001), (4000, 4000)),
    ])
    def test_sizes(self, size, expected):
        w, h = size
        img = RasterImage(np.full((h, w), 255, dtype=np.uint8))
        out = adaptive_rescale(img)
        assert (out.width, out.height) == expected

    def test_identity_returns_same_pixels(self):
        img = RasterImage(np.random.default_rng(0).integers(0, 256, (20, 30), dtype=np.uint8))
        assert adaptive_rescale(img, max_dim=30) is img

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 400), st.integers(1, 400), st.integers(1, 120))
    def test_bound_and_aspect(self, w, h, max_dim):
        img = RasterImage(np.zeros((h, w, 3), dtype=np.uint8))
        out = adaptive_rescale(img, max_dim=max_dim)
        assert max(out.width, out.height) <= max_dim
        assert out.width >= 1 and out.height >= 1
        if max(w, h) > max_dim:
            scale = max_dim / max(w, h)
            assert abs(out.width - w * scale) <= 1 and abs(out.height - h * scale) <= 1


def bar_image():
    img = np.full((64, 64), 255, dtype=np.uint8)
    img[:, 30:34] = 0
    return img


class TestCanny:
    def test_registry_values(self):
        expected = {"C1": (30, 100, 3), "C2": (50, 150, 3), "C3": (100, 200, 3), "C4": (100, 300, 3),
                    "C6": (100, 200, 5), "C7": (100, 200, 7), "C8": (50, 150, 5), "C9": (50, 150, 7)}
        assert {k: v.as_tuple() for k, v in CANNY_CONFIGS.items()} == expected

    def test_derived_reference_config(self):
        reg = imaging.config_registry("C2")
        assert list(reg) == [f"C{i}" for i in range(1, 10)]
        assert reg["C5"].as_tuple() == (50, 150, 3)

    @pytest.mark.parametrize("params", list(CANNY_CONFIGS.values()))
    def test_uniform_image_has_no_edges(self, params):
        e = canny(np.full((64, 64), 255, dtype=np.uint8), params)
        assert e.edge_count() == 0
        assert (e.width, e.height) == (64, 64)

    def test_bar_gives_two_vertical_contours(self):
        e = canny(bar_image(), CANNY_CONFIGS["C3"])
        cols = np.nonzero(e.data.any(axis=0))[0]
        # one contour per boundary (29|30 and 33|34), running the full height
        assert cols.tolist() == [29, 33]
        assert (e.data[:, 29] == 255).all() and (e.data[:, 33] == 255).all()

    def test_bar_matches_reference_implementation(self):
        cv2 = pytest.importorskip("cv2")
        ours = canny(bar_image(), CANNY_CONFIGS["C3"]).data > 0
        ref = cv2.Canny(bar_image(), 100, 200, apertureSize=3, L2gradient=True) > 0
        assert ours.any() and ref.any()
        # every pixel of each map lies within one pixel of the other map
        from scipy.ndimage import binary_dilation
        grow = np.ones((3, 3), dtype=bool)
        assert not (ours & ~binary_dilation(ref, grow)).any()
        assert not (ref & ~binary_dilation(ours, grow)).any()

    def test_invalid_aperture(self):
        with pytest.raises(ParameterError):
            CannyParams(100, 200, 4)

    def test_low_above_high(self):
        with pytest.raises(ParameterError):
            CannyParams(300, 200, 3)

    def test_parse(self):
        assert CannyParams.parse("50,150,7").as_tuple() == (50, 150, 7)
        assert CannyParams.parse("c9") == CANNY_CONFIGS["C9"]
        with pytest.raises(ParameterError):
            CannyParams.parse("50;150")

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(4, 24), st.integers(4, 24))),
           st.sampled_from(list(CANNY_CONFIGS.values())))
    def test_binary_and_deterministic(self, px, params):
        a, b = canny(px, params), canny(px.copy(), params)
        assert set(np.unique(a.data)) <= {0, 255}
        assert a.tobytes() == b.tobytes()

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(4, 24), st.integers(4, 24))),
           st.floats(0, 400), st.floats(0, 400), st.floats(0, 300), st.sampled_from([3, 5, 7]))
    def test_threshold_monotonicity(self, px, low, span, bump, aperture):
        lo = canny(px, CannyParams(low, low + span, aperture)).edge_count()
        hi = canny(px, CannyParams(low + bump, low + span + bump, aperture)).edge_count()
        assert hi <= lo

    def test_rgba_input_composited_first(self):
        px = np.zeros((32, 32, 4), dtype=np.uint8)  # fully transparent black
        assert canny(px, CANNY_CONFIGS["C3"]).edge_count() == 0


class TestEdgeMapFiles:
    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        e = EdgeMap(np.where(rng.random((17, 23)) > 0.7, 255, 0).astype(np.uint8))
        imaging.write_edge_map(tmp_path / "e.png", e)
        back = imaging.read_edge_map(tmp_path / "e.png")
        assert back == e and back.tobytes() == e.tobytes()

    def test_rejects_non_binary(self):
        with pytest.raises(DecodeError):
            EdgeMap(np.array([[0, 1]], dtype=np.uint8))

    def test_read_image_keeps_alpha(self, tmp_path):
        from PIL import Image
        px = np.zeros((4, 4, 4), dtype=np.uint8)
        Image.fromarray(px).save(tmp_path / "t.png")
        img = imaging.read_image(tmp_path / "t.png")
        assert img.mode == "RGBA"
        assert normalize_alpha(img).pixels.min() == 255

    def test_read_garbage(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"not an image")
        with pytest.raises(DecodeError):
            imaging.read_image(tmp_path / "x.png")


def noisy_flat(sigma, seed=0, size=256, base=128.0):
    rng = np.random.default_rng(seed)
    return np.clip(np.round(base + rng.normal(0, sigma, (size, size))), 0, 255).astype(np.uint8)


class TestNoise:
    def test_constant_image(self):
        assert background_noise_sigma(np.full((64, 64), 90, dtype=np.uint8)) == pytest.approx(0, abs=1e-6)

    @pytest.mark.parametrize("sigma", [10, 20, 35])
    def test_recovers_injected_noise(self, sigma):
        assert background_noise_sigma(noisy_flat(sigma)) == pytest.approx(sigma, rel=0.15)

    def test_too_small(self):
        with pytest.raises(DiagnosticsError):
            background_noise_sigma(np.zeros((8, 40), dtype=np.uint8))

    def test_white_has_no_chroma_spread(self):
        assert color_instability(np.full((16, 16, 3), 255, dtype=np.uint8)) == 0.0

    def test_two_tints_exceed_uniform(self):
        mixed = np.zeros((16, 16, 3), dtype=np.uint8)
        mixed[:8] = (255, 250, 215)  # pale yellow
        mixed[8:] = (215, 230, 255)  # pale blue
        uniform = np.zeros_like(mixed)
        uniform[:] = (255, 250, 215)
        assert color_instability(mixed) > color_instability(uniform) >= 0
        assert color_instability(mixed) > 0

    def test_dark_pixels_ignored(self):
        assert color_instability(np.zeros((8, 8, 3), dtype=np.uint8)) == 0.0

    def test_report(self):
        rep = imaging.noise_report(np.full((32, 32, 3), 255, dtype=np.uint8))
        assert rep.background_noise_sigma == 0 and rep.color_instability_mu == 0
