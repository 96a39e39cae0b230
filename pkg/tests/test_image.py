import numpy as np
import pytest
from PIL import Image

from livqual.errors import BlockSizeError, InvalidImage
from livqual.image import BlockGrid, GrayImage, Mask, block_partition, load_image, save_image


class TestGrayImage:
    def test_accepts_integer_valued_floats(self):
        image = GrayImage(np.full((40, 50), 12.0))
        assert image.pixels.dtype == np.uint8
        assert (image.width, image.height) == (50, 40)
        assert image.dpi == 500

    def test_pixels_are_read_only(self, stripes):
        with pytest.raises(ValueError):
            stripes.pixels[0, 0] = 1

    def test_does_not_alias_the_caller_array(self):
        raw = np.zeros((32, 32), dtype=np.uint8)
        image = GrayImage(raw)
        raw[0, 0] = 200
        assert image.pixels[0, 0] == 0

    @pytest.mark.parametrize(
        "pixels",
        [
            np.zeros((31, 64), dtype=np.uint8),
            np.zeros((64, 64, 3), dtype=np.uint8),
            np.full((64, 64), 256),
            np.full((64, 64), -1),
            np.full((64, 64), 1.5),
            np.full((64, 64), np.nan),
        ],
        ids=["too-small", "three-channel", "above-255", "negative", "fractional", "nan"],
    )
    def test_rejects_invalid_rasters(self, pixels):
        with pytest.raises(InvalidImage):
            GrayImage(pixels)

    def test_equality_compares_pixels(self, make_stripes):
        assert make_stripes() == make_stripes()
        assert make_stripes() != make_stripes(angle=0.5)


class TestBlockPartition:
    def test_drops_partial_edge_blocks(self):
        grid = block_partition(GrayImage(np.zeros((70, 100), dtype=np.uint8)), 32)
        assert (grid.rows, grid.cols) == (2, 3)
        assert grid.covered_shape == (64, 96)
        assert grid.n_blocks == 6

    @pytest.mark.parametrize("block_size", [7, 71])
    def test_rejects_out_of_range_block_size(self, block_size):
        with pytest.raises(BlockSizeError):
            block_partition(GrayImage(np.zeros((70, 100), dtype=np.uint8)), block_size)

    def test_block_sums_match_slicing(self, rng):
        values = rng.integers(0, 255, size=(64, 96)).astype(np.float64)
        grid = BlockGrid(block_size=32, cols=3, rows=2)
        sums = grid.block_sums(values)
        for r in range(2):
            for c in range(3):
                assert sums[r, c] == pytest.approx(grid.block(values, r, c).sum())

    def test_block_centres(self):
        grid = BlockGrid(block_size=32, cols=3, rows=2)
        assert grid.center(1, 2) == (64 + 15.5, 32 + 15.5)
        xs, ys = grid.centers()
        assert xs[1, 2] == 79.5 and ys[1, 2] == 47.5


class TestMask:
    def test_block_flag_needs_half_the_pixels(self):
        grid = BlockGrid(block_size=8, cols=2, rows=1)
        pixels = np.zeros((8, 16), dtype=bool)
        pixels[:4, :8] = True  # exactly half of block 0
        pixels[:3, 8:] = True  # less than half of block 1
        mask = Mask(pixels, grid)
        assert mask.blocks.tolist() == [[True, False]]
        assert mask.n_foreground_blocks == 1

    def test_centroid_and_bounding_box(self):
        grid = BlockGrid(block_size=8, cols=4, rows=4)
        pixels = np.zeros((32, 32), dtype=bool)
        pixels[8:16, 4:20] = True
        mask = Mask(pixels, grid)
        assert mask.bounding_box == (4, 8, 20, 16)
        assert mask.centroid == pytest.approx((11.5, 11.5))

    def test_empty_mask(self):
        grid = BlockGrid(block_size=8, cols=4, rows=4)
        mask = Mask(np.zeros((32, 32), dtype=bool), grid)
        assert mask.is_empty
        assert mask.centroid is None
        assert mask.bounding_box is None

    def test_from_blocks_expands_to_pixels(self):
        grid = BlockGrid(block_size=8, cols=2, rows=2)
        mask = Mask.from_blocks(np.array([[True, False], [False, False]]), grid, (20, 20))
        assert mask.pixels[:8, :8].all()
        assert not mask.pixels[8:, :].any()
        assert not mask.pixels[:, 8:].any()


class TestImageFiles:
    def test_pgm_round_trip_keeps_pixels_and_dpi(self, tmp_path, stripes):
        image = GrayImage(stripes.pixels, dpi=569)
        path = save_image(image, tmp_path / "ridges.pgm")
        loaded = load_image(path)
        assert np.array_equal(loaded.pixels, image.pixels)
        assert loaded.dpi == 569
        assert loaded.source == str(path)

    def test_pgm_without_dpi_defaults_to_500(self, tmp_path):
        path = tmp_path / "plain.pgm"
        path.write_bytes(b"P5\n# made by hand\n40 32\n255\n" + bytes(range(40)) * 32)
        loaded = load_image(path)
        assert loaded.dpi == 500
        assert loaded.pixels[5, 39] == 39

    def test_png_round_trip(self, tmp_path, stripes):
        path = save_image(stripes, tmp_path / "ridges.png")
        loaded = load_image(path)
        assert np.array_equal(loaded.pixels, stripes.pixels)
        assert loaded.dpi == pytest.approx(500, abs=0.01)

    def test_rejects_sixteen_bit_pgm(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n32 32\n65535\n" + b"\x00" * (32 * 32 * 2))
        with pytest.raises(InvalidImage, match="8-bit"):
            load_image(path)

    def test_rejects_truncated_pgm(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n32 32\n255\n" + b"\x00" * 100)
        with pytest.raises(InvalidImage, match="raster"):
            load_image(path)

    def test_rejects_rgb_png(self, tmp_path):
        path = tmp_path / "color.png"
        Image.new("RGB", (40, 40)).save(path)
        with pytest.raises(InvalidImage, match="mode RGB"):
            load_image(path)

    def test_rejects_tiny_png(self, tmp_path):
        path = tmp_path / "tiny.png"
        Image.new("L", (16, 16)).save(path)
        with pytest.raises(InvalidImage, match="minimum"):
            load_image(path)

    def test_rejects_unknown_format(self, tmp_path):
        path = tmp_path / "notes.txt"
        path.write_text("not an image")
        with pytest.raises(InvalidImage, match="unsupported"):
            load_image(path)

    def test_missing_file_names_the_path(self, tmp_path):
        with pytest.raises(InvalidImage) as info:
            load_image(tmp_path / "absent.pgm")
        assert "absent.pgm" in str(info.value)

    def test_ascii_pgm(self, tmp_path):
        values = np.arange(32 * 32).reshape(32, 32) % 200
        body = "\n".join(" ".join(str(v) for v in row) for row in values)
        path = tmp_path / "ascii.pgm"
        path.write_text(f"P2\n# dpi=1000\n32 32\n# comment between rows\n255\n{body}\n")
        loaded = load_image(path)
        assert np.array_equal(loaded.pixels, values)
        assert loaded.dpi == 1000

    def test_ascii_pgm_value_above_maxval(self, tmp_path):
        path = tmp_path / "ascii.pgm"
        path.write_text("P2\n32 32\n100\n" + " ".join(["101"] * 1024))
        with pytest.raises(InvalidImage, match="outside"):
            load_image(path)

    @pytest.mark.parametrize(
        "header",
        [b"P5\n-32 -32\n255\n", b"P5\n0 32\n255\n", b"P5\n32 32\n0\n", b"P5\n32 x\n255\n"],
        ids=["negative", "zero-width", "zero-maxval", "non-numeric"],
    )
    def test_bad_pgm_header_is_an_invalid_image(self, tmp_path, header):
        path = tmp_path / "bad.pgm"
        path.write_bytes(header + b"\x00" * 1024)
        with pytest.raises(InvalidImage):
            load_image(path)
