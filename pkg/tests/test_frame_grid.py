import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roistream.exceptions import InvalidGeometryError, ProtocolError
from roistream.frame_grid import (
    BoundingBox,
    CellId,
    Frame,
    GridSpec,
    assemble,
    cell_overlap,
    load_annotations,
    load_pgm,
    load_sequence,
    overlap_map,
    pad_to_grid,
    save_annotations,
    save_pgm,
    tile,
)
from roistream.mask import Mask

from .conftest import random_frame


def test_tile_16x16_k2_top_left(rng):
    f = random_frame(rng, 16, 16)
    patches = tile(f, GridSpec(2, 16, 16))
    assert len(patches) == 4
    assert [p.cell for p in patches] == [CellId(0, 0), CellId(0, 1), CellId(1, 0), CellId(1, 1)]
    assert patches[0].pixels.shape == (8, 8)
    np.testing.assert_array_equal(patches[0].pixels, f.pixels[0:8, 0:8])
    np.testing.assert_array_equal(patches[3].pixels, f.pixels[8:16, 8:16])


def test_tile_k1_is_whole_frame(rng):
    f = random_frame(rng, 24, 16)
    (p,) = tile(f, GridSpec(1, 24, 16))
    assert p.pixels.tobytes() == f.tobytes()


def test_round_trip_100_random_frames(rng):
    grid = GridSpec(8, 64, 64)
    full = Mask.full(8)
    for i in range(100):
        f = random_frame(rng, index=i)
        assert assemble(tile(f, grid), grid, full) == f


def test_tile_rejects_indivisible_and_mismatched(rng):
    with pytest.raises(InvalidGeometryError):
        GridSpec(8, 30, 30)
    with pytest.raises(InvalidGeometryError):
        tile(random_frame(rng, 32, 32), GridSpec(8, 64, 64))


def test_tiling_is_a_partition(rng):
    grid = GridSpec(4, 32, 16)
    covered = np.zeros((16, 32), dtype=int)
    for cell in grid.cells():
        x, y, w, h = grid.cell_rect(cell)
        covered[y : y + h, x : x + w] += 1
    assert (covered == 1).all()


@pytest.mark.parametrize(
    "size,k,expected",
    [((30, 30), 8, (32, 32)), ((64, 64), 8, (64, 64)), ((33, 17), 8, (40, 24))],
)
def test_pad_to_grid_sizes(size, k, expected):
    w, h = size
    f = Frame(0, np.full((h, w), 9, dtype=np.uint8))
    p = pad_to_grid(f, k)
    assert (p.width, p.height) == expected
    np.testing.assert_array_equal(p.pixels[:h, :w], f.pixels)
    assert (p.pixels[h:, :] == 0).all() and (p.pixels[:, w:] == 0).all()


def test_pad_to_grid_fill_and_idempotence():
    f = Frame(3, np.ones((30, 30), dtype=np.uint8))
    once = pad_to_grid(f, 8, fill=200)
    assert once.pixels[31, 31] == 200 and once.index == 3
    assert pad_to_grid(once, 8, fill=200) == once


def test_assemble_empty_and_partial(rng):
    grid = GridSpec(2, 16, 16)
    f = random_frame(rng, 16, 16)
    blank = assemble([], grid, Mask.empty(2))
    assert (blank.pixels == 0).all()

    patches = tile(f, grid)
    mask = Mask.from_cells(2, [0, 3])
    out = assemble([patches[0], patches[3]], grid, mask, filler=0)
    # count filler bytes independently: every pixel outside the two mask cells
    expected = np.zeros((16, 16), dtype=bool)
    expected[0:8, 8:16] = expected[8:16, 0:8] = True
    assert int(expected.sum()) == 128
    np.testing.assert_array_equal(out.pixels[expected], 0)
    np.testing.assert_array_equal(out.pixels[~expected], f.pixels[~expected])


def test_assemble_custom_filler(rng):
    out = assemble([], GridSpec(2, 4, 4), Mask.empty(2), filler=77)
    assert (out.pixels == 77).all()


def test_assemble_protocol_errors(rng):
    grid = GridSpec(2, 16, 16)
    patches = tile(random_frame(rng, 16, 16), grid)
    with pytest.raises(ProtocolError):
        assemble([patches[0], patches[0]], grid, Mask.full(2))
    with pytest.raises(ProtocolError):
        assemble([patches[1]], grid, Mask.from_cells(2, [0]))


def test_assemble_is_order_insensitive(rng):
    grid = GridSpec(4, 32, 32)
    patches = tile(random_frame(rng, 32, 32), grid)
    shuffled = [patches[i] for i in rng.permutation(len(patches))]
    assert assemble(shuffled, grid, Mask.full(4)) == assemble(patches, grid, Mask.full(4))


def _brute_overlap(cell, grid, box):
    x, y, w, h = grid.cell_rect(cell)
    inside_cell = np.zeros((grid.height, grid.width), dtype=bool)
    inside_cell[y : y + h, x : x + w] = True
    inside_box = np.zeros_like(inside_cell)
    inside_box[box.y : box.y + box.h, box.x : box.x + box.w] = True
    return (inside_cell & inside_box).sum() / inside_cell.sum()


def test_cell_overlap_cases(grid64):
    box = BoundingBox(8, 16, 8, 8)
    for cell in grid64.cells():
        expected = 1.0 if cell == CellId(2, 1) else 0.0
        assert cell_overlap(cell, grid64, box) == expected
    whole = BoundingBox(0, 0, 64, 64)
    assert all(cell_overlap(c, grid64, whole) == 1.0 for c in grid64.cells())
    half = BoundingBox(0, 0, 4, 8)
    assert cell_overlap(CellId(0, 0), grid64, half) == _brute_overlap(CellId(0, 0), grid64, half) == 0.5


@settings(max_examples=200, deadline=None)
@given(
    x=st.integers(0, 63), y=st.integers(0, 63), w=st.integers(1, 64), h=st.integers(1, 64)
)
def test_overlap_matches_brute_force_and_conserves_area(x, y, w, h):
    grid = GridSpec(8, 64, 64)
    box = BoundingBox.clipped(x, y, w, h, 64, 64)
    ov = overlap_map(grid, box)
    for cell in grid.cells():
        assert cell_overlap(cell, grid, box) == pytest.approx(_brute_overlap(cell, grid, box))
        assert ov[cell.linear(8)] == pytest.approx(cell_overlap(cell, grid, box))
    # pixel-count conservation, exact in integers
    assert int(round(sum(ov * grid.cell_area))) == box.area


def test_bounding_box_clipping():
    b = BoundingBox.clipped(-4, 60, 10, 10, 64, 64)
    assert (b.x, b.y, b.w, b.h) == (0, 60, 6, 4)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 5)
    with pytest.raises(ValueError):
        BoundingBox.clipped(70, 70, 5, 5, 64, 64)


def test_pgm_round_trip(tmp_path, rng):
    f = random_frame(rng, 40, 24)
    path = tmp_path / "f.pgm"
    save_pgm(f, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5")
    assert raw.endswith(f.tobytes())
    assert load_pgm(path) == f


def test_annotations_round_trip(tmp_path):
    boxes = [BoundingBox(1, 2, 3, 4), BoundingBox(5, 6, 7, 8)]
    path = tmp_path / "a.csv"
    save_annotations(boxes, path)
    assert load_annotations(path, 64, 64) == {0: boxes[0], 1: boxes[1]}
    path.write_text("frame_index,x,y,w,h\n0,60,60,10,10\n")
    assert load_annotations(path, 64, 64) == {0: BoundingBox(60, 60, 4, 4)}


def test_load_sequence_pads_and_aligns(tmp_path, rng):
    for i in range(3):
        save_pgm(random_frame(rng, 30, 30), tmp_path / f"f{i}.pgm")
    (tmp_path / "ann.csv").write_text("0,1,1,5,5\n2,3,3,5,5\n")
    frames, boxes = load_sequence(tmp_path, tmp_path / "ann.csv", 8)
    assert [(f.width, f.height) for f in frames] == [(32, 32), (32, 32)]
    assert [f.index for f in frames] == [0, 1]
    assert boxes == [BoundingBox(1, 1, 5, 5), BoundingBox(3, 3, 5, 5)]
