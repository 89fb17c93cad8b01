import numpy as np
import pytest

from workspace import GridError, InvalidPathError, InvalidVertexError, Path, build_grid, neighbors


def _edges(g):
    return [(u, v) for u in g.vertices for v in neighbors(g, u) if u < v]


def test_default_grid_size_and_spacing():
    g = build_grid(1.0, 11)
    assert g.num_vertices == 121
    assert g.spacing == pytest.approx(0.2)


def test_vertex_numbering_is_row_major_from_bottom_left():
    g = build_grid(1.0, 11)
    np.testing.assert_allclose(g.coord(1), [-1.0, -1.0])
    np.testing.assert_allclose(g.coord(11), [1.0, -1.0])
    np.testing.assert_allclose(g.coord(12), [-1.0, -0.8])
    np.testing.assert_allclose(g.coord(121), [1.0, 1.0])


def test_two_by_two_every_vertex_has_two_neighbors():
    g = build_grid(1.0, 2)
    for v in g.vertices:
        assert len(neighbors(g, v)) == 2


def test_three_by_three_center_and_corners(grid3):
    assert neighbors(grid3, 5) == {2, 4, 6, 8}
    for corner in (1, 3, 7, 9):
        assert len(neighbors(grid3, corner)) == 2


def test_adjacency_symmetric_and_edge_count():
    for n in (2, 3, 5, 11):
        g = build_grid(1.0, n)
        for v in g.vertices:
            for u in neighbors(g, v):
                assert v in neighbors(g, u)
        assert len(_edges(g)) == 2 * n * (n - 1)


def test_neighbor_distance_equals_spacing():
    g = build_grid(1.0, 11)
    for u, v in _edges(g):
        assert np.linalg.norm(g.coord(u) - g.coord(v)) == pytest.approx(g.spacing)


def test_nearest_vertex_round_trip():
    g = build_grid(1.0, 7)
    for v in g.vertices:
        assert g.nearest_vertex(g.coord(v)) == v
    assert g.nearest_vertex([5.0, -5.0]) == 7


def test_manhattan_hops(grid4):
    assert grid4.manhattan(1, 16) == 6
    assert grid4.manhattan(6, 6) == 0


@pytest.mark.parametrize("half_width, side_count", [(1.0, 1), (1.0, 0), (0.0, 5), (-1.0, 5), (1.0, 2.5)])
def test_build_grid_rejects_bad_parameters(half_width, side_count):
    with pytest.raises(GridError):
        build_grid(half_width, side_count)


@pytest.mark.parametrize("v", [0, 10, -1, True])
def test_neighbors_rejects_invalid_vertex(grid3, v):
    with pytest.raises(InvalidVertexError):
        neighbors(grid3, v)


def test_path_validate_and_length(grid3):
    p = Path((1, 2, 5, 6, 9)).validate(grid3)
    assert p.length == 4
    assert (p.start, p.end) == (1, 9)
    with pytest.raises(InvalidPathError):
        Path((1, 5)).validate(grid3)
    with pytest.raises(InvalidPathError):
        Path((1,)).validate(grid3)


def test_path_concat_and_suffix():
    head = Path((1, 2, 5))
    tail = Path((5, 6, 9))
    assert head.concat(tail).vertices == (1, 2, 5, 6, 9)
    assert head.concat(tail).suffix(2).vertices == (5, 6, 9)
    with pytest.raises(InvalidPathError):
        head.concat(Path((6, 9)))
