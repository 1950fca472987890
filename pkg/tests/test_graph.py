import numpy as np
import pytest

from carpetks import build_level_graph, compute_L_star, menger_sponge, standard_carpet
from carpetks.carpet import CarpetSpec, level_cells
from carpetks.exceptions import CarpetSpecError
from carpetks.graph import face_cells, path_graph
from oracles import brute_force_edges


def _as_lattice_edges(g):
    cells = [tuple(map(int, c)) for c in g.cells]
    return {tuple(sorted((cells[i], cells[j]))) for i, j in g.edges.tolist()}


@pytest.mark.parametrize("spec,n", [(standard_carpet(), 1), (standard_carpet(), 2), (standard_carpet(), 3), (menger_sponge(), 1), (menger_sponge(), 2)])
def test_edges_match_pair_oracle(spec, n):
    g = build_level_graph(spec, n)
    assert _as_lattice_edges(g) == brute_force_edges(spec.a, spec.D, spec.S, n)
    assert g.n_edges == len(set(map(tuple, g.edges.tolist())))
    assert np.all(g.edges[:, 0] < g.edges[:, 1])


def test_level_one_counts():
    g = build_level_graph(standard_carpet(), 1)
    assert (g.n_vertices, g.n_edges, g.max_degree) == (8, 12, 4)
    assert g.header() == {"n": 1, "vertex_count": 8, "edge_count": 12, "max_degree": 4}


def test_degree_bound_and_L_star():
    for spec in (standard_carpet(), menger_sponge()):
        res = compute_L_star(spec, 2 if spec.D == 3 else 4)
        assert res["L_star"] <= 3**spec.D - 1
        assert res["bound"] == 3**spec.D - 1
    assert compute_L_star(standard_carpet(), 4)["stabilized"]


def test_graph_is_connected_and_adjacency_symmetric():
    g = build_level_graph(standard_carpet(), 3)
    assert g.is_connected()
    A = g.adjacency
    assert (A != A.T).nnz == 0
    assert np.array_equal(np.asarray(A.sum(axis=1)).ravel(), g.degrees)


def test_invalid_spec_refused():
    with pytest.raises(CarpetSpecError):
        build_level_graph(CarpetSpec(2, 3, [(0, 0), (1, 1), (2, 2)]), 1)


def test_face_cells():
    spec = standard_carpet()
    lo = face_cells(spec, 2, 1, "low")
    hi = face_cells(spec, 2, 1, "high")
    cells = level_cells(spec, 2)
    assert len(lo) == len(hi) == 9
    assert np.all(cells[lo, 0] == 0) and np.all(cells[hi, 0] == 8)
    with pytest.raises(ValueError):
        face_cells(spec, 2, 3, "low")


def test_csv_and_header(tmp_path):
    g = build_level_graph(standard_carpet(), 2)
    g.to_csv(tmp_path / "e.csv")
    g.write_header(tmp_path / "h.json")
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "u,v" and len(rows) == g.n_edges + 1


def test_path_graph():
    g = path_graph(5)
    assert g.n_edges == 4 and g.max_degree == 2
