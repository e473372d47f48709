import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srdvi.basis import build_uniform_basis, raw_uniform_basis, transport_basis, write_basis_csv
from srdvi.geometry_check import random_srd
from srdvi.grid import GridFn, grid_nodes, integrate, trapezoid_weights

M = 1023


def test_small_basis_matches_closed_form():
    b = build_uniform_basis(3, M)
    t = grid_nodes(M)
    np.testing.assert_allclose(b.elems[0].v.values, math.sqrt(2) * np.sin(2 * np.pi * t), atol=1e-10)
    np.testing.assert_allclose(b.elems[1].v.values, math.sqrt(2) * np.cos(2 * np.pi * t), atol=1e-10)
    # third element: residual of (1 - t) after removing the constant, sin and cos, computed independently
    w = trapezoid_weights(M)
    r = 1 - t
    for e in (np.ones(M), math.sqrt(2) * np.sin(2 * np.pi * t), math.sqrt(2) * np.cos(2 * np.pi * t)):
        r = r - np.dot(w, r * e) / np.dot(w, e * e) * e
    r /= math.sqrt(np.dot(w, r * r))
    np.testing.assert_allclose(b.elems[2].v.values, r, atol=1e-10)


def test_elements_are_tangent_at_uniform():
    b = build_uniform_basis(99, M)
    for e in b.elems:
        assert abs(integrate(e.v)) < 1e-9


def test_ninety_nine_elements():
    b = build_uniform_basis(99, M)
    assert b.n == 99 and b.n_pairs == 49
    assert np.max(np.abs(b.gram() - np.eye(99))) < 1e-8


def test_raw_order_is_frequency_major():
    raw = raw_uniform_basis(5, 64)
    t = grid_nodes(64)
    np.testing.assert_allclose(raw[2].values, np.sin(4 * np.pi * t))
    np.testing.assert_allclose(raw[-1].values, 1 - t)


@pytest.mark.parametrize("n", [2, 1, 100, 513])
def test_invalid_sizes(n):
    with pytest.raises(ValueError):
        build_uniform_basis(n, M)


def test_transport_to_self_is_identity():
    b = build_uniform_basis(21, M)
    moved = transport_basis(b, b.at)
    np.testing.assert_allclose(moved.matrix(), b.matrix(), atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_transport_preserves_orthonormality(seed):
    b = build_uniform_basis(99, M)
    target = random_srd(np.random.default_rng(seed), M)
    moved = transport_basis(b, target)
    assert np.max(np.abs(moved.gram() - np.eye(99))) < 1e-8
    assert np.max(np.abs((moved.matrix() * trapezoid_weights(M)) @ target.values)) < 1e-8


def test_transport_there_and_back():
    b = build_uniform_basis(31, M)
    target = random_srd(np.random.default_rng(5), M)
    back = transport_basis(transport_basis(b, target), b.at)
    np.testing.assert_allclose(back.matrix(), b.matrix(), atol=1e-8)


def test_basis_csv_shape(tmp_path):
    b = build_uniform_basis(5, 33)
    path = tmp_path / "basis.csv"
    write_basis_csv(b, path)
    rows = path.read_text().splitlines()
    assert rows[0] == "b0,b1,b2,b3,b4"
    assert len(rows) == 34
