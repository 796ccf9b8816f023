"""Shared fixtures: small hand-built meshes and generated reference tracks."""

import numpy as np
import pytest

from dracer.geometry import TrackMesh, centerline_from_mesh, circle_polyline, generate_track


def build_square_annulus() -> TrackMesh:
    """Square ring: inner half-size 1, outer half-size 2, 8 triangles.

    Vertices 0..3 inner CCW starting at (1, -1); 4..7 outer CCW at (2, -2).
    Every quad between the rings is split into two triangles, so the border
    edges are exactly the 4 inner and 4 outer square sides.
    """
    inner = np.array([(1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0)])
    outer = 2.0 * inner
    vertices = np.vstack((inner, outer))
    tris = []
    for i in range(4):
        j = (i + 1) % 4
        tris.append((i, 4 + i, 4 + j))
        tris.append((i, 4 + j, j))
    return TrackMesh(vertices=vertices, triangles=np.array(tris), name="annulus")


@pytest.fixture
def square_annulus():
    return build_square_annulus()


@pytest.fixture(scope="session")
def circle_track():
    """Radius-3 circular track, full width 0.6, 64 vertices per side."""
    mesh = generate_track(circle_polyline(3.0, 64), half_width=0.3, vertices_per_side=64, name="circle3")
    return mesh, centerline_from_mesh(mesh)
