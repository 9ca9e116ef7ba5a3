"""Shared constructions for the test-suite."""

import numpy as np

from rgbdus.geom import RigidTransform, rotation_from_euler

SPACING = (0.1, 0.1)
SIZE = (512, 512)


def perpendicular_plane(x0, top=-5.0, y_center=20.0):
    """``T_phantom_from_image`` of a plane ``x = x0``: image u along phantom +y,
    v along phantom +z (depth), with the image top ``top`` mm above z = 0."""
    R = np.column_stack([(0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 0.0, 0.0)])
    half_u = SPACING[0] * (SIZE[0] - 1) / 2.0
    return RigidTransform(R, (x0, y_center - half_u, top))


def tilted_plane(x0, angles_deg, top=-5.0):
    """Perpendicular plane rotated about the image center by intrinsic ZYX angles in phantom CS."""
    base = perpendicular_plane(x0, top)
    c = base.apply((SPACING[0] * (SIZE[0] - 1) / 2.0, 25.0, 0.0))
    Rd = rotation_from_euler(angles_deg)
    return RigidTransform(Rd, c - Rd @ c) @ base


def plane_diagonal_oracle(T_phantom_from_image, a, b):
    """Intersection of the image plane (z_img = 0) with the line through a, b,
    by solving  o + s*e1 + t*e2 = a + w*(b - a)  as a 3x3 linear system."""
    o = T_phantom_from_image.t
    e1, e2 = T_phantom_from_image.R[:, 0], T_phantom_from_image.R[:, 1]
    M = np.column_stack([e1, e2, -(b - a)])
    s, t, w = np.linalg.solve(M, a - o)
    return a + w * (b - a)
