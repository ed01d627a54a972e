"""Rigid transforms, twist coordinates, and closed-form alignment.

Walks through the geometric core: building transforms, mapping between
SE(3) and its tangent coordinates, and recovering a motion from point
correspondences with the weighted SVD fit.
"""

import numpy as np

from medpnet import PointCloud, RigidTransform, Twist, apply_transform, compose, invert, kabsch, se3_exp, se3_log
from medpnet.geometry import geodesic_angle, rot_z

rng = np.random.default_rng(7)

# A rigid transform is a rotation plus a translation. The constructor
# rejects anything that is not a proper rotation.
T = RigidTransform(rot_z(30.0), np.array([0.1, -0.2, 0.05]))
print("rotation:\n", T.R.round(4))
print("translation:", T.t)

# Twist coordinates: 6 numbers encode the same motion.
v = se3_log(T)
print("\ntwist (rho | theta):", v.as_vector().round(4))
print("exp(log(T)) max error:", np.abs(se3_exp(v).as_matrix() - T.as_matrix()).max())

# Halving the twist gives the square root of the motion.
half = se3_exp(Twist.from_vector(0.5 * v.as_vector()))
print("half-motion composed twice ~ T:", np.allclose(compose(half, half).as_matrix(), T.as_matrix()))

# Closed-form alignment: given correspondences, one SVD recovers the motion.
cloud = PointCloud(rng.normal(size=(100, 3)))
moved = apply_transform(T, cloud)
T_hat = kabsch(cloud, moved)
print("\nkabsch rotation error (rad):", geodesic_angle(T_hat.R, T.R))
print("kabsch translation error:", np.linalg.norm(T_hat.t - T.t))

# Weighted variant: zero-weight points are ignored entirely.
corrupted = np.array(moved.points)
corrupted[:5] += 100.0
w = np.ones(100)
w[:5] = 0.0
T_w = kabsch(cloud.points, corrupted, w)
print("weighted fit still exact:", geodesic_angle(T_w.R, T.R) < 1e-9)

print("\nround trip through the inverse:", np.allclose(
    apply_transform(invert(T), moved).points, cloud.points))
