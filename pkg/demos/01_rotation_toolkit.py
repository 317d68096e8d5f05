"""Tour of the rotation / projection toolkit.

Shows the continuous 6D rotation representation round-tripping through
matrices, geodesic distances, rigid re-anchoring of bi-hand states, and
pinhole projection.
"""

import numpy as np

from handflow import geometry
from handflow.geometry import CameraIntrinsics, RigidTransform
from handflow.trajectory import BiHandState, Pose6DoF

rng = np.random.default_rng(0)

print("== 6D <-> matrix ==")
a = np.array([0.0, 1.0, 0.0, -1.0, 0.0, 0.0])  # 90 degrees about z, unnormalized
m = geometry.rot6d_to_matrix(a)
print("matrix from 6D:\n", np.round(m, 6))
print("back to 6D:", geometry.matrix_to_rot6d(m))
print("scaling the 6D columns changes nothing:",
      np.allclose(m, geometry.rot6d_to_matrix(a * 3.7)))

print("\n== geodesic distances ==")
rz = geometry.rotation_about_axis([0, 0, 1], 90.0)
rx = geometry.rotation_about_axis([1, 0, 0], 180.0)
print("identity vs rot_z(90):", geometry.geodesic_degrees(np.eye(3), rz), "degrees")
print("identity vs rot_x(180):", geometry.geodesic_degrees(np.eye(3), rx), "degrees")

print("\n== re-anchoring into a new camera frame ==")
state = BiHandState(
    timestamp=0.0,
    left=Pose6DoF([-0.2, 0.1, 0.5], geometry.matrix_to_rot6d(rz)),
    right=Pose6DoF([0.2, 0.1, 0.5], [1, 0, 0, 0, 1, 0]),
)
anchor = RigidTransform(geometry.rotation_about_axis([0, 1, 0], 30.0), np.array([0.0, 0.0, -0.1]))
moved = geometry.reanchor([state], anchor)[0]
print("left hand before:", state.left.position, "after:", np.round(moved.left.position, 4))
d0 = np.linalg.norm(state.left.position - state.right.position)
d1 = np.linalg.norm(moved.left.position - moved.right.position)
print(f"inter-hand distance preserved: {d0:.6f} -> {d1:.6f}")

print("\n== pinhole projection ==")
cam = CameraIntrinsics(fx=300.0, fy=300.0, cx=320.0, cy=240.0, width=640, height=480)
for p in ([0.0, 0.0, 0.5], [0.2, -0.1, 0.8]):
    print(f"{p} -> pixel {np.round(geometry.project(p, cam), 2)}")
