"""anchorloc: monocular descent localization on a procedural terrain simulator.

A spline-basis (KAN) absolute pose regressor produces sparse global pose
anchors against a tile map; a drifting, scale-ambiguous visual-odometry
chain supplies high-rate relative motion; a Sim(3)-constrained pose graph
fuses the two into a globally consistent trajectory.
"""

from anchorloc.liegroup import (
    Pose,
    Rotation3,
    Sim3Transform,
    Twist,
    geodesic_angle,
    rot6d_to_rotation,
    se3_exp,
    se3_log,
    sim3_apply,
    so3_exp,
    so3_log,
)

__version__ = "0.1.0"
