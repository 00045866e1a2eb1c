"""Coarse-to-fine semi-autonomous teleoperation, desk-scale and fully simulated.

Subsystems:

* geometry     - SE(3) poses, rotations, pinhole projection
* calibration  - hand-eye + per-axis scale recovery (Procrustes solvers)
* simworld     - simulated workcell, exploration, visual odometry, rendering
* controllers  - PBVS coarse and IBVS fine servo loops
* netproto     - datagram wire format, reliability, impairment, delay stats
* sessions     - robot agent, human gateway, scripted operator
* cli          - experiment runner and live-serving entry points
"""

__version__ = "0.1.0"
