"""Hardware-free workbench for planar vehicle GNC experiments.

Dynamics, deterministic simulation, robust system identification, EKF state
estimation, PD control with tuning, teach-and-repeat guidance, and a small
networked runtime for driving the simulated vehicle interactively.
"""

__version__ = "0.1.0"
