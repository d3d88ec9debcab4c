"""Trajectory planning and simulation for CAVs at a signal-free intersection.

Each arriving vehicle first tries an energy-optimal cubic trajectory found
by scanning exit times; if none satisfies the speed, acceleration and
headway constraints it falls back to a quartic interpolated through
conflict-point crossing times chosen in idle windows, with the crossing
times tuned to minimise squared jerk.
"""

__version__ = "0.1.0"
