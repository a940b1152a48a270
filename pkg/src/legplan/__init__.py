"""Footstep and centre-of-mass planning for a quadruped on rough terrain.

Two planners share one terrain model:

* ``coupled`` is a receding-horizon planner. CMA-ES tunes phase timing and
  COP motion jointly with the footholds over a cart-table preview model.
* The decoupled pipeline first searches a body path with ARA*
  (``body_planner``) and picks footholds greedily (``footholds``); a QP then
  fits a quintic CoM spline (``com_spline``).

``bench`` and ``cli`` compare them on generated terrains.
"""

__version__ = "0.1.0"

__all__ = [
    "attitude",
    "bench",
    "body_planner",
    "cli",
    "cmaes",
    "com_spline",
    "coupled",
    "footholds",
    "geometry",
    "preview",
    "qp",
    "terrain",
]
