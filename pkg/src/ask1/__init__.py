"""Desk-scale quadruped locomotion RL stack.

Vectorized simplified simulation, gait-conditioned rewards with
velocity-proportional foothold targets, asymmetric actor-critic networks with
a supervised velocity estimator, PPO training, and a CLI that writes CSV
metrics and SVG figures.
"""

__version__ = "0.1.0"
