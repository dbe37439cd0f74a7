"""Continuous-time value iteration for control-affine systems.

Solves the Hamilton-Jacobi-Bellman equation (and its Isaacs extension with
worst-case disturbances) by fitted value iteration: a locally quadratic
value network, closed-form greedy actions from convex-conjugate action
costs, closed-form adversaries over energy-ball / amplitude-box admissible
sets, and exponentially weighted n-step value targets from batched Euler
rollouts.
"""

from . import action_cost, adversary, config, dynamics, evaluation, fvi, value_net

__all__ = ["action_cost", "adversary", "config", "dynamics", "evaluation",
           "fvi", "value_net"]
__version__ = "0.1.0"
