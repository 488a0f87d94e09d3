"""Multi-agent RL with synergy-seeking intrinsic rewards.

The package trains joint policies on kinematic cooperation tasks where
rewards derived from the mismatch between joint-effect predictions and
composed single-agent predictions guide exploration toward genuinely
cooperative behavior.
"""

__version__ = "0.1.0"
