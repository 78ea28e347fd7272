"""Constant-time execution padding toolkit.

Python surface over the C++ core: exact leakage oracles, the worst-case
timing estimators, deterministic padded runs on the virtual clock, the
scheduler/flush model, and the ChaCha/8 stream used by the randomization
step.
"""

from ._core import (
    PadlockError,
    SimWorld,
    chacha8_keystream,
    estimate_tmax,
    estimate_tpenalty,
    function_id,
    overtime_leakage_bound,
    run_padded_virtual,
    statistical_distance,
    uniformity_oracle,
)

__all__ = [
    "PadlockError",
    "SimWorld",
    "chacha8_keystream",
    "estimate_tmax",
    "estimate_tpenalty",
    "function_id",
    "overtime_leakage_bound",
    "run_padded_virtual",
    "statistical_distance",
    "uniformity_oracle",
]
