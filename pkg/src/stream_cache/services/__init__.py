"""
Services package for Stream Cache
"""

from .rope_cache import KvCache, assign_positions, attend_decoupled, compute_delta
from .attention_reference import attend_reference, attend_stale, run_rollout
from .pipeline_simulator import derived_metrics, simulate, sweep
from .state_tracker import observe_trace, policy_step, run_episode, tracker_update

__all__ = [
    "KvCache",
    "assign_positions",
    "attend_decoupled",
    "compute_delta",
    "attend_reference",
    "attend_stale",
    "run_rollout",
    "derived_metrics",
    "simulate",
    "sweep",
    "observe_trace",
    "policy_step",
    "run_episode",
    "tracker_update",
]
