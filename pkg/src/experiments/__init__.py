"""
Run orchestration, open-loop rollout, oracles and invariant suites.
"""
