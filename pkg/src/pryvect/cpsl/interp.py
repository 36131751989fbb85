"""Reference interpreter: executes policy rules directly over a trace."""

from __future__ import annotations

from ..trace import Trace, Verdict, to_indices
from .check import TypedPolicy


def interpret(policy: TypedPolicy, trace: Trace) -> Verdict:
    """Run `trace` through `policy` rule by rule.

    Each event fires the first rule (in source order) whose guard holds and
    whose WHEN list contains the event. An event no rule handles rejects
    the trace outright.
    """
    state = policy.initial_env.values
    for symbol in to_indices(policy.alphabet, trace):
        state = policy.step(state, symbol)
        if state is None:
            return Verdict.REJECT
    return Verdict.of(policy.accepts(state))
