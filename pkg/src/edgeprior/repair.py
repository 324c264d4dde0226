"""Iterative syntax repair around a code-specialized model."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .mermaid import ParseDiagnostics, sanitize, validate
from .vlm_client import (FixtureKey, GenerationParams, MockError, RequestError, TransportError,
                         extract_code_block, load_prompt)

__all__ = ["MAX_REPAIR_ITERATIONS", "RepairOutcome", "repair_loop", "repair_messages"]

log = logging.getLogger(__name__)

MAX_REPAIR_ITERATIONS = 10


@dataclass
class RepairOutcome:
    final_code: str
    valid: bool
    iterations_used: int
    history: List[Tuple[str, ParseDiagnostics]] = field(default_factory=list)


def _numbered(code: str) -> str:
    return "\n".join(f"{i:>3}| {line}" for i, line in enumerate(code.split("\n"), start=1))


def repair_messages(code: str, diagnostics: ParseDiagnostics) -> list:
    user = load_prompt("repair").format(diagnostics=diagnostics.render(),
                                        numbered_code=_numbered(code))
    return [
        {"role": "system", "content": load_prompt("repair_system")},
        {"role": "user", "content": user},
    ]


def _ask_fixer(fixer, code, diagnostics, params, key):
    if hasattr(fixer, "complete"):
        return fixer.complete(repair_messages(code, diagnostics), params, key).raw_text
    return fixer(code, diagnostics)


def repair_loop(code: str, fixer, key: Optional[FixtureKey] = None,
                params: Optional[GenerationParams] = None,
                max_iterations: int = MAX_REPAIR_ITERATIONS) -> RepairOutcome:
    """Validate ``code`` and, while it fails, ask ``fixer`` for a corrected version.

    ``fixer`` is an endpoint (anything with ``complete``) or a plain callable
    ``(code, diagnostics) -> reply text``. Fixer failures count as spent
    iterations; this function never raises for them.
    """
    params = params or GenerationParams()
    candidate = sanitize(code)
    diag = validate(candidate)
    history = [(candidate, diag)]
    if diag.ok:
        return RepairOutcome(candidate, True, 0, history)
    if fixer is None:
        return RepairOutcome(candidate, False, 0, history)

    for attempt in range(1, max_iterations + 1):
        attempt_key = None
        if key is not None:
            attempt_key = FixtureKey(key.flowchart_id, key.condition, key.run, attempt)
        try:
            reply = _ask_fixer(fixer, candidate, diag, params, attempt_key)
            candidate = sanitize(extract_code_block(reply))
        except (TransportError, RequestError, MockError, OSError) as exc:
            log.warning("repair attempt %d failed: %s", attempt, exc)
        diag = validate(candidate)
        history.append((candidate, diag))
        if diag.ok:
            return RepairOutcome(candidate, True, attempt, history)
    return RepairOutcome(candidate, False, max_iterations, history)
