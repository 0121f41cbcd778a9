"""Structured, non-fatal warnings emitted while parsing and analysing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

log = logging.getLogger("mbgp")


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    context: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message,
                "context": {k: str(v) if not isinstance(v, (int, float, bool)) else v
                            for k, v in self.context.items()}}


class Diagnostics(list):
    """A list of :class:`Diagnostic` that also mirrors each one to the logger."""

    def emit(self, code: str, message: str, **context) -> Diagnostic:
        diag = Diagnostic(code, message, context)
        self.append(diag)
        log.warning("%s: %s", code, message)
        return diag

    def codes(self) -> list:
        return [d.code for d in self]


def sink(diagnostics: Optional[Diagnostics]) -> Diagnostics:
    return Diagnostics() if diagnostics is None else diagnostics
