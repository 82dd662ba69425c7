"""Verdict container shared by the checkers."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def _plain(v):
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    return v


@dataclass
class CheckReport:
    name: str
    verdict: bool
    counterexamples: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict == bool(self.counterexamples):
            raise ValueError("verdict must be false exactly when counterexamples exist")

    def __bool__(self):
        return self.verdict

    @classmethod
    def from_counterexamples(cls, name, counterexamples, stats=None, meta=None) -> "CheckReport":
        cex = sorted(counterexamples, key=lambda c: json.dumps(_plain(c), sort_keys=True))
        return cls(name, not cex, cex, dict(stats or {}), dict(meta or {}))

    def to_dict(self) -> dict:
        return _plain({
            "name": self.name,
            "verdict": self.verdict,
            "stats": self.stats,
            "meta": self.meta,
            "counterexamples": self.counterexamples,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self, max_cex: int = 20) -> str:
        d = self.to_dict()
        lines = [f"check {self.name}: {'PASS' if self.verdict else 'FAIL'}"]
        for k in sorted(d["meta"]):
            lines.append(f"  meta {k}={d['meta'][k]}")
        for k in sorted(d["stats"]):
            lines.append(f"  stat {k}={d['stats'][k]}")
        for c in d["counterexamples"][:max_cex]:
            lines.append("  counterexample " + json.dumps(c, sort_keys=True))
        if len(self.counterexamples) > max_cex:
            lines.append(f"  ... {len(self.counterexamples) - max_cex} more")
        return "\n".join(lines) + "\n"
