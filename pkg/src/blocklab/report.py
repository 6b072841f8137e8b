"""Verification reports: one line per certified clause, renderable as a
text table or as stable machine-readable JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

REPORT_FORMAT = "blocklab-report/1"


@dataclass(frozen=True)
class Line:
    tag: str        # rule identifier, e.g. "t7:i52"
    subject: str    # instance coordinates, e.g. "n=3 m=1"
    ok: bool
    witness: str = ""

    def to_obj(self) -> dict:
        return {"tag": self.tag, "subject": self.subject, "ok": self.ok, "witness": self.witness}


@dataclass
class Report:
    title: str
    lines: list[Line] = field(default_factory=list)

    def add(self, tag: str, subject: str, ok: bool, witness: str = "") -> None:
        self.lines.append(Line(tag, subject, bool(ok), witness))

    def extend(self, other: "Report") -> None:
        self.lines.extend(other.lines)

    @property
    def ok(self) -> bool:
        return all(line.ok for line in self.lines)

    def failures(self) -> list[Line]:
        return [line for line in self.lines if not line.ok]

    def to_obj(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "title": self.title,
            "ok": self.ok,
            "lines": [line.to_obj() for line in self.lines],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True, separators=(",", ":")) + "\n"

    def to_text(self) -> str:
        rows = [("clause", "subject", "verdict", "witness")]
        for line in self.lines:
            rows.append((line.tag, line.subject, "pass" if line.ok else "FAIL", line.witness))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        out = [f"# {self.title}"]
        for i, r in enumerate(rows):
            out.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(r)).rstrip())
            if i == 0:
                out.append("  ".join("-" * widths[j] for j in range(4)))
        out.append(f"result: {'PASS' if self.ok else 'FAIL'} ({len(self.lines)} clauses)")
        return "\n".join(out) + "\n"
