"""Error types shared by every engine in the package.

Checks never truncate silently: an answer that cannot be produced within
the caller's budget or declared depth surfaces as DepthExceeded, and a
violated hypothesis surfaces as PreconditionFailed naming the clause.
"""


class LabError(Exception):
    pass


class DepthExceeded(LabError):
    """A budgeted search or enumeration ran out of steps or table depth."""

    def __init__(self, context: str = ""):
        super().__init__(context or "depth/budget exceeded")
        self.context = context


class ExhaustedTable(DepthExceeded):
    """A complete finite table ran out of entries.

    Subclass of DepthExceeded so ordinary consumers treat it as a budget
    failure; only operations that know a table is complete (e.g. unions
    with finite padding) catch it specially.
    """


class TableHorizon(DepthExceeded):
    """A query ran past the declared depth of a truncated table.

    Unlike budget exhaustion this names a definite knowledge boundary, so
    prefix-scoped certificates may soundly record "nothing found within
    the inspected region" when they catch it.
    """


class PreconditionFailed(LabError):
    """An operation's hypothesis failed; ``clause`` names which one."""

    def __init__(self, clause: str, detail: str = ""):
        super().__init__(f"{clause}: {detail}" if detail else clause)
        self.clause = clause
        self.detail = detail


class OracleRequired(LabError):
    """The requested step needs an oracle the context does not carry."""

    def __init__(self, obligation: str):
        super().__init__(f"oracle required: {obligation}")
        self.obligation = obligation


class ScenarioError(LabError):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, where: str = ""):
        super().__init__(f"{message}" + (f" (at {where})" if where else ""))
        self.where = where


class ResolutionError(ScenarioError):
    def __init__(self, missing: str):
        super().__init__(f"unresolved name: {missing}")
        self.missing = missing


class CycleError(ScenarioError):
    def __init__(self, names):
        super().__init__("definition cycle: " + " -> ".join(names))
        self.names = tuple(names)
