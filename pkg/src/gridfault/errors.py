"""Exception taxonomy shared across the toolkit."""


class GridFaultError(Exception):
    """Base class for all toolkit errors."""


# --- grid / linear algebra ---

class UnbalancedComponent(GridFaultError):
    """Injections of a connected component do not sum to ~0."""


class SingularSystem(GridFaultError):
    """Power-flow system is singular (a component has no pinned angle)."""


# --- case parsing / serialization ---

class ParseError(GridFaultError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)


class MissingTable(GridFaultError):
    def __init__(self, table):
        self.table = table
        super().__init__(f"required block 'mpc.{table}' not found")


class DisconnectedCase(GridFaultError):
    """Merged case graph is not connected."""


class NonpositiveReactance(GridFaultError):
    """Branch reactance must be strictly positive."""


class UnbalancedCase(GridFaultError):
    """Raw injections are too far from balance to attribute to rounding."""


class VersionMismatch(GridFaultError):
    """Scenario file schema version is not supported."""


class SchemaError(GridFaultError):
    """Scenario file is structurally invalid or inconsistent."""


# --- attack generation ---

class TooFewLinks(GridFaultError):
    """Requested more failures than there are candidate links."""


# --- LP kernel ---

class NumericalBreakdown(GridFaultError):
    """Persistent tiny pivots or iteration blow-up; caller may rescale."""


# --- recovery ---

class InfeasibleSystem(GridFaultError):
    """Right-hand side is not in the range of the incidence matrix."""


class InfeasibleP1(GridFaultError):
    """LP relaxation infeasible; signals a corrupted observation."""


class TooLarge(GridFaultError):
    """Enumeration guard tripped."""


# --- certificates ---

class NotConnected(GridFaultError):
    """Node set does not induce a connected subgraph."""


class PreconditionViolated(GridFaultError):
    """Certificate construction used outside its stated preconditions."""
