"""Exception hierarchy shared by every module."""


class PairError(Exception):
    """Base class for all package errors."""


class ValidationError(PairError, ValueError):
    """Bad input: malformed tour, out-of-range index, bad config value."""


class CapacityError(PairError):
    """Problem size exceeds what an exact solver is allowed to handle."""


class ConsistencyError(PairError):
    """Two quantities that must agree do not (e.g. a tour beats the optimum)."""


class ConfigError(PairError):
    """Invalid or incomplete configuration."""


class TransportError(PairError):
    """Network-level failure talking to the model endpoint."""


class ApiError(PairError):
    """The endpoint answered with a non-success status."""

    def __init__(self, status: int, body: str, transient: bool = False):
        self.status = status
        self.body = body[:500]
        self.transient = transient
        super().__init__(f"endpoint returned HTTP {status}: {self.body}")


class SelectionError(PairError):
    """A selection strategy could not produce a valid plan.

    ``raw_output`` carries the last model reply (if any) for the run log.
    """

    def __init__(self, message: str, raw_output: str | None = None):
        super().__init__(message)
        self.raw_output = raw_output


class EngineError(PairError):
    """A run aborted; ``record`` holds everything produced before the failure."""

    def __init__(self, message: str, record=None):
        super().__init__(message)
        self.record = record


# -- response parsing -------------------------------------------------------
# ``policy`` tells the selection layer how to recover: re-send the prompt
# with a corrective note, or fix the plan locally.


class ParseError(PairError):
    policy = "requery"


class ParseEmpty(ParseError):
    """No answer records found in the reply."""


class MalformedRecord(ParseError):
    """A line starts like a record but does not follow the grammar."""


class UnknownIndividual(ParseError):
    """A record names an id that is not in the pool (yet)."""


class UnknownOperator(ParseError):
    """A record names an operator outside the catalog."""


class InvalidChild(ParseError):
    """A returned child route is not a permutation.

    Repairable: ``records`` holds every parsed record, with the child of each
    bad pair set to ``None`` so the engine can recompute it.
    """

    policy = "repair"

    def __init__(self, message: str, pair_index: int, records=None):
        super().__init__(message)
        self.pair_index = pair_index
        self.records = records
