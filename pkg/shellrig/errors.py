"""
ShellRig Error Types
"""


class ShellRigError(Exception):
    """Base class for every error raised by the toolkit"""


class MetricError(ShellRigError, ValueError):
    """Invalid metric table or incompatible linear map shapes"""


class PatchError(ShellRigError, ValueError):
    """A point lies outside the coordinate patch of a metric field"""


class ChartError(ShellRigError, ValueError):
    """Chart or chart extension preconditions do not hold"""


class GeodesicError(ShellRigError, RuntimeError):
    """Geodesic shooting or energy minimization failed"""


class HypothesisError(ShellRigError):
    """An estimate was evaluated outside of its hypotheses"""

    def __init__(self, hypothesis: str, detail: str):
        self.hypothesis = hypothesis
        self.detail = detail
        super().__init__(f"{hypothesis}: {detail}")


class ConfigError(ShellRigError, ValueError):
    """Scenario configuration could not be resolved"""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class ReportError(ShellRigError, OSError):
    """Reports could not be written to the requested location"""
