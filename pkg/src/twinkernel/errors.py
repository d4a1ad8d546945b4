"""Exception hierarchy shared by the kernel modules."""


class TwinKernelError(Exception):
    """Base class for every error raised by the kernel."""


class TraceEncodingError(TwinKernelError):
    pass


class ModelError(TwinKernelError):
    """A model failed to parse or validate; carries the diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        first = self.diagnostics[0] if self.diagnostics else None
        super().__init__(str(first) if first else "invalid model")


class ExecutionError(TwinKernelError):
    """A model reached a state its validation should have ruled out."""


class ContractViolation(TwinKernelError):
    pass


class NonQuiescenceError(TwinKernelError):
    """A discrete executor kept firing past its iteration cap."""


class OracleOverflowError(TwinKernelError):
    pass


class NumericDivergenceError(TwinKernelError):
    pass


class CrossingAmbiguityError(TwinKernelError):
    pass


class ZenoError(TwinKernelError):
    pass


class InvariantViolationError(TwinKernelError):
    pass


class NonConvergenceError(TwinKernelError):
    """The discrete micro phase of a DTC did not settle."""

    def __init__(self, message, instances=()):
        super().__init__(message)
        self.instances = tuple(instances)


class SimulationError(TwinKernelError):
    """Wraps a component failure with the step index and DTC id."""

    def __init__(self, step, dtc, cause):
        self.step = step
        self.dtc = dtc
        self.cause = cause
        super().__init__(f"step {step}, dtc {dtc!r}: {type(cause).__name__}: {cause}")


class PlantTraceError(TwinKernelError):
    pass


class ComparisonError(TwinKernelError):
    pass


class CalibrationError(TwinKernelError):
    def __init__(self, message, candidate=None):
        super().__init__(message)
        self.candidate = candidate
