"""
Exception hierarchy shared by every stage.

Parameter problems are the caller's fault (exit code 2 at the command line);
contract violations mean an exact computation produced something the theory
forbids and the run must stop (exit code 3).
"""


class ParameterError(ValueError):
    """Invalid model or run parameter."""


class ContractViolation(RuntimeError):
    """An internal consistency check failed."""


class TaxonomyError(ContractViolation):
    """Classification collision, hitting target outside the taxonomy, or neighborhood audit failure."""


class KernelPositivityError(ContractViolation):
    """Some off-diagonal entry of the ground kernel is not strictly positive."""


class SolverError(ContractViolation):
    """Unreachable absorption, reducible chain, or residual above tolerance."""
