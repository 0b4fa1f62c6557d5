#!/usr/bin/env python3
"""
⚠️ Error Types
==============
Exception hierarchy shared by every simulator module.
"""


class PflError(Exception):
    """Base class for all simulator errors"""


# numcore

class ShapeError(PflError):
    """Matrix or vector dimensions do not agree"""


class LayoutError(PflError):
    """Two ParamVectors do not share the same segment layout"""


# datagen

class DatasetError(PflError):
    """A dataset violates its invariants"""


class IdxFormatError(PflError):
    """Malformed IDX file (bad magic, truncation, count mismatch)"""


class ScenarioFormatError(PflError):
    """Malformed or inconsistent on-disk scenario"""


class InfeasibleScenarioError(PflError):
    """A partition spec cannot be satisfied by the source dataset"""


# configuration

class ConfigError(PflError):
    """Invalid run or experiment configuration"""


class UnknownAlgorithmError(ConfigError):
    """Algorithm name not present in the registry"""

    def __init__(self, name: str, available: list):
        self.name = name
        self.available = list(available)
        super().__init__(
            f"Unknown algorithm '{name}'. Available: {', '.join(self.available)}"
        )


# engine

class AggregationError(PflError):
    """Aggregation was asked to reduce nothing or invalid weights"""


class ContractViolation(PflError):
    """A plugin hook broke the engine contract"""

    def __init__(self, message: str, client_id: int = None):
        self.client_id = client_id
        prefix = f"client {client_id}: " if client_id is not None else ""
        super().__init__(prefix + message)


class DivergenceError(ContractViolation):
    """Non-finite values appeared in a model or update"""


# privacy

class DegenerateGradientError(PflError):
    """Gradient carries no information to invert"""


# reporting

class ReportError(PflError):
    """Summaries missing or incompatible"""
