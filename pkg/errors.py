# errors.py
# ---------------------------------------------------------
# Exception hierarchy shared by every automarg module.
# ---------------------------------------------------------


class AutomargError(Exception):
    """Base class for all errors raised by this package."""


class ExprError(AutomargError):
    """Invalid construction of an expression graph."""


class ExprDomainError(ExprError):
    def __init__(self, message, node_index=None):
        super().__init__(message)
        self.node_index = node_index


class MissingBindingError(ExprError):
    def __init__(self, var_id):
        super().__init__(f"no binding for input variable {var_id}")
        self.var_id = var_id


class ModelStructureError(AutomargError):
    """Broken graphical-model structure (dangling refs, duplicate names...)."""


class CycleError(ModelStructureError):
    pass


class SupportError(AutomargError):
    """Observed value lies outside the support of its family."""


class InvalidParameterError(ValueError, AutomargError):
    pass


class NonAffineError(AutomargError):
    pass


class TransformError(AutomargError):
    pass


class IneligibleModelError(AutomargError):
    """The model cannot be sampled with HMC (e.g. discrete latents)."""


class InitializationError(AutomargError):
    pass


class DatasetSchemaError(AutomargError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ConfigError(AutomargError):
    pass


class ConstantChainWarning(UserWarning):
    """ESS requested for a chain with zero variance."""
