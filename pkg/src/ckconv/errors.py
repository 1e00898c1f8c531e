"""Exception hierarchy. Each family maps onto a CLI exit code."""


class CkconvError(Exception):
    exit_code = 1


class ConfigError(CkconvError, ValueError):
    exit_code = 2


class DataError(CkconvError, ValueError):
    exit_code = 3


class DivergenceError(CkconvError, ArithmeticError):
    exit_code = 4


class DimensionError(CkconvError, ValueError):
    exit_code = 3


class ContractError(CkconvError, RuntimeError):
    """Autodiff misuse: non-scalar loss, missing graph, and so on."""


class EmptyTapeError(ContractError):
    pass


class SingularityError(CkconvError, ArithmeticError):
    pass


class NonFiniteError(DivergenceError):
    pass


class HorizonError(ConfigError):
    pass


class CompatibilityError(ConfigError):
    pass
