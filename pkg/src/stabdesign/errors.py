"""Exception hierarchy shared by every module of the package."""


class StabDesignError(Exception):
    """Base class for all package errors."""


class ConfigError(StabDesignError, ValueError):
    pass


class DataError(StabDesignError, ValueError):
    """Input data (PDB, CSV, checkpoint) is unusable."""


# structure parsing / graphs
class NoResidues(DataError):
    pass


class MalformedRecord(DataError):
    pass


class TooFewResidues(DataError):
    pass


class UnknownAminoAcid(DataError):
    pass


class EmptyGraph(DataError):
    pass


# tensors / weights
class ShapeMismatch(StabDesignError, ValueError):
    pass


class NonScalarLoss(StabDesignError, ValueError):
    pass


class HeadDivisibility(StabDesignError, ValueError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptFile(DataError):
    pass


class BadScale(StabDesignError, ValueError):
    pass


class EmptyCorpus(StabDesignError, ValueError):
    pass


# oracles
class UnknownMutation(StabDesignError, KeyError):
    pass


class InvalidMutation(StabDesignError, ValueError):
    pass


class TooFewRecords(DataError):
    pass


class LengthMismatch(StabDesignError, ValueError):
    pass


# agent / baselines / evaluation
class AllMasked(StabDesignError, ValueError):
    pass


class InvalidPosition(StabDesignError, IndexError):
    pass


class OracleFailure(StabDesignError, RuntimeError):
    pass


class EmptySpace(StabDesignError, ValueError):
    pass


class SingularKernel(StabDesignError, ArithmeticError):
    pass


class NonFinite(StabDesignError, ValueError):
    pass


class DimMismatch(StabDesignError, ValueError):
    pass


class EmptyTrace(StabDesignError, ValueError):
    pass
