"""Exception hierarchy shared by all figaro modules."""


class FigaroError(Exception):
    """Base class; the CLI maps these to a nonzero exit status."""


class SchemaError(FigaroError):
    pass


class ParseError(FigaroError):
    pass


class JoinTreeError(FigaroError):
    pass


class EmptyJoinError(FigaroError):
    pass


class JoinSizeError(FigaroError):
    pass


class IntegrityError(FigaroError):
    """Raised when an input that should be fully reduced is not."""


class CountOverflowError(FigaroError):
    pass


class RankError(FigaroError):
    pass
