"""Exception hierarchy shared by all aogparts modules."""


class AogError(Exception):
    """Base class for every error raised by this package."""


# --- feature-map container ---------------------------------------------------

class FmapError(AogError):
    pass


class BadMagic(FmapError):
    pass


class BadVersion(FmapError):
    pass


class TruncatedPayload(FmapError):
    pass


class EmptyCorpus(FmapError):
    pass


class IndexOutOfRange(FmapError, IndexError):
    pass


# --- model -------------------------------------------------------------------

class ModelError(AogError):
    pass


class SchemaMismatch(ModelError):
    pass


class CorruptPayload(ModelError):
    pass


class NoAnnotations(ModelError):
    pass


# --- parsing -----------------------------------------------------------------

class ParseError(AogError):
    pass


class EmptyModel(ParseError):
    pass


class NoPatterns(ParseError):
    pass


class EmptyDeformationRange(ParseError):
    pass


# --- mining ------------------------------------------------------------------

class MinerError(AogError):
    pass


class UnknownImage(MinerError):
    pass


# --- question answering ------------------------------------------------------

class QaError(AogError):
    pass


class PoolExhausted(QaError):
    pass


class MissingBbox(QaError):
    pass


class UnknownTemplate(QaError):
    pass


class LengthMismatch(QaError):
    pass


class OracleFailure(QaError):
    pass


# --- evaluation --------------------------------------------------------------

class EvalError(AogError):
    pass


class ZeroDiagonal(EvalError):
    pass


class DegenerateBox(EvalError):
    pass


class EmptyLayer(EvalError):
    pass
