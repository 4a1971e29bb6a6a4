"""Exception types shared across the toolkit."""


class BctxError(Exception):
    """Base class for every error raised by this package."""


# apk container
class NotAZip(BctxError):
    pass


class MissingDex(BctxError):
    pass


class MissingManifest(BctxError):
    pass


class NotSupported(BctxError):
    pass


# dex
class DexError(BctxError):
    pass


class BadMagic(DexError):
    pass


class TruncatedSection(DexError):
    pass


class IndexOutOfRange(DexError):
    pass


class SpecTooLarge(DexError):
    pass


# manifest / resources
class BadChunk(BctxError):
    pass


class BadStringPool(BadChunk):
    pass


class WellFormednessError(BctxError):
    pass


class EmptyTraining(BctxError):
    pass


# iccg
class BadCatalogLine(BctxError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


# models
class ShapeMismatch(BctxError):
    pass


class DimMismatch(BctxError):
    pass


class EmptyDataset(BctxError):
    pass


class LabelUnseen(BctxError):
    pass


class ModelFormatError(BctxError):
    pass


class BadModelMagic(ModelFormatError):
    pass


class VersionUnsupported(ModelFormatError):
    pass


class FingerprintMismatch(ModelFormatError):
    pass


# harness
class ClassTooSmall(BctxError):
    pass


class UnknownOperator(BctxError):
    pass


class CacheFormatError(BctxError):
    pass


class CorpusError(BctxError):
    pass
