"""Error types shared across the package.

Exit-code contract used by the CLI and mirrored by the HTTP service:
0 success, 2 configuration error, 3 missing input, 4 numerical failure.
"""


class CsidtError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CsidtError):
    """Invalid configuration: unknown keys, bad values, inconsistent dims."""

    exit_code = 2


class MissingInputError(CsidtError):
    """A required file, corpus, or checkpoint is absent or incomplete."""

    exit_code = 3


class NumericalError(CsidtError):
    """Numerical failure: non-convergence, divergence, NaN propagation."""

    exit_code = 4


class CorpusFormatError(MissingInputError):
    """Corpus file unreadable: bad magic, wrong version, or truncated."""
