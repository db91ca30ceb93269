"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A numerical invariant was violated (off-manifold point, non-finite loss, ...).

    The CLI maps this to exit code 2; plain ValueError (bad configuration or
    malformed input) maps to exit code 1.
    """
