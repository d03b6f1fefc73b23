class SDLValidationError(ValueError):
    """Malformed input, bad configuration or an unresolvable label (exit code 1)."""


class SDLNumericError(RuntimeError):
    """Non-finite gradients or losses, or a failed gradient check (exit code 2)."""
