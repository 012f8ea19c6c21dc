"""Exception type shared by every stage of the pipeline."""

from __future__ import annotations


class NoiseSimError(Exception):
    """Raised with a short machine-readable ``code`` (e.g. ``"no-centerlines"``).

    Callers that need to branch on the failure kind should test ``err.code``
    rather than parse the message.
    """

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}" if message else code)
