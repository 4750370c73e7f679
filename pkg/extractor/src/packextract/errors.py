"""Error type shared by the extraction pipeline."""


class ExtractorError(Exception):
    """Raised when inputs, configuration, or the backbone cannot be used."""
