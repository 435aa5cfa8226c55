class DiffEditorError(Exception):
    exit_code = 3


class ConfigError(DiffEditorError):
    exit_code = 1


class DataError(DiffEditorError):
    exit_code = 2


class ProviderError(DiffEditorError):
    """Word-embedding provider could not run (e.g. model asset missing)."""

    def __init__(self, provider: str, message: str):
        super().__init__(f"[{provider}] {message}")
        self.provider = provider
