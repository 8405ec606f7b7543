class InputError(ValueError):
    """Invalid argument or malformed input data (CLI exit code 2)."""


class SceneParseError(InputError):
    """Scene or asset file could not be parsed."""

    def __init__(self, message, path=None, line=None, field=None):
        self.path = path
        self.line = line
        self.field = field
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ":".join(where[:2])
        if len(where) > 2:
            prefix += f" ({where[2]})"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class PreconditionError(RuntimeError):
    """An operation was called before a required pipeline step."""
