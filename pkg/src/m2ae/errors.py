class ShapeError(ValueError):
    """Tensor extents are inconsistent with an operation's contract."""


class ConfigError(ValueError):
    """Invalid network configuration or argument combination."""


class MissingWeightError(KeyError):
    """A tensor required by the network is absent from the weight store."""

    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"missing weight tensor {self.name!r}"


class FormatError(ValueError):
    """Malformed weight container; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
