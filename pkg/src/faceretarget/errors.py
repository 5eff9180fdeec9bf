"""Exception types raised by the library."""


class InvalidInputError(ValueError):
    """Raised when an input violates a documented contract."""


class CollisionError(InvalidInputError):
    """Two ground-truth faces map to the same (cell, anchor) slot."""

    def __init__(self, slot, first, second):
        self.slot = slot
        self.first = first
        self.second = second
        super().__init__(
            f"faces {first} and {second} both map to cell {slot[0]}, anchor {slot[1]}"
        )


class PlacementError(RuntimeError):
    """A synthetic scene could not be laid out without overlapping faces."""
