"""
Node and relation types of the heterogeneous information network.
"""
from dataclasses import dataclass
from enum import Enum, IntEnum

from ..core.errors import DataError


class HinError(DataError):
    """Base exception for all graph errors."""
    pass


class UnknownNodeError(HinError):
    """Exception raised when a node is not part of the graph."""
    pass


class NodeKind(IntEnum):
    """Kinds of nodes. The integer value fixes the global node order."""
    USER = 0
    ITEM = 1
    BRAND = 2
    CATEGORY = 3

    @property
    def code(self) -> str:
        """Single lowercase letter used in tokens and files."""
        return _KIND_CODES[self]

    @property
    def letter(self) -> str:
        """Single uppercase letter used in scheme strings such as I-B-I."""
        return _KIND_CODES[self].upper()

    @classmethod
    def from_code(cls, code: str) -> 'NodeKind':
        """
        Parse a kind code ('u', 'i', 'b', 'c'; case-insensitive).

        Raises:
            HinError: If the code is unknown
        """
        try:
            return _CODE_KINDS[code.lower()]
        except KeyError:
            raise HinError(f"Unknown node kind '{code}'")


_KIND_CODES = {
    NodeKind.USER: 'u',
    NodeKind.ITEM: 'i',
    NodeKind.BRAND: 'b',
    NodeKind.CATEGORY: 'c',
}
_CODE_KINDS = {code: kind for kind, code in _KIND_CODES.items()}


@dataclass(frozen=True, order=True)
class NodeRef:
    """
    A node of the graph: its kind and its dense index within that kind.

    Attributes:
        kind: Kind of the node
        local_id: Non-negative index, unique within the kind
    """
    kind: NodeKind
    local_id: int

    def __post_init__(self):
        if self.local_id < 0:
            raise HinError(f"Node id must be non-negative, got {self.local_id}")

    @property
    def token(self) -> str:
        """Text form 'kind:local_id', e.g. 'i:17'."""
        return f"{self.kind.code}:{self.local_id}"

    @classmethod
    def parse(cls, token: str) -> 'NodeRef':
        """
        Parse a 'kind:local_id' token.

        Raises:
            HinError: If the token is malformed
        """
        code, sep, local = token.partition(':')
        if not sep:
            raise HinError(f"Malformed node token '{token}'")
        try:
            return cls(NodeKind.from_code(code), int(local))
        except ValueError:
            raise HinError(f"Malformed node id in token '{token}'")

    def __str__(self) -> str:
        return self.token


class RelationType(Enum):
    """Base relation types. Inverses are expressed by `Relation.inverse`."""
    BUY = 'Buy'
    IS_BRAND_OF = 'IsBrandOf'
    IS_CATEGORY_OF = 'IsCategoryOf'
    SELF_LOOP = 'SelfLoop'


@dataclass(frozen=True)
class Relation:
    """
    A typed edge label, possibly the inverse of a base relation.

    Attributes:
        type: The base relation
        inverse: True for the reversed direction (never set for self-loops)
    """
    type: RelationType
    inverse: bool = False

    def __post_init__(self):
        if self.type is RelationType.SELF_LOOP and self.inverse:
            raise HinError("Self-loops have no inverse")

    @property
    def name(self) -> str:
        return f"{self.type.value}^-1" if self.inverse else self.type.value

    def invert(self) -> 'Relation':
        """Return the reversed relation; a self-loop is its own inverse."""
        if self.type is RelationType.SELF_LOOP:
            return self
        return Relation(self.type, not self.inverse)

    @classmethod
    def parse(cls, name: str) -> 'Relation':
        """
        Parse a relation name such as 'Buy' or 'Buy^-1'.

        Raises:
            HinError: If the name is unknown
        """
        inverse = name.endswith('^-1')
        base = name[:-3] if inverse else name
        try:
            return cls(RelationType(base), inverse)
        except ValueError:
            raise HinError(f"Unknown relation '{name}'")

    def __str__(self) -> str:
        return self.name


SELF_LOOP = Relation(RelationType.SELF_LOOP)
