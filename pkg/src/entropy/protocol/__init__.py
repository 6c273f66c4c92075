"""Per-node protocol: storage, group maintenance, repair, client operations."""

from .node import Located, Node, ObjectUnavailable, StoreError
from .state import GroupView, MemberInfo, NodeConfig, NodeMetrics, ObjectRecipe, StoredFragment

__all__ = [
    "GroupView", "Located", "MemberInfo", "Node", "NodeConfig", "NodeMetrics",
    "ObjectRecipe", "ObjectUnavailable", "StoreError", "StoredFragment",
]
