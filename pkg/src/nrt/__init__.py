"""Self-describing columnar object store with analysis tools."""
from .container import ContainerFile, create, open_container
from .hist import Hist1D, HistStack, merge, stack_totals
from .query import HistSpec, draw, map_entries, parse
from .refs import Ref, RefArray, RefRegistry
from .schema import DynamicRecord, FieldDescriptor, Kind, SchemaRegistry, TypeDescriptor
from .tree import create_tree, open_tree

__version__ = "0.1.0"

__all__ = [
    "ContainerFile",
    "DynamicRecord",
    "FieldDescriptor",
    "Hist1D",
    "HistSpec",
    "HistStack",
    "Kind",
    "Ref",
    "RefArray",
    "RefRegistry",
    "SchemaRegistry",
    "TypeDescriptor",
    "create",
    "create_tree",
    "draw",
    "map_entries",
    "merge",
    "open_container",
    "open_tree",
    "parse",
    "stack_totals",
]
