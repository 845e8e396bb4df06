"""Graph-guided de-identification of psychiatric case narratives.

The pipeline converts a narrative into a schema-constrained semantic graph,
perturbs contextual attributes under graph constraints, and regenerates a
de-identified narrative from the perturbed graph, with evaluation machinery
for the privacy/utility trade-off.
"""

from .model import SemanticGraph, validate_graph
from .yamlio import parse_yaml, serialize_yaml

__version__ = "0.1.0"

__all__ = ["SemanticGraph", "parse_yaml", "serialize_yaml", "validate_graph", "__version__"]
