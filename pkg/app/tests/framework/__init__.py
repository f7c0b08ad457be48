from .assertions import MetricAssertions, RunAssertions
from .builders import (
    DatasetBuilder,
    TaxonomyBuilder,
    cifar_record,
    cifar_stream,
    constant_model,
    linear_model,
    records_from_pairs,
)
from .fixtures.service_fixtures import tiny_config_document
from .infrastructure.performance import PerformanceTracker

__all__ = [
    # Assertions
    "MetricAssertions",
    "RunAssertions",
    # Builders
    "DatasetBuilder",
    "TaxonomyBuilder",
    "cifar_record",
    "cifar_stream",
    "constant_model",
    "linear_model",
    "records_from_pairs",
    "tiny_config_document",
    # Infrastructure
    "PerformanceTracker",
]
