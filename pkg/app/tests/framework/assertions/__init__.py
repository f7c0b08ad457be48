from .metric_assertions import MetricAssertions
from .run_assertions import RunAssertions

__all__ = ["MetricAssertions", "RunAssertions"]
