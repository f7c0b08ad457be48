from .performance import PerformanceMetric, PerformanceTracker

__all__ = ["PerformanceMetric", "PerformanceTracker"]
