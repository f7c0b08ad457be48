from .dataset_builder import DatasetBuilder, cifar_record, cifar_stream
from .model_builder import constant_model, linear_model, overfit_reference_net
from .record_builder import records_from_pairs
from .taxonomy_builder import TaxonomyBuilder

__all__ = [
    "DatasetBuilder",
    "TaxonomyBuilder",
    "cifar_record",
    "cifar_stream",
    "constant_model",
    "linear_model",
    "overfit_reference_net",
    "records_from_pairs",
]
