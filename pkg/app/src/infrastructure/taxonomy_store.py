import json
import logging
from pathlib import Path

from app.src.core.exceptions.taxonomy_exceptions import TaxonomyFormatError
from app.src.domain.taxonomy import (
    ClassTaxonomy,
    SemanticTargetSet,
    SimilarityMatrix,
    taxonomy_from_document,
)
from app.src.infrastructure.locking.atomic_operations import AtomicFileOperations

logger = logging.getLogger(__name__)

CIFAR100_TAXONOMY_PATH = Path(__file__).parent / "taxonomies" / "cifar100.json"


def load_taxonomy(path: Path) -> ClassTaxonomy:
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise TaxonomyFormatError(
            message=f"Hierarchy file not found: {path}", original_error=e
        ) from e
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TaxonomyFormatError(
            message=f"Hierarchy file {path} is not valid JSON", original_error=e
        ) from e
    logger.debug("Parsing hierarchy file", extra={"path": str(path)})
    return taxonomy_from_document(document)


class TaxonomyStore:
    def __init__(self, atomic_ops: AtomicFileOperations | None = None):
        self.atomic_ops = atomic_ops or AtomicFileOperations()

    def save_taxonomy(self, taxonomy: ClassTaxonomy, path: Path) -> str:
        return self.atomic_ops.write_text(
            path, json.dumps(taxonomy.to_document(), indent=2) + "\n"
        )

    def export_similarity_csv(self, sim: SimilarityMatrix, path: Path) -> str:
        return self.atomic_ops.write_text(path, sim.to_csv())

    def save_target_sets(self, targets: SemanticTargetSet, path: Path) -> str:
        return self.atomic_ops.write_text(
            path, json.dumps(targets.to_document(), indent=2) + "\n"
        )
