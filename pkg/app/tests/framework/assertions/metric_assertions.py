import math

from app.src.domain.metrics import SeverityReport


class MetricAssertions:
    @staticmethod
    def assert_report(
        actual: SeverityReport,
        *,
        n_total: int,
        n_mistakes: int,
        top1: float,
        coarse_of_mistakes: float | None,
        path_similarity: float | None,
        tol: float = 1e-12,
    ) -> None:
        errors = []

        if actual.n_total != n_total:
            errors.append(f"n_total: {actual.n_total} != {n_total}")
        if actual.n_mistakes != n_mistakes:
            errors.append(f"n_mistakes: {actual.n_mistakes} != {n_mistakes}")
        if not math.isclose(actual.top1_accuracy, top1, abs_tol=tol):
            errors.append(f"top1_accuracy: {actual.top1_accuracy} != {top1}")

        for name, got, want in (
            ("coarse_accuracy_of_mistakes", actual.coarse_accuracy_of_mistakes, coarse_of_mistakes),
            ("avg_mistake_path_similarity", actual.avg_mistake_path_similarity, path_similarity),
        ):
            if want is None or got is None:
                if got is not want:
                    errors.append(f"{name}: {got!r} != {want!r}")
            elif not math.isclose(got, want, abs_tol=tol):
                errors.append(f"{name}: {got} != {want}")

        if errors:
            raise AssertionError(
                f"SeverityReport mismatch for {actual.condition.key}:\n"
                + "\n".join(f"  • {e}" for e in errors)
            )
