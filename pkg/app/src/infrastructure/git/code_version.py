import logging
from pathlib import Path

import git

logger = logging.getLogger(__name__)

UNKNOWN_VERSION = "unknown"


class CodeVersion:
    """Identifies the source tree a run was produced from."""

    def __init__(self, repository_path: Path):
        self.repo_path = repository_path
        self._repo: git.Repo | None = None

    @property
    def repo(self) -> git.Repo | None:
        if self._repo is None:
            try:
                self._repo = git.Repo(self.repo_path, search_parent_directories=True)
            except (git.exc.InvalidGitRepositoryError, git.exc.NoSuchPathError):
                logger.debug("No git repository found", extra={"path": str(self.repo_path)})
                return None
        return self._repo

    def describe(self) -> str:
        repo = self.repo
        if repo is None or not repo.head.is_valid():
            return UNKNOWN_VERSION

        commit = repo.head.commit.hexsha
        if repo.is_dirty(untracked_files=False):
            logger.warning("Source tree has uncommitted changes")
            return f"{commit}-dirty"
        return commit
