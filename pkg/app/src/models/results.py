from pathlib import Path

from pydantic import BaseModel, Field


class CommandResult(BaseModel):
    command: str = Field(..., description="Subcommand that produced the outputs")
    output_dir: Path
    artifacts: dict[str, str] = Field(
        default_factory=dict, description="Relative output path to sha256"
    )
    summary: dict[str, object] = Field(default_factory=dict)
