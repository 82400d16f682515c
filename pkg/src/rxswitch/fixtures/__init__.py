"""Bundled editable fixtures: the modality lexicon, the six prompt templates,
and the demo topic-grouping map. Callers may point the pipeline at their own
copies; these are the defaults."""

from importlib import resources
from pathlib import Path


def fixture_path(*parts: str) -> Path:
    return Path(resources.files(__package__).joinpath(*parts))  # type: ignore[arg-type]
