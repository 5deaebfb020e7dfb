"""Project directories.

A project is a directory holding `model.yaml` and, optionally, a
`scenarios/` folder of scenario files. The CLI and the service resolve
the project from an explicit path argument first, then from the
SP_PROJECT environment variable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .modelfile import ModelSpec, load_model_file
from .scenario import Scenario, load_scenario

MODEL_FILE = "model.yaml"
SCENARIO_DIR = "scenarios"
ENV_VAR = "SP_PROJECT"


class ProjectError(ValueError):
    pass


def resolve_project_path(arg: str | None = None) -> Path:
    """Explicit argument beats SP_PROJECT; there is no silent default."""
    if arg:
        root = Path(arg)
    else:
        env = os.environ.get(ENV_VAR, "")
        if not env:
            raise ProjectError(
                f"no project given and {ENV_VAR} is not set"
            )
        root = Path(env)
    if root.is_file() and root.name == MODEL_FILE:
        root = root.parent
    if not (root / MODEL_FILE).is_file():
        raise ProjectError(f"no {MODEL_FILE} under {root}")
    return root


@dataclass(frozen=True)
class Project:
    root: Path
    spec: ModelSpec

    @property
    def name(self) -> str:
        return self.spec.name

    def scenario_names(self) -> list[str]:
        d = self.root / SCENARIO_DIR
        if not d.is_dir():
            return []
        return sorted(p.stem for p in d.glob("*.yaml"))

    def scenario_path(self, name: str) -> Path:
        p = self.root / SCENARIO_DIR / f"{name}.yaml"
        if not p.is_file():
            known = ", ".join(self.scenario_names()) or "none"
            raise ProjectError(
                f"no scenario {name!r} in {self.root} (have: {known})"
            )
        return p

    def scenario(self, name: str) -> Scenario:
        return load_scenario(self.scenario_path(name), self.spec.model)


def load_project(arg: str | None = None) -> Project:
    root = resolve_project_path(arg)
    return Project(root=root, spec=load_model_file(root / MODEL_FILE))
