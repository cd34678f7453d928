"""Degradation task registry and the 3D/5D/6D/7D task-set variants."""
from __future__ import annotations

from dataclasses import dataclass

# Canonical ordering: the smaller variants are prefixes of the larger ones,
# so class ids stay stable when a model is expanded to more tasks.
TASK_NAMES = [
    "denoising",
    "dehazing",
    "deraining",
    "deblurring",
    "low_light",
    "super_resolution",
    "enhancement",
]

TASK_SET_NAMES = {
    "3D": TASK_NAMES[:3],
    "5D": TASK_NAMES[:5],
    "6D": TASK_NAMES[:6],
    "7D": TASK_NAMES[:7],
}

LANGUAGE_LEVELS = ("basic_precise", "basic_ambiguous", "real_user")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class TaskClass:
    """A degradation class with its dense id inside a task set."""

    id: int
    name: str

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ValueError(f"unknown task name: {self.name!r}")
        if self.id < 0:
            raise ValueError(f"task id must be >= 0, got {self.id}")


class TaskSet:
    """An ordered set of tasks defining a model variant (3D/5D/6D/7D)."""

    def __init__(self, name: str):
        if name not in TASK_SET_NAMES:
            raise ValueError(f"unknown task set {name!r}; choose from {sorted(TASK_SET_NAMES)}")
        self.name = name
        self.tasks = [TaskClass(i, n) for i, n in enumerate(TASK_SET_NAMES[name])]

    @property
    def task_count(self) -> int:
        return len(self.tasks)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tasks]

    def __contains__(self, task_name: str) -> bool:
        return task_name in TASK_SET_NAMES[self.name]

    def __iter__(self):
        return iter(self.tasks)

    def by_name(self, task_name: str) -> TaskClass:
        for t in self.tasks:
            if t.name == task_name:
                return t
        raise KeyError(f"task {task_name!r} is not part of the {self.name} set")

    def __repr__(self):
        return f"TaskSet({self.name!r}, D={self.task_count})"
