"""Task worlds and dataset generation."""

from diffpf.tasks.base import Task
from diffpf.tasks.disk import DiskTask, disk_step
from diffpf.tasks.maze import MazeTask, action_from_states, maze_process
from diffpf.tasks.simple import BimodalTask, LinearGaussianTask

TASK_NAMES = ("disk", "maze", "lg", "bimodal")
TASK_CLASSES = {"disk": DiskTask, "maze": MazeTask, "lg": LinearGaussianTask, "bimodal": BimodalTask}


def make_task(name, **params):
    """Construct a task from its name and the parameters stored in dataset metadata."""
    if name in TASK_CLASSES:
        return TASK_CLASSES[name](**params)
    raise ValueError(f"unknown task {name!r}; expected one of {', '.join(TASK_NAMES)}")


__all__ = [
    "Task", "DiskTask", "MazeTask", "LinearGaussianTask", "BimodalTask",
    "disk_step", "action_from_states", "maze_process", "make_task", "TASK_NAMES", "TASK_CLASSES",
]
