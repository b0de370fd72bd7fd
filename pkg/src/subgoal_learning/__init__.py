"""Subgoal-graph model of environment learning in agile guidance tasks."""

from importlib import resources

__version__ = "0.1.0"


def demo_world_path():
    return resources.files(__name__) / "data" / "demo_world.json"
