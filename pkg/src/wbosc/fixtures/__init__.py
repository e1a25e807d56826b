"""Bundled robot descriptions, controller configurations, and trajectories."""

from importlib import resources


def fixture_path(*parts):
    return resources.files(__package__).joinpath(*parts)


def robot_path(name):
    return fixture_path("robots", f"{name}.yaml")


def config_path(name):
    return fixture_path("configs", f"{name}.yaml")


def trajectory_path(name):
    return fixture_path("trajectories", f"{name}.yaml")


def read_robot(name):
    return robot_path(name).read_text(encoding="utf-8")


def read_config(name):
    return config_path(name).read_text(encoding="utf-8")
