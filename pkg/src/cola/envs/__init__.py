"""Desk-scale Dec-POMDP scenarios."""

from .grid import GridPredatorPrey, GridState
from .particle import (CooperativeNavigation, CooperativePantomime, CooperativePredatorPrey,
                       ScenarioState)

SCENARIOS = {
    "navigation": CooperativeNavigation,
    "predator_prey": CooperativePredatorPrey,
    "pantomime": CooperativePantomime,
    "grid_predator_prey": GridPredatorPrey,
}


def make_env(name: str, **kwargs):
    try:
        cls = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return cls(**kwargs)


__all__ = ["SCENARIOS", "make_env", "GridPredatorPrey", "GridState", "CooperativeNavigation",
           "CooperativePantomime", "CooperativePredatorPrey", "ScenarioState"]
