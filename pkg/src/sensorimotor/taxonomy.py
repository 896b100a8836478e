"""Object/affordance taxonomy: 14 objects, 13 affordances, 54 valid pairs."""

from __future__ import annotations

import numpy as np

OBJECTS = (
    "Ball", "Book", "Bottle", "Box", "Brush", "Can", "Cup",
    "Hammer", "Key", "Knife", "Pen", "Pitcher", "Smartphone", "Sponge",
)

AFFORDANCES = (
    "Grasp", "Lift", "Push", "Rotate", "Open", "Hammer", "Cut",
    "Pour", "Squeeze", "Unlock", "Paint", "Write", "Type",
)

_VALID_BY_OBJECT = {
    "Ball": ("Grasp", "Lift", "Push"),
    "Book": ("Grasp", "Lift", "Push", "Open", "Hammer"),
    "Bottle": ("Grasp", "Lift", "Push", "Pour"),
    "Box": ("Grasp", "Lift", "Push", "Rotate", "Open"),
    "Brush": ("Grasp", "Lift", "Paint"),
    "Can": ("Grasp", "Lift", "Push"),
    "Cup": ("Grasp", "Lift", "Push", "Rotate"),
    "Hammer": ("Grasp", "Lift", "Hammer"),
    "Key": ("Grasp", "Lift", "Cut", "Unlock"),
    "Knife": ("Grasp", "Lift", "Cut"),
    "Pen": ("Grasp", "Lift", "Write"),
    "Pitcher": ("Grasp", "Lift", "Push", "Rotate", "Pour"),
    "Smartphone": ("Grasp", "Lift", "Push", "Type"),
    "Sponge": ("Grasp", "Lift", "Push", "Rotate", "Squeeze"),
}


class Taxonomy:
    """The label sets and the valid-combination matrix."""

    def __init__(self):
        self.objects = OBJECTS
        self.affordances = AFFORDANCES
        valid = np.zeros((len(OBJECTS), len(AFFORDANCES)), dtype=bool)
        for obj, affs in _VALID_BY_OBJECT.items():
            for aff in affs:
                valid[OBJECTS.index(obj), AFFORDANCES.index(aff)] = True
        self.valid = valid

    def object_index(self, name: str) -> int:
        try:
            return OBJECTS.index(name)
        except ValueError:
            raise KeyError(f"unknown object {name!r}") from None

    def affordance_index(self, name: str) -> int:
        try:
            return AFFORDANCES.index(name)
        except ValueError:
            raise KeyError(f"unknown affordance {name!r}") from None

    def is_valid(self, obj, aff) -> bool:
        if isinstance(obj, str):
            obj = self.object_index(obj)
        if isinstance(aff, str):
            aff = self.affordance_index(aff)
        return bool(self.valid[obj, aff])

    def valid_pairs(self):
        """All (object_index, affordance_index) combinations, row-major."""
        return [(o, a) for o in range(len(OBJECTS)) for a in range(len(AFFORDANCES))
                if self.valid[o, a]]


TAXONOMY = Taxonomy()
