"""Class vocabularies for the coarse (rule) and fine (manual) label sets.

Class ids are positions in these tuples. The two sets share names where they
overlap, so conversions go through names, never through raw ids.
"""

from __future__ import annotations

RULE_CLASSES: tuple[str, ...] = ("people", "car", "trunk", "building", "unknown")
FINE_CLASSES: tuple[str, ...] = (
    "people",
    "car",
    "trunk",
    "bush",
    "building",
    "cyclist",
    "unknown",
)

RULE_ID: dict[str, int] = {name: i for i, name in enumerate(RULE_CLASSES)}
FINE_ID: dict[str, int] = {name: i for i, name in enumerate(FINE_CLASSES)}

# gt_label value for points without ground truth (also the on-disk sentinel)
UNLABELED = 255

# fine classes the rule vocabulary cannot express; they fold into "unknown"
_FOLDED = ("bush", "cyclist")


def fine_name_to_rule_name(name: str) -> str:
    if name in _FOLDED:
        return "unknown"
    if name not in RULE_ID:
        raise ValueError(f"not a fine class name: {name!r}")
    return name


def fine_id_to_rule_id(fine_id: int) -> int:
    return RULE_ID[fine_name_to_rule_name(FINE_CLASSES[fine_id])]
