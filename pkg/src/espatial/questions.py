"""Question templates shared by the dataset generator and the fallback reasoner.

One fixed template per query category; parsing is the exact inverse of
rendering, so generated questions always round-trip.
"""

from __future__ import annotations

import re

from .query import QueryCategory

TEMPLATES: dict[QueryCategory, str] = {
    QueryCategory.ADJACENCY: "Is the {a} adjacent to the {b}?",
    QueryCategory.DISTANCE: "How far is the {a} from the {b}?",
    QueryCategory.OVERLAP: "Does the {a} overlap the {b}?",
    QueryCategory.DIRECTION: "Where is the {a} relative to the {b}?",
    QueryCategory.REACHABILITY: "Can the robot reach the {a}?",
    QueryCategory.ARM_FEASIBILITY: "Can the robot arm reach the {a} without obstruction?",
    QueryCategory.SUCCESS_JUDGMENT: "Does the built structure match the target structure?",
}

_LABEL = r"[\w ]+?"
_PATTERNS: tuple[tuple[QueryCategory, re.Pattern], ...] = (
    (QueryCategory.ADJACENCY, re.compile(rf"^Is the (?P<a>{_LABEL}) adjacent to the (?P<b>{_LABEL})\?$")),
    (QueryCategory.DISTANCE, re.compile(rf"^How far is the (?P<a>{_LABEL}) from the (?P<b>{_LABEL})\?$")),
    (QueryCategory.OVERLAP, re.compile(rf"^Does the (?P<a>{_LABEL}) overlap the (?P<b>{_LABEL})\?$")),
    (QueryCategory.DIRECTION, re.compile(rf"^Where is the (?P<a>{_LABEL}) relative to the (?P<b>{_LABEL})\?$")),
    (QueryCategory.REACHABILITY, re.compile(rf"^Can the robot reach the (?P<a>{_LABEL})\?$")),
    (QueryCategory.ARM_FEASIBILITY, re.compile(rf"^Can the robot arm reach the (?P<a>{_LABEL}) without obstruction\?$")),
    (QueryCategory.SUCCESS_JUDGMENT, re.compile(r"^Does the built structure match the target structure\?$")),
)


def render_question(category: QueryCategory, a: str | None = None, b: str | None = None) -> str:
    template = TEMPLATES[category]
    return template.format(a=a, b=b)


def parse_question(text: str) -> tuple[QueryCategory, str | None, str | None] | None:
    """Category and entity labels for a templated question, else None."""
    for category, pattern in _PATTERNS:
        match = pattern.match(text.strip())
        if match:
            groups = match.groupdict()
            return (category, groups.get("a"), groups.get("b"))
    return None
