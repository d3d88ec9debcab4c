"""Intersection topology: paths, conflict-point positions and the conflict map.

Positions are arc lengths (meters) measured from the control-zone entry of
each path. No planar geometry is modeled; the planner only needs to know
where along a path a conflict point sits and which other paths share it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import LayoutError, UnknownPath

DEFAULT_LAYOUT_NAME = "four-leg-12path"


@dataclass(frozen=True)
class PathDescriptor:
    path_id: int
    length: float
    conflict_positions: tuple[tuple[int, float], ...] = ()


@dataclass(frozen=True)
class IntersectionLayout:
    paths: tuple[PathDescriptor, ...]
    conflict_map: Mapping[int, tuple[tuple[int, float], ...]] = field(default_factory=dict)

    def path(self, path_id: int) -> PathDescriptor:
        for p in self.paths:
            if p.path_id == path_id:
                return p
        raise UnknownPath(path_id)

    @property
    def path_ids(self) -> list[int]:
        return [p.path_id for p in self.paths]

    def to_dict(self) -> dict:
        return {
            "paths": [
                {
                    "path_id": p.path_id,
                    "length": p.length,
                    "conflicts": [
                        {"conflict_id": cid, "position": pos}
                        for cid, pos in p.conflict_positions
                    ],
                }
                for p in self.paths
            ]
        }


def _build(paths: list[PathDescriptor]) -> IntersectionLayout:
    seen = set()
    conflict_map: dict[int, list[tuple[int, float]]] = {}
    for p in paths:
        if p.path_id in seen:
            raise LayoutError(f"duplicate path_id {p.path_id}")
        seen.add(p.path_id)
        if not p.length > 0:
            raise LayoutError(f"path {p.path_id}: length must be > 0, got {p.length}")
        last = 0.0
        for cid, pos in p.conflict_positions:
            if not 0.0 < pos < p.length:
                raise LayoutError(
                    f"path {p.path_id}: conflict {cid} at {pos} m is outside (0, {p.length})"
                )
            if pos <= last:
                raise LayoutError(
                    f"path {p.path_id}: conflict positions must be strictly increasing "
                    f"(conflict {cid} at {pos} m follows {last} m)"
                )
            last = pos
            entries = conflict_map.setdefault(cid, [])
            if any(pid == p.path_id for pid, _ in entries):
                raise LayoutError(f"path {p.path_id} lists conflict {cid} twice")
            entries.append((p.path_id, pos))
    for cid, entries in conflict_map.items():
        if len(entries) < 2:
            raise LayoutError(
                f"conflict {cid} involves only path {entries[0][0]}; "
                "a conflict point needs at least two paths"
            )
    return IntersectionLayout(
        paths=tuple(paths),
        conflict_map={cid: tuple(v) for cid, v in sorted(conflict_map.items())},
    )


def load_layout(section: Any) -> IntersectionLayout:
    """Build and validate a layout from its config section.

    ``section`` is either the name of a built-in layout or a mapping with a
    ``paths`` list; each path has ``path_id``, ``length`` and an optional
    ``conflicts`` list of ``{"conflict_id", "position"}`` objects.
    """
    if isinstance(section, str):
        if section == DEFAULT_LAYOUT_NAME:
            return four_leg_12path()
        raise LayoutError(f"unknown built-in layout {section!r}")
    if not isinstance(section, Mapping) or "paths" not in section:
        raise LayoutError("layout must be a built-in name or an object with a 'paths' list")
    paths = []
    for i, raw in enumerate(section["paths"]):
        try:
            pid = raw["path_id"]
            length = raw["length"]
            conflicts = raw.get("conflicts", [])
            cp = tuple((int(c["conflict_id"]), float(c["position"])) for c in conflicts)
        except (KeyError, TypeError, ValueError) as exc:
            raise LayoutError(f"paths[{i}]: malformed path entry ({exc})") from None
        if isinstance(pid, bool) or not isinstance(pid, int):
            raise LayoutError(f"paths[{i}]: path_id must be an integer")
        paths.append(PathDescriptor(pid, float(length), cp))
    return _build(paths)


def conflicting_crossings(layout: IntersectionLayout, path_id: int):
    """Conflict points on ``path_id`` with the other paths that share them.

    Returns a list of ``(conflict_id, own_position, [(other_path_id, other_position), ...])``
    in increasing ``own_position`` order.
    """
    path = layout.path(path_id)
    out = []
    for cid, pos in path.conflict_positions:
        others = [(pid, opos) for pid, opos in layout.conflict_map[cid] if pid != path_id]
        out.append((cid, pos, others))
    return out


def four_leg_12path(length: float = 100.0, positions=(40.0, 50.0, 60.0)) -> IntersectionLayout:
    """Built-in layout: 4 approaches x (left, straight, right) = 12 paths.

    Path ids are ``3 * approach + movement + 1``. Every path crosses exactly
    three others, once each, at ``positions`` (first, second, third conflict):

    * first: the same movement from the previous approach,
    * second: a cross-movement partner (left with the next approach's
      straight, right turns with the opposite approach's right turn),
    * third: the same movement from the next approach.

    The pairing gives 18 two-path conflict points. It mirrors the qualitative
    structure of a four-leg intersection, not surveyed geometry.
    """
    left, straight, right = 0, 1, 2

    def pid(approach, movement):
        return 3 * (approach % 4) + movement + 1

    slots: dict[int, dict[int, int]] = {pid(a, m): {} for a in range(4) for m in range(3)}
    next_id = 1

    def connect(p, q, slot_p, slot_q):
        nonlocal next_id
        slots[p][slot_p] = next_id
        slots[q][slot_q] = next_id
        next_id += 1

    for m in (left, straight, right):
        for a in range(4):
            connect(pid(a, m), pid(a + 1, m), 2, 0)
    for a in range(4):
        connect(pid(a, left), pid(a + 1, straight), 1, 1)
    connect(pid(0, right), pid(2, right), 1, 1)
    connect(pid(1, right), pid(3, right), 1, 1)

    paths = [
        PathDescriptor(
            p,
            float(length),
            tuple((slots[p][s], float(positions[s])) for s in range(3)),
        )
        for p in sorted(slots)
    ]
    return _build(paths)
