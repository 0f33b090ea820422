"""Space-angle user grouping (SAUG) and the four-color reuse baseline.

Each axis of ``[-1, 1)`` is cut into ``M_d * G_d`` cells of width
``2/(M_d G_d)``. Flat cell ``c`` splits into a group coordinate
``a = c mod G_d`` and a DFT-node coordinate ``b = c // G_d``; users whose cells
share ``(a_x, a_y)`` are served together. A cell holds at most one user per
time-frequency slot, and later arrivals in an occupied cell spill round-robin
into slots 1, 2, ...
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .channel import SpaceAngles, UpaConfig, upa_responses
from .txrx import dft_grid_index

__all__ = [
    "GroupingConfig",
    "CellIndex",
    "GroupAssignment",
    "cell_index",
    "cell_bounds",
    "saug_assign",
    "fr4_schedule",
    "epsilon_of",
    "group_epsilons",
    "axis_factor",
    "analytic_epsilon_bound",
    "pairwise_epsilon_bound",
]


@dataclass(frozen=True)
class GroupingConfig:
    g_x: int
    g_y: int

    def __post_init__(self):
        if self.g_x < 1 or self.g_y < 1:
            raise ValueError("group counts must be at least 1")

    def delta(self, cfg: UpaConfig) -> tuple[float, float]:
        """Cell widths along x and y."""
        return 2.0 / (cfg.m_x * self.g_x), 2.0 / (cfg.m_y * self.g_y)


class CellIndex(NamedTuple):
    a_x: int
    a_y: int
    b_x: int
    b_y: int


def cell_bounds(c: int, m_d: int, g_d: int) -> tuple[float, float]:
    """Half-open interval ``[lo, hi)`` covered by flat cell ``c``."""
    n = m_d * g_d
    return -1.0 + 2.0 * c / n, -1.0 + 2.0 * (c + 1) / n


def _flat_cell(angle: float, m_d: int, g_d: int) -> int:
    if not (-1.0 <= angle < 1.0):
        raise ValueError(f"space angle {angle!r} outside [-1, 1)")
    n = m_d * g_d
    c = min(int(math.floor((angle + 1.0) * n / 2.0)), n - 1)
    # keep the floor consistent with cell_bounds under rounding
    lo, hi = cell_bounds(c, m_d, g_d)
    if angle < lo:
        c -= 1
    elif angle >= hi and c < n - 1:
        c += 1
    return c


def cell_index(angle: float, m_d: int, g_d: int) -> tuple[int, int]:
    """``(a, b)`` of the cell holding ``angle`` on an axis with ``m_d`` antennas."""
    c = _flat_cell(angle, m_d, g_d)
    return c % g_d, c // g_d


@dataclass(frozen=True)
class GroupAssignment:
    """Users scheduled into (slot, group) resources.

    ``groups`` maps ``(slot, g, r)`` to the user ids served together. Every
    base-slot group key exists, possibly empty. The rate prefactor of a
    resource is ``bandwidth_factor / n_slots``.
    """

    g_x: int
    g_y: int
    n_slots: int
    groups: dict
    cell_of: dict
    slot_of: dict
    overflow: dict
    angles_of: dict
    bandwidth_factor: float
    scheme: str = "saug"
    _order: tuple = field(default=(), repr=False)

    @property
    def user_ids(self) -> tuple:
        return self._order

    @property
    def n_resources(self) -> int:
        return self.g_x * self.g_y * self.n_slots

    @property
    def prefactor(self) -> float:
        return self.bandwidth_factor / self.n_slots

    def group_of(self, uid) -> tuple[int, int, int]:
        cell = self.cell_of[uid]
        return self.slot_of[uid], cell.a_x, cell.a_y

    def nonempty_groups(self):
        for key in sorted(self.groups):
            members = self.groups[key]
            if members:
                yield key, members

    @property
    def k_max(self) -> int:
        return max((len(m) for m in self.groups.values()), default=0)

    def records(self) -> list[dict]:
        """One record per user: id, slot, group, cell and angles."""
        out = []
        for uid in self._order:
            cell = self.cell_of[uid]
            angles = self.angles_of[uid]
            out.append(
                {
                    "id": uid,
                    "slot": self.slot_of[uid],
                    "g": cell.a_x,
                    "r": cell.a_y,
                    "a_x": cell.a_x,
                    "a_y": cell.a_y,
                    "b_x": cell.b_x,
                    "b_y": cell.b_y,
                    "theta_x": repr(float(angles.theta_x)),
                    "theta_y": repr(float(angles.theta_y)),
                }
            )
        return out

    def write_report(self, path) -> None:
        rows = self.records()
        fields = ["id", "slot", "g", "r", "a_x", "a_y", "b_x", "b_y", "theta_x", "theta_y"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)


def _schedule(users, cell_fn, g_x, g_y, bandwidth_factor, scheme) -> GroupAssignment:
    cell_of, slot_of, angles_of = {}, {}, {}
    queue: dict = {}
    order = []
    for uid, angles in users:
        if uid in cell_of:
            raise ValueError(f"duplicate user id {uid!r}")
        cell = cell_fn(angles)
        occupants = queue.setdefault(cell, [])
        slot_of[uid] = len(occupants)
        occupants.append(uid)
        cell_of[uid] = cell
        angles_of[uid] = angles
        order.append(uid)

    n_slots = max((len(q) for q in queue.values()), default=1)
    groups = {(s, g, r): [] for s in range(n_slots) for g in range(g_x) for r in range(g_y)}
    for uid in order:
        cell = cell_of[uid]
        groups[(slot_of[uid], cell.a_x, cell.a_y)].append(uid)
    groups = {key: tuple(members) for key, members in groups.items()}
    overflow = {cell: tuple(q[1:]) for cell, q in queue.items() if len(q) > 1}
    return GroupAssignment(
        g_x=g_x,
        g_y=g_y,
        n_slots=n_slots,
        groups=groups,
        cell_of=cell_of,
        slot_of=slot_of,
        overflow=overflow,
        angles_of=angles_of,
        bandwidth_factor=bandwidth_factor,
        scheme=scheme,
        _order=tuple(order),
    )


def saug_assign(users: Iterable, cfg: UpaConfig, gcfg: GroupingConfig) -> GroupAssignment:
    """Group ``(id, SpaceAngles)`` pairs by space-angle cell, in input order.

    The first user to claim a cell is served in slot 0 of group
    ``(a_x, a_y)``; the n-th later claimant of the same cell goes to slot n of
    the same group.
    """

    def cell_fn(angles: SpaceAngles) -> CellIndex:
        a_x, b_x = cell_index(angles.theta_x, cfg.m_x, gcfg.g_x)
        a_y, b_y = cell_index(angles.theta_y, cfg.m_y, gcfg.g_y)
        return CellIndex(a_x, a_y, b_x, b_y)

    return _schedule(users, cell_fn, gcfg.g_x, gcfg.g_y, 1.0 / (gcfg.g_x * gcfg.g_y), "saug")


def fr4_schedule(users: Iterable, cfg: UpaConfig) -> GroupAssignment:
    """Four-color reuse on the DFT beam lattice.

    Each user joins the beam at its nearest DFT node ``(n_x, n_y)``; the beam
    color is ``(n_x mod 2, n_y mod 2)``. The four colors occupy disjoint quarter
    bands, which the 1/4 bandwidth factor accounts for. One user per beam per
    slot, extra users round-robin into later slots.
    """

    def cell_fn(angles: SpaceAngles) -> CellIndex:
        n_x = dft_grid_index(angles.theta_x, cfg.m_x)
        n_y = dft_grid_index(angles.theta_y, cfg.m_y)
        return CellIndex(n_x % 2, n_y % 2, n_x // 2, n_y // 2)

    return _schedule(users, cell_fn, 2, 2, 0.25, "fr4")


def group_epsilons(assignment: GroupAssignment, cfg: UpaConfig) -> dict:
    """Largest ``|v_k^H v_j|`` inside each non-empty group (0 for singletons)."""
    out = {}
    for key, members in assignment.nonempty_groups():
        if len(members) < 2:
            out[key] = 0.0
            continue
        tx = [assignment.angles_of[u].theta_x for u in members]
        ty = [assignment.angles_of[u].theta_y for u in members]
        v = upa_responses(cfg, tx, ty)
        gram = np.abs(v.conj() @ v.T)
        np.fill_diagonal(gram, 0.0)
        out[key] = float(gram.max())
    return out


def epsilon_of(assignment: GroupAssignment, cfg: UpaConfig) -> float:
    """Largest direction inner product over all same-slot, same-group pairs."""
    return max(group_epsilons(assignment, cfg).values(), default=0.0)


def axis_factor(m_d: int, g_d: int) -> float:
    """``|sin(pi(1-1/G)) / (M sin(pi(1-1/G)/M))|``, equal to 1 for ``G = 1``."""
    x = 1.0 - 1.0 / g_d
    if x == 0.0:
        return 1.0
    return abs(math.sin(math.pi * x) / (m_d * math.sin(math.pi * x / m_d)))


def analytic_epsilon_bound(cfg: UpaConfig, gcfg: GroupingConfig) -> float:
    """Product of the x and y factors bounding in-group direction inner products.

    The product presumes the two users sit on different DFT nodes along both
    axes; :func:`pairwise_epsilon_bound` also covers pairs sharing one node.
    """
    return axis_factor(cfg.m_x, gcfg.g_x) * axis_factor(cfg.m_y, gcfg.g_y)


def pairwise_epsilon_bound(cfg: UpaConfig, gcfg: GroupingConfig) -> float:
    """Bound on ``|v_k^H v_j|`` valid for every same-group pair.

    A pair sharing the DFT node on one axis has a factor of at most 1 there, so
    the larger single-axis factor dominates.
    """
    return max(axis_factor(cfg.m_x, gcfg.g_x), axis_factor(cfg.m_y, gcfg.g_y))
