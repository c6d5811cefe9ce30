"""Experiment cells: which originals/fakes a model trains on and which it is tested on."""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from typing import Iterable, Sequence

from cdpauth.errors import ConfigError


@dataclass(frozen=True)
class SetupSpec:
    """Training condition ``(D_train, A_train)`` plus its test cells ``(d_test, a_test)``.

    A test cell pits originals ``x^{d_test}`` against fakes ``f^{a_test/d_test}``.
    """

    name: str
    d_train: tuple[str, ...]
    a_train: tuple[str, ...]
    test_cells: tuple[tuple[str, str], ...]
    block: str = ""

    def __post_init__(self):
        object.__setattr__(self, "d_train", tuple(self.d_train))
        object.__setattr__(self, "a_train", tuple(self.a_train))
        object.__setattr__(self, "test_cells", tuple(tuple(c) for c in self.test_cells))
        if not self.d_train:
            raise ConfigError(f"setup {self.name!r}: D_train is empty")
        if not self.a_train:
            raise ConfigError(f"setup {self.name!r}: A_train is empty (the defender must "
                              "observe at least one kind of fake)")
        if not self.test_cells:
            raise ConfigError(f"setup {self.name!r}: no test cells")

    def printers(self) -> set[str]:
        used = set(self.d_train) | set(self.a_train)
        for d, a in self.test_cells:
            used |= {d, a}
        return used

    def validate(self, defenders: Iterable[str], attackers: Iterable[str]) -> None:
        defenders, attackers = set(defenders), set(attackers)
        missing = (set(self.d_train) - defenders) | {d for d, _ in self.test_cells} - defenders
        missing_a = (set(self.a_train) | {a for _, a in self.test_cells}) - attackers
        if missing or missing_a:
            raise ConfigError(f"setup {self.name!r} references unavailable printers: "
                              f"defenders {sorted(missing)}, attackers {sorted(missing_a)}")


def standard_setups(p1: str, p2: str) -> list[SetupSpec]:
    """The three setups for two printers, in result-table row order.

    Names use letter labels, ``A`` for ``p1`` and ``B`` for ``p2``. Setup 1
    names are ``setup1_<a><d>`` for training fakes ``f^{a/d}``.
    """
    label = {p1: "A", p2: "B"}
    setups = []
    for d in (p1, p2):
        for a in (p1, p2):
            setups.append(SetupSpec(f"setup1_{label[a]}{label[d]}", (d,), (a,),
                                    ((d, p1), (d, p2)), block="setup1"))
    for d in (p1, p2):
        setups.append(SetupSpec(f"setup2_{label[d]}", (d,), (p1, p2),
                                ((d, p1), (d, p2)), block="setup2"))
    setups.append(SetupSpec("setup3", (p1, p2), (p1, p2),
                            ((p1, p1), (p1, p2), (p2, p1), (p2, p2)), block="setup3"))
    return setups


def select_setups(all_setups: Sequence[SetupSpec], names: str | None) -> list[SetupSpec]:
    """Pick setups by comma-separated names or block names (``setup1``); ``None``/``all`` keeps all."""
    if names is None or names == "all":
        return list(all_setups)
    chosen = []
    for name in (n.strip() for n in names.split(",")):
        hits = [s for s in all_setups if s.name == name or s.block == name]
        if not hits:
            raise ConfigError(f"unknown setup {name!r}; known: {[s.name for s in all_setups]}")
        chosen += [s for s in hits if s not in chosen]
    return chosen


def setups_from_parser(parser: configparser.ConfigParser) -> list[SetupSpec]:
    """Custom setups from ``[setup:<name>]`` sections.

    Keys: ``d_train`` and ``a_train`` (comma-separated printer ids) and
    ``test_cells`` (comma-separated ``d/a`` pairs).
    """
    setups = []
    for section in parser.sections():
        if not section.startswith("setup:"):
            continue
        sec = parser[section]
        try:
            cells = [tuple(c.strip().split("/")) for c in sec["test_cells"].split(",")]
            if any(len(c) != 2 for c in cells):
                raise ConfigError(f"[{section}] test_cells must be d/a pairs")
            setups.append(SetupSpec(
                section.split(":", 1)[1].strip(),
                tuple(x.strip() for x in sec["d_train"].split(",")),
                tuple(x.strip() for x in sec["a_train"].split(",")),
                tuple(cells), block="custom"))
        except KeyError as exc:
            raise ConfigError(f"[{section}] missing key {exc}") from None
    return setups
