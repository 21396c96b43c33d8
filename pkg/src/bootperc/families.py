"""Update families: finite collections of finite rules in Z^d \\ {0}.

A site x becomes infected once some rule X translates to x with every site
of x + X already infected.  Families are immutable after construction and
safe to share across threads and processes.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ValidationError

Site = tuple[int, ...]
Rule = tuple[Site, ...]


@dataclass(frozen=True)
class UpdateFamily:
    """A finite list of update rules, each a finite set of non-zero lattice vectors.

    Rule order and in-rule site order are preserved from the input; identity
    (hashing) is order-insensitive.
    """

    d: int
    rules: Rule | tuple[Rule, ...]
    _arrays: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError("dimension must be a positive integer")
        rules = tuple(tuple(tuple(int(c) for c in site) for site in rule) for rule in self.rules)
        object.__setattr__(self, "rules", rules)
        seen_rules = set()
        for ri, rule in enumerate(rules):
            if len(rule) == 0:
                raise ValidationError(f"rules[{ri}]: empty rule not allowed")
            seen_sites = set()
            for si, site in enumerate(rule):
                if len(site) != self.d:
                    raise ValidationError(f"rules[{ri}][{si}]: expected a vector of length {self.d}")
                if all(c == 0 for c in site):
                    raise ValidationError(f"rules[{ri}][{si}]: origin not allowed")
                if site in seen_sites:
                    raise ValidationError(f"rules[{ri}][{si}]: duplicate site {site}")
                seen_sites.add(site)
            key = frozenset(rule)
            if key in seen_rules:
                raise ValidationError(f"rules[{ri}]: duplicate rule")
            seen_rules.add(key)
        object.__setattr__(self, "_arrays", [np.array(rule, dtype=np.int64) for rule in rules])

    @property
    def radius(self) -> float:
        """Max Euclidean norm over all rule sites (0.0 for the empty family)."""
        return max((math.sqrt(sum(c * c for c in s)) for X in self.rules for s in X), default=0.0)

    @property
    def reach(self) -> int:
        """Max Chebyshev norm over all rule sites; the re-examination radius."""
        return max((abs(c) for X in self.rules for s in X for c in s), default=0)

    def rule_arrays(self) -> list[np.ndarray]:
        return self._arrays

    def canonical(self) -> dict:
        """Order-insensitive canonical form used for hashing."""
        return {"d": self.d, "rules": sorted(sorted(map(list, X)) for X in self.rules)}

    @property
    def family_hash(self) -> str:
        blob = json.dumps(self.canonical(), separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def neighbourhood_family(d: int, r: int) -> UpdateFamily:
    """The r-neighbour family: all r-subsets of the 2d unit vectors."""
    if d < 1:
        raise ParameterError("d must be positive")
    if not 1 <= r <= 2 * d:
        raise ParameterError(f"r must satisfy 1 <= r <= 2d = {2 * d}, got {r}")
    units = []
    for axis in range(d):
        for sign in (1, -1):
            e = [0] * d
            e[axis] = sign
            units.append(tuple(e))
    rules = tuple(tuple(sorted(comb)) for comb in itertools.combinations(units, r))
    return UpdateFamily(d, rules)


def parse_family(text: str | bytes | dict) -> UpdateFamily:
    """Parse the JSON family document {"d": int, "rules": [[[int,...],...],...]}."""
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    else:
        doc = text
    if not isinstance(doc, dict):
        raise ValidationError("top level: expected an object")
    if "d" not in doc or "rules" not in doc:
        raise ValidationError("top level: required keys 'd' and 'rules'")
    d = doc["d"]
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise ValidationError("d: expected a positive integer")
    rules = doc["rules"]
    if not isinstance(rules, list):
        raise ValidationError("rules: expected a list")
    for ri, rule in enumerate(rules):
        if not isinstance(rule, list):
            raise ValidationError(f"rules[{ri}]: expected a list of vectors")
        for si, site in enumerate(rule):
            if not isinstance(site, list) or not all(isinstance(c, int) and not isinstance(c, bool) for c in site):
                raise ValidationError(f"rules[{ri}][{si}]: expected a vector of integers")
    return UpdateFamily(d, tuple(tuple(tuple(site) for site in rule) for rule in rules))


def family_to_json(family: UpdateFamily) -> str:
    doc = {"d": family.d, "rules": [[list(site) for site in rule] for rule in family.rules]}
    return json.dumps(doc, sort_keys=True)


def load_family(path) -> UpdateFamily:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_family(fh.read())
