"""Parameter hierarchy as concrete desk-scale numbers.

The algorithm's analysis fixes parameters only up to "sufficiently small
compared to" chains, which have no finite solution at desk scale (e.g. the
geometric eps_i ladder necessarily dips below p_min for any usable eps).
We therefore pin concrete defaults that keep every *exact* invariant
checkable on hosts of 10^2..10^5 vertices, validate the sub-chain of
orderings those defaults can satisfy, and expose everything for override.
Layering: defaults < config file < explicit overrides.
"""

import json
import math
from dataclasses import dataclass, field, asdict, replace

from .errors import ConfigError


@dataclass(frozen=True)
class ParamConfig:
    n: int                      # host vertex count
    p: float = 1.0              # host density
    xi: float = 0.005           # typicality tolerance
    xi_prime: float = 0.02
    c: float = 0.25
    c_prime: float = 0.025
    D: int = 16
    delta: float = 0.01
    p_min: float = 0.002
    p_max: float = 0.04
    eps: float = 0.05
    p0: float = 0.1
    eta_minus: float = 0.02
    eta_plus: float = 0.04
    p_minus: float = 0.08
    p_plus: float = 0.16
    K: int = 4
    s: int = 4
    # artifact knobs (not part of the paper hierarchy)
    typicality_samples: int = 2000   # Monte-Carlo sets when exhaustive is infeasible
    typicality_exhaustive_n: int = 2000
    mix_factor: float = 50.0         # chain budget = mix_factor * n * log n
    nibble_bite: float = 0.1
    nibble_rounds: int = 0           # 0 -> ceil(30/bite)
    oracle_edge_cap: int = 60
    move_budget_factor: float = 100.0
    pipeline_mix: float = 5.0        # chain steps per pipeline MATCH call
    p_ex_prime_factor: float = 2.0   # p'_ex = factor * p_ex in Case S

    @property
    def big_delta(self) -> float:
        return self.n ** self.c

    @property
    def big_lambda(self) -> float:
        return self.n ** (1.0 - self.c)

    @property
    def d(self) -> int:
        return math.ceil(self.n ** 0.6)

    @property
    def i_plus(self) -> int:
        return math.ceil(7.0 * math.log(1.0 / self.eps))

    @property
    def eps_ladder(self):
        ip = self.i_plus
        return [self.eps * 2.0 ** (i - ip) for i in range(1, ip + 1)]

    def eta(self, case: str) -> float:
        if case == "S":
            return self.eta_minus
        if case == "P":
            return self.eta_plus
        raise ConfigError(f"eta undefined for case {case!r}")

    def p1(self) -> float:
        return self.p - self.p0

    def validate(self):
        checks = [
            (self.n >= 3, "n >= 3"),
            (0.0 < self.p <= 1.0, "0 < p <= 1"),
            (0.0 < self.xi < 1.0, "0 < xi < 1"),
            (0.0 < self.c_prime < self.c < 1.0, "0 < c' < c < 1"),
            (self.D >= 2, "D >= 2"),
            (0.0 < self.delta < 1.0, "0 < delta < 1"),
            (0.0 < self.p_min < self.p_max, "p_min < p_max"),
            (self.p_max < self.eps, "p_max < eps"),
            (self.eps < self.p0, "eps < p0"),
            (self.p0 < self.p, "p0 < p"),
            (0.0 < self.eta_minus < self.p_minus, "eta_- < p_-"),
            (self.p_minus < 1.0, "p_- < 1"),
            (0.0 < self.eta_plus < self.p_plus, "eta_+ < p_+"),
            (self.p_plus < self.p, "p_+ < p"),
            (self.K >= 1, "K >= 1"),
            (self.s >= 1, "s >= 1"),
        ]
        bad = [msg for ok, msg in checks if not ok]
        if bad:
            raise ConfigError("parameter hierarchy violated: " + "; ".join(bad))
        return self

    def delta_floor(self, j: int) -> float:
        # size floors for the class sweep, j in 1..4
        return self.delta ** (0.1 * j + 0.6)

    def with_overrides(self, **kw) -> "ParamConfig":
        return replace(self, **kw).validate()

    def to_dict(self):
        return asdict(self)

    @classmethod
    def load(cls, n: int, path=None, overrides=None) -> "ParamConfig":
        layer = {}
        if path is not None:
            with open(path) as fh:
                layer.update(json.load(fh))
        if overrides:
            layer.update(overrides)
        layer.pop("n", None)
        try:
            cfg = cls(n=n, **layer)
        except TypeError as exc:
            raise ConfigError(f"unknown config key: {exc}") from exc
        return cfg.validate()


def config_for_tree(n_tree_edges: int, p: float = 1.0, **kw) -> ParamConfig:
    """Config for the canonical host of a tree with the given edge count.

    With density p the host has n vertices where the tree has p(n-1)/2
    edges; for p = 1 this is the complete-graph setting n = 2|T| + 1.
    """
    n = round(2 * n_tree_edges / p) + 1
    return ParamConfig(n=n, p=p, **kw).validate()
