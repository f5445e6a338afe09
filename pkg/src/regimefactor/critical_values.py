"""Critical values for the sup-F, UDmax, WDmax and sequential break tests.

The embedded table is produced by ``scripts/simulate_critical_values.py``: the
null limit of each statistic is simulated on a 1000-point grid and the
supremum over admissible partitions is found by dynamic programming. Values
are indexed by the number of moment conditions ``nu``, the trimming fraction (0.015 to 0.25),
the significance level and the break count.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from .exceptions import ValidationError

FAMILIES = ("supF", "UDmax", "WDmax", "seq")


class CriticalValueTable:
    def __init__(self, doc: dict):
        self.meta = doc["meta"]
        self._table = doc["table"]
        self.trimmings = tuple(float(t) for t in self.meta["trimmings"])
        self.alphas = tuple(float(a) for a in self.meta["alphas"])

    @classmethod
    def load(cls, path=None) -> CriticalValueTable:
        if path is None:
            text = resources.files("regimefactor").joinpath("data/critical_values.json").read_text()
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        return cls(json.loads(text))

    def trimming_for(self, epsilon: float) -> float:
        """Largest tabulated trimming not exceeding ``epsilon``.

        Rounding the trimming down never shrinks the critical value, so the
        tests stay conservative when ``epsilon`` falls between grid points.
        """
        fits = [t for t in self.trimmings if t <= epsilon + 1e-9]
        if not fits:
            raise ValidationError(
                f"no critical values for trimming {epsilon}; smallest tabulated is {min(self.trimmings)}"
            )
        return max(fits)

    def get(self, family: str, nu: int, epsilon: float, alpha: float, l: int) -> float:
        """Critical value for ``family`` at break count ``l``.

        ``l`` is the number of breaks under the alternative for ``supF``, the
        maximal break count ``L`` for ``UDmax``/``WDmax``, and the number of
        breaks under the null for ``seq``.
        """
        if family not in FAMILIES:
            raise ValidationError(f"unknown test family {family!r}")
        trim = self.trimming_for(epsilon)
        key = f"{nu}|{trim}"
        if key not in self._table:
            raise ValidationError(f"no critical values for nu={nu}, trimming={trim}")
        by_alpha = self._table[key][family]
        akey = next((k for k in by_alpha if abs(float(k) - alpha) < 1e-12), None)
        if akey is None:
            raise ValidationError(f"no critical values at alpha={alpha}; tabulated: {sorted(map(float, by_alpha))}")
        values = by_alpha[akey]
        idx = l if family == "seq" else l - 1
        if not 0 <= idx < len(values) or values[idx] is None:
            raise ValidationError(
                f"no {family} critical value for nu={nu}, trimming={trim}, alpha={alpha}, l={l}"
            )
        return float(values[idx])


@lru_cache(maxsize=1)
def default_table() -> CriticalValueTable:
    return CriticalValueTable.load()


def critical_value(family: str, nu: int, epsilon: float, alpha: float, l: int) -> float:
    return default_table().get(family, nu, epsilon, alpha, l)
