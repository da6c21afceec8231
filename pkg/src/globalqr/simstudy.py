"""Simulation experiments I-VIII and a level/power study runner.

Every experiment draws an interesting covariate X, nuisance covariate(s)
Z (and Z1), and a response Y.  ``mode="null"`` removes the X -> Y link,
``mode="alternative"`` keeps it.

=====  ==========================================================
I      X ~ Bern(.5); Y' ~ N(0,1) | t4 by X; Y = (1 + aZ) Y' + bZ
II     X, Y' as I; Z1 ~ U(0,1.5); Y = N(1, .04) if Z < Z1 else Y'
III    X ~ max(Pois(3), 1); Y' ~ t_X; Y as I
IV     X, Y' as III; Y as II
V      Y ~ Gamma(shape=X, scale=Z), Z ~ U(.5, 2)
VI     X, Z share a U(0,1) component (mixing weight c);
       Y ~ Gamma(shape=4 + X, scale=1 + Z)
VII    X = round((1-c)A + cC); Z = 1.5((1-c)B + cC); Y as I
VIII   X, Z as VII; Y as II with noise variance sigma_eps^2
=====  ==========================================================
"""

from __future__ import annotations

import csv
import io
import math
import warnings
import zlib
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Dataset, QuantileGrid
from .envelope import Measure
from .errors import DataError, GlobalQRError, InvalidParameters, NumericalError
from .inference import TestConfig, global_test
from .permutation import Strategy

# subcase -> (F_Z, a, b); "unif" is U(0, 1.5), "bern" is Bernoulli(0.5)
NUISANCE_CASES = {
    "a": ("unif", 0.0, 1.0),
    "b": ("unif", 1.0, 1.0),
    "c": ("bern", 0.0, 0.1),
    "d": ("bern", 0.1, 0.1),
}
NOISE_CASES = {"a": "unif01", "b": "bern"}
SUBCASES = {
    "I": ("a", "b", "c", "d"),
    "II": ("a", "b"),
    "III": ("a", "b", "c", "d"),
    "IV": ("a", "b"),
    "V": ("cat", "cont"),
    "VI": ("",),
    "VII": ("a", "b"),
    "VIII": ("",),
}
COMPARATORS = ("PH", "NC")


@dataclass(frozen=True)
class ExperimentId:
    family: str
    subcase: str = ""
    a: float | None = None
    b: float | None = None
    c: float = 0.0
    sigma_eps: float = 0.2

    def __post_init__(self):
        fam = self.family.upper()
        object.__setattr__(self, "family", fam)
        if fam not in SUBCASES:
            raise InvalidParameters(f"unknown experiment family '{self.family}'")
        sub = self.subcase.lower()
        if sub not in SUBCASES[fam]:
            raise InvalidParameters(f"experiment {fam} has no subcase '{self.subcase}'")
        object.__setattr__(self, "subcase", sub)
        if not 0.0 <= self.c <= 1.0:
            raise InvalidParameters(f"c must lie in [0, 1], got {self.c}")
        if self.sigma_eps < 0:
            raise InvalidParameters("sigma_eps must be non-negative")
        if self.a is None or self.b is None:
            a, b = self.default_ab()
            object.__setattr__(self, "a", a if self.a is None else self.a)
            object.__setattr__(self, "b", b if self.b is None else self.b)

    def default_ab(self) -> tuple[float, float]:
        if self.family in ("I", "III"):
            return NUISANCE_CASES[self.subcase][1:]
        if self.family == "VII":
            return NUISANCE_CASES[self.subcase][1:]
        return 0.0, 0.0

    @property
    def name(self) -> str:
        if self.family == "V":
            return f"V-{self.subcase}"
        return self.family + self.subcase

    @classmethod
    def parse(cls, text: str, **params) -> "ExperimentId":
        """``"Ib"``, ``"IIa"``, ``"V-cat"``, ``"VI"`` ..."""
        t = text.strip()
        if "-" in t:
            fam, sub = t.split("-", 1)
        else:
            i = len(t)
            while i > 0 and t[i - 1].islower():
                i -= 1
            fam, sub = t[:i], t[i:]
        return cls(fam, sub, **params)


def _t_or_normal(rng, x_alt: np.ndarray, null: bool, df=4.0) -> np.ndarray:
    """Y' ~ N(0,1) where x_alt is False (or everywhere under the null), t_df elsewhere."""
    y = rng.standard_normal(len(x_alt))
    if not null:
        t = rng.standard_t(df, size=len(x_alt))
        y = np.where(x_alt, t, y)
    return y


def generate(experiment: ExperimentId, N: int, mode: str, rng: np.random.Generator) -> Dataset:
    """Draw one dataset of size N; mode is "null" or "alternative"."""
    if N < 2:
        raise InvalidParameters("N must be at least 2")
    if mode not in ("null", "alternative", "power"):
        raise InvalidParameters(f"mode must be null or alternative, got '{mode}'")
    null = mode == "null"
    e = experiment
    fam, c = e.family, e.c

    if fam in ("I", "II", "III", "IV"):
        if fam in ("I", "II"):
            x = rng.binomial(1, 0.5, N).astype(float)
            yp = _t_or_normal(rng, x == 1, null)
        else:
            x = np.maximum(rng.poisson(3.0, N), 1).astype(float)
            # under the null every row is t4, whatever X is
            df = np.full(N, 4.0) if null else x
            yp = rng.standard_t(df)
        if fam in ("I", "III"):
            fz = NUISANCE_CASES[e.subcase][0]
            z = rng.uniform(0, 1.5, N) if fz == "unif" else rng.binomial(1, 0.5, N).astype(float)
            y = (1 + e.a * z) * yp + e.b * z
            return Dataset.from_arrays(y, {"X": x}, {"Z": z},
                                       categorical=["X"] + (["Z"] if fz == "bern" else []))
        fz = NOISE_CASES[e.subcase]
        z = rng.uniform(0, 1, N) if fz == "unif01" else rng.binomial(1, 0.5, N).astype(float)
        z1 = rng.uniform(0, 1.5, N)
        eps = rng.normal(1.0, 0.2, N)
        y = np.where(z < z1, eps, yp)
        return Dataset.from_arrays(y, {"X": x}, {"Z": z, "Z1": z1},
                                   categorical=["X"] + (["Z"] if fz == "bern" else []))

    if fam == "V":
        if e.subcase == "cont":
            x = rng.uniform(4, 5, N)
        else:
            x = np.where(rng.binomial(1, 0.5, N) == 1, 5.0, 4.7)
        z = rng.uniform(0.5, 2, N)
        y = rng.gamma(4.5 if null else x, z)
        return Dataset.from_arrays(y, {"X": x}, {"Z": z},
                                   categorical=["X"] if e.subcase == "cat" else [])

    A, B, C = rng.uniform(size=(3, N))
    if fam == "VI":
        x = (1 - c) * A + c * C
        z = (1 - c) * B + c * C
        y = rng.gamma(4.5 if null else 4 + x, 1 + z)
        return Dataset.from_arrays(y, {"X": x}, {"Z": z})

    x = np.round((1 - c) * A + c * C)
    z = 1.5 * ((1 - c) * B + c * C)
    yp = _t_or_normal(rng, x == 1, null)
    if fam == "VII":
        y = (1 + e.a * z) * yp + e.b * z
        return Dataset.from_arrays(y, {"X": x}, {"Z": z}, categorical=["X"])
    z1 = rng.uniform(0, 1.5, N)
    eps = rng.normal(1.0, e.sigma_eps, N)
    y = np.where(z < z1, eps, yp)
    return Dataset.from_arrays(y, {"X": x}, {"Z": z, "Z1": z1}, categorical=["X"])


def correlation_formula(c: float) -> float:
    """cor(X, Z) for experiment VI."""
    return c * c / (1 + 2 * c * c - 2 * c)


# ---------------------------------------------------------------- study


@dataclass(frozen=True)
class StudyRow:
    experiment: str
    subcase: str
    strategy: str
    N: int
    mode: str
    replicates: int
    s: int
    alpha: float
    rejections: int
    rate: float
    mc_se: float


@dataclass
class StudyResult:
    rows: list[StudyRow]

    FIELDS = ("experiment", "subcase", "strategy", "N", "mode", "replicates",
              "s", "alpha", "rejections", "rate", "mc_se")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            d = asdict(r)
            d["rate"] = repr(float(r.rate))
            d["mc_se"] = repr(float(r.mc_se))
            w.writerow(d)
        return buf.getvalue()

    def rate(self, strategy: str, **match) -> float:
        for r in self.rows:
            if r.strategy == strategy and all(getattr(r, k) == v for k, v in match.items()):
                return r.rate
        raise KeyError((strategy, match))


def _key(*parts) -> int:
    return zlib.crc32("|".join(map(str, parts)).encode())


def _applicable(strategy: str, ds: Dataset) -> bool:
    if strategy == "WN":
        return all(ds.columns[c].categorical for c in ds.nuisance)
    return True


def run_study(
    experiments: Sequence[ExperimentId],
    strategies: Sequence[str],
    Ns: Sequence[int],
    replicates: int,
    s: int,
    grid: QuantileGrid,
    alpha: float = 0.05,
    seed: int = 0,
    modes: Iterable[str] = ("null",),
    measure=Measure.ERL,
    comparator_base: str = "RQ",
    workers: int = 1,
    progress=None,
) -> StudyResult:
    """Rejection rates per (experiment, strategy, N, mode).

    Strategies are permutation strategies (``FL``, ``FLPLUS``, ``WN``,
    ``RL``, ``RLS``, ``RQ``; a trailing ``*`` restricts the grid to 10 taus
    in [0.1, 0.9]) and the pointwise comparators ``PH``/``NC``, computed
    from the curves of ``comparator_base``.  All strategies of a cell are
    applied to the same simulated datasets.
    """
    rows: list[StudyRow] = []
    if replicates <= 0:
        return StudyResult(rows)
    star_grid = QuantileGrid.linspace(10, 0.1, 0.9)
    strategies = [st.upper().replace("+", "PLUS") if st.upper() not in COMPARATORS
                  else st.upper() for st in strategies]
    for exp in experiments:
        for N in Ns:
            for mode in modes:
                gen_mode = "null" if mode == "null" else "alternative"
                out_mode = "null" if mode == "null" else "power"
                counts = {st: 0 for st in strategies}
                skipped: set[str] = set()
                cell = _key(exp.name, exp.a, exp.b, exp.c, exp.sigma_eps, N, out_mode)
                for rep in range(replicates):
                    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, cell, rep])
                    data_ss, test_ss = ss.spawn(2)
                    ds = generate(exp, N, gen_mode, np.random.default_rng(data_ss))
                    test_seed = int(test_ss.generate_state(2, np.uint64)[0])
                    cache = {}

                    def run(st):
                        if st not in cache:
                            base = st.rstrip("*")
                            g = star_grid if st.endswith("*") else grid
                            cfg = TestConfig(g, Strategy.parse(base), s=s, alpha=alpha,
                                             measure=measure, seed=test_seed, workers=workers)
                            try:
                                cache[st] = global_test(ds, cfg)
                            except GlobalQRError as exc:
                                where = f"[{exp.name} N={N} {out_mode} rep={rep} {st}] {exc}"
                                base_cls = NumericalError if isinstance(exc, NumericalError) else DataError
                                raise base_cls(where) from exc
                        return cache[st]

                    for st in strategies:
                        if st in COMPARATORS:
                            if not _applicable(comparator_base, ds):
                                skipped.add(st)
                                continue
                            out = run(comparator_base)
                            counts[st] += out.comparator_p[st] <= alpha + 1e-9
                        else:
                            if not _applicable(st.rstrip("*"), ds):
                                skipped.add(st)
                                continue
                            counts[st] += run(st).envelope.rejected
                    if progress:
                        progress(exp, N, out_mode, rep)
                for st in strategies:
                    if st in skipped:
                        warnings.warn(f"{st} not applicable to {exp.name}; skipped")
                        continue
                    rate = counts[st] / replicates
                    rows.append(StudyRow(
                        experiment=exp.family, subcase=exp.subcase, strategy=st, N=int(N),
                        mode=out_mode, replicates=replicates, s=s, alpha=alpha,
                        rejections=int(counts[st]), rate=rate,
                        mc_se=math.sqrt(rate * (1 - rate) / replicates),
                    ))
    return StudyResult(rows)
