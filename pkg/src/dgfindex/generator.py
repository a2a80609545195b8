"""Synthetic data sets and selectivity-targeted workloads.

Two data sets are provided:

``meter``
    smart-meter readings ``userId,regionId,time,powerConsumed``.  Each user
    lives in one region and reports once per day; with the default
    ``clustered-by-time`` layout all readings of a day are stored together.
``lineitem``
    the TPC-H lineitem columns touched by Q6, uniformly scattered over the file.

Output is deterministic for a given :class:`GeneratorSpec` (same seed, same bytes).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import PolicyError
from .query import RangePredicate, point_range
from .schema import Schema, date_to_days, days_to_date, schema_path_for

METER_SCHEMA = Schema([("userId", "int"), ("regionId", "int"), ("time", "date"), ("powerConsumed", "float")])
USER_SCHEMA = Schema([("userId", "int"), ("userName", "text")])
LINEITEM_SCHEMA = Schema([
    ("l_orderkey", "int"),
    ("l_quantity", "int"),
    ("l_extendedprice", "float"),
    ("l_discount", "float"),
    ("l_tax", "float"),
    ("l_shipdate", "date"),
])

SELECTIVITIES = {"point": None, "5%": 0.05, "12%": 0.12}


@dataclass
class GeneratorSpec:
    dataset: str = "meter"
    records: int = 100_000
    seed: int = 7
    layout: str = "clustered-by-time"  # or "uniform"
    id_distribution: str = "uniform"  # or "zipfian"
    days: int = 30
    regions: int = 11
    start: str = "2012-12-01"

    def __post_init__(self):
        if self.dataset not in ("meter", "lineitem"):
            raise PolicyError(f"unknown dataset {self.dataset!r}")
        if self.layout not in ("clustered-by-time", "uniform"):
            raise PolicyError(f"unknown layout {self.layout!r}")
        if self.id_distribution not in ("uniform", "zipfian"):
            raise PolicyError(f"unknown id distribution {self.id_distribution!r}")
        if self.records < 0 or self.days < 1 or self.regions < 1:
            raise PolicyError("records must be >= 0; days and regions >= 1")

    @property
    def users(self) -> int:
        return max(1, math.ceil(self.records / self.days))


def _dates(start_days: int, n: int) -> list[str]:
    return [days_to_date(start_days + i) for i in range(n)]


def meter_columns(spec: GeneratorSpec) -> dict:
    rng = np.random.default_rng(spec.seed)
    n, days, users = spec.records, spec.days, spec.users
    region_of = rng.integers(1, spec.regions + 1, size=users + 1)
    if spec.id_distribution == "uniform":
        day = np.repeat(np.arange(days), users)[:n]
        user = np.concatenate([rng.permutation(users) + 1 for _ in range(days)])[:n]
    else:
        user = np.minimum(rng.zipf(1.3, size=n), users)
        day = np.sort(rng.integers(0, days, size=n))
    if spec.layout == "uniform":
        perm = rng.permutation(n)
        user, day = user[perm], day[perm]
    power = np.round(rng.uniform(0.0, 50.0, size=n), 2)
    return {"userId": user, "regionId": region_of[user], "day": day, "powerConsumed": power}


def write_meter(spec: GeneratorSpec, path) -> Path:
    path = Path(path)
    cols = meter_columns(spec)
    dates = _dates(date_to_days(spec.start), spec.days)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        chunk = 100_000
        for i in range(0, spec.records, chunk):
            sl = slice(i, i + chunk)
            f.write("".join(
                f"{u},{r},{dates[d]},{p:.2f}\n"
                for u, r, d, p in zip(cols["userId"][sl].tolist(), cols["regionId"][sl].tolist(),
                                      cols["day"][sl].tolist(), cols["powerConsumed"][sl].tolist())))
    METER_SCHEMA.save(schema_path_for(path))
    return path


def write_users(spec: GeneratorSpec, path, coverage: float = 0.9) -> Path:
    """Dimension table ``userId,userName`` covering a seeded fraction of the users."""
    path = Path(path)
    rng = np.random.default_rng(spec.seed + 1)
    ids = np.arange(1, spec.users + 1)
    keep = ids[rng.random(spec.users) < coverage]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(f"{u},user{u:07d}\n" for u in keep.tolist()))
    USER_SCHEMA.save(schema_path_for(path))
    return path


def write_lineitem(spec: GeneratorSpec, path) -> Path:
    path = Path(path)
    rng = np.random.default_rng(spec.seed)
    n = spec.records
    lo, hi = date_to_days("1992-01-02"), date_to_days("1998-12-01")
    qty = rng.integers(1, 51, size=n)
    price = np.round(qty * rng.uniform(900.0, 2100.0, size=n), 2)
    disc = rng.integers(0, 11, size=n)
    tax = rng.integers(0, 9, size=n)
    ship = rng.integers(lo, hi + 1, size=n)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        chunk = 100_000
        for i in range(0, n, chunk):
            sl = slice(i, i + chunk)
            f.write("".join(
                f"{i + j + 1},{q},{p:.2f},0.{d:02d},0.{t:02d},{days_to_date(s)}\n"
                for j, (q, p, d, t, s) in enumerate(zip(qty[sl].tolist(), price[sl].tolist(), disc[sl].tolist(),
                                                       tax[sl].tolist(), ship[sl].tolist()))))
    LINEITEM_SCHEMA.save(schema_path_for(path))
    return path


def generate(spec: GeneratorSpec, path) -> Path:
    if spec.dataset == "meter":
        return write_meter(spec, path)
    return write_lineitem(spec, path)


def q6_predicate(year: int = 1994, discount: float = 0.06, quantity: int = 24) -> RangePredicate:
    """TPC-H Q6 selection as half-open ranges."""
    return RangePredicate({
        "l_shipdate": (date_to_days(f"{year}-01-01"), date_to_days(f"{year + 1}-01-01")),
        "l_discount": (round(discount - 0.01, 2), round(discount + 0.02, 2)),
        "l_quantity": (-math.inf, quantity),
    })


class PredicateSynthesizer:
    """Draws range predicates whose measured selectivity is within ``tol`` of a target.

    The last dimension in ``dims`` is the search dimension: the other ranges
    are drawn at random, then its width is widened by bisection until the
    oracle count lands inside the tolerance band.
    """

    def __init__(self, columns: dict, schema: Schema, dims: Sequence[str], seed: int = 0, tol: float = 0.005):
        self.columns = {d: np.asarray(columns[d]) for d in dims}
        self.schema = schema
        self.dims = list(dims)
        self.n = len(next(iter(self.columns.values()))) if self.columns else 0
        self.rng = np.random.default_rng(seed)
        self.tol = tol
        self.distinct = {d: np.unique(self.columns[d]) for d in dims}

    def _hi(self, d: str, b: int):
        vals = self.distinct[d]
        if b + 1 < len(vals):
            return vals[b + 1].item()
        return point_range(self.schema.field(d).kind, vals[b].item())[1]

    def point(self, dims: Sequence[str] | None = None) -> RangePredicate:
        dims = self.dims if dims is None else dims
        i = int(self.rng.integers(self.n))
        return RangePredicate({d: point_range(self.schema.field(d).kind, self.columns[d][i].item()) for d in dims})

    def _random_range(self, d: str, frac: float):
        vals = self.distinct[d]
        width = max(1, min(len(vals), round(frac * len(vals))))
        a = int(self.rng.integers(0, len(vals) - width + 1))
        return a, a + width - 1

    def ranged(self, target: float, dims: Sequence[str] | None = None, attempts: int = 200) -> RangePredicate:
        dims = self.dims if dims is None else list(dims)
        lo_t, hi_t = (target - self.tol) * self.n, (target + self.tol) * self.n
        if len(dims) == 1:
            search, fixed = dims[0], []
        else:
            search, fixed = dims[-1], dims[:-1]
        for _ in range(attempts):
            ranges = {}
            mask = np.ones(self.n, dtype=bool)
            share = float(self.rng.uniform(1.5, 5.0)) * target
            per = min(1.0, share ** (1.0 / max(1, len(fixed)))) if fixed else 1.0
            for d in fixed:
                a, b = self._random_range(d, float(self.rng.uniform(per * 0.7, min(1.0, per * 1.3))))
                lo, hi = self.distinct[d][a].item(), self._hi(d, b)
                ranges[d] = (lo, hi)
                col = self.columns[d]
                mask &= (col >= lo) & (col < hi)
            vals = self.distinct[search]
            sub = np.sort(self.columns[search][mask])
            if len(sub) < lo_t:
                continue
            a = int(self.rng.integers(0, len(vals)))
            start = vals[a].item()
            base = np.searchsorted(sub, start, side="left")

            def count(b):
                return int(np.searchsorted(sub, self._hi(search, b), side="left") - base)

            left, right = a, len(vals) - 1
            if count(right) < lo_t:
                continue
            while left < right:
                mid = (left + right) // 2
                if count(mid) >= lo_t:
                    right = mid
                else:
                    left = mid + 1
            if count(left) <= hi_t:
                ranges[search] = (start, self._hi(search, left))
                return RangePredicate({d: ranges[d] for d in dims})
        raise PolicyError(f"could not reach selectivity {target:.1%} +/- {self.tol:.1%} in {attempts} attempts")

    def partial(self, target: float | None, dims: Sequence[str], attempts: int = 500) -> RangePredicate:
        """Predicate over a subset of dimensions, drawn by rejection sampling on the measured count."""
        if target is None:
            return self.point(dims)
        lo_t, hi_t = (target - self.tol) * self.n, (target + self.tol) * self.n
        for _ in range(attempts):
            share = target ** (1.0 / len(dims))
            ranges = {}
            mask = np.ones(self.n, dtype=bool)
            for d in dims:
                a, b = self._random_range(d, float(self.rng.uniform(share * 0.3, min(1.0, share * 2.5))))
                lo, hi = self.distinct[d][a].item(), self._hi(d, b)
                ranges[d] = (lo, hi)
                col = self.columns[d]
                mask &= (col >= lo) & (col < hi)
            if lo_t <= mask.sum() <= hi_t:
                return RangePredicate(ranges)
        raise PolicyError(f"could not reach selectivity {target:.1%} on {list(dims)}")

    def draw(self, level: str, dims: Sequence[str] | None = None) -> RangePredicate:
        target = SELECTIVITIES[level]
        if target is None:
            return self.point(dims)
        return self.ranged(target, dims)


SHAPES = ("aggregation", "group_by", "filter", "join", "partial")


def meter_query_json(shape: str, pred: RangePredicate, schema: Schema = METER_SCHEMA,
                     users_file: str = "users.csv") -> dict:
    where = pred.to_json(schema)
    if shape in ("aggregation", "partial"):
        select = {"aggregates": ["sum(powerConsumed)", "count(*)", "min(powerConsumed)",
                                 "max(powerConsumed)", "avg(powerConsumed)"]}
    elif shape == "group_by":
        select = {"group_by": "time", "aggregates": ["sum(powerConsumed)"]}
    elif shape == "join":
        select = {"join": {"table": users_file, "on": "userId", "fields": ["userName", "powerConsumed"]}}
    else:
        select = "*"
    return {"where": where, "select": select}


def meter_workload(data_path, per_level: int = 3, seed: int = 11, shapes: Sequence[str] = ("aggregation",),
                   users_file: str = "users.csv") -> dict:
    """Workload file contents: ``per_level`` queries per (shape, selectivity level)."""
    from .baseline import ScanOracle

    oracle = ScanOracle([data_path], METER_SCHEMA)
    cols = {"regionId": oracle.columns["regionId"], "time": oracle.columns["time"],
            "userId": oracle.columns["userId"]}
    synth = PredicateSynthesizer(cols, METER_SCHEMA, ["regionId", "time", "userId"], seed=seed)
    queries = []
    for shape in shapes:
        for level in SELECTIVITIES:
            for i in range(per_level):
                if shape == "partial":
                    pred = synth.partial(SELECTIVITIES[level], ["regionId", "time"])
                else:
                    pred = synth.draw(level)
                queries.append({
                    "name": f"{shape}-{level}-{i:03d}",
                    "shape": shape,
                    "selectivity": level,
                    "query": meter_query_json(shape, pred, users_file=users_file),
                })
    return {"dataset": "meter", "queries": queries}


def write_workload(workload: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(workload, indent=1) + "\n", encoding="utf-8")
    return path


def spec_dict(spec: GeneratorSpec) -> dict:
    return asdict(spec)
