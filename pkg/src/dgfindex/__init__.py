"""Grid-file index with pre-computed aggregate headers for range queries over flat record files."""

from .aggregates import AggregateSpec, Header, merge, parse_specs
from .baseline import ScanOracle, compact_build, compact_query, results_match
from .builder import BuildConfig, BuiltTable, append_batch, build_index, rebuild_headers
from .errors import (
    CorruptIndexFile,
    DataError,
    DGFError,
    InconsistencyError,
    NotFound,
    PolicyError,
    StaleAppend,
)
from .grid import DimensionPolicy, SplittingPolicy, decompose, gfu_key, parse_policy, standardize
from .index_store import GFUValue, IndexStore, SliceLocation
from .query import Query, RangePredicate, plan, run_query
from .schema import Schema

__version__ = "0.1.0"

__all__ = [
    "AggregateSpec",
    "BuildConfig",
    "BuiltTable",
    "CorruptIndexFile",
    "DGFError",
    "DataError",
    "DimensionPolicy",
    "GFUValue",
    "Header",
    "InconsistencyError",
    "IndexStore",
    "NotFound",
    "PolicyError",
    "Query",
    "RangePredicate",
    "ScanOracle",
    "Schema",
    "SliceLocation",
    "SplittingPolicy",
    "StaleAppend",
    "append_batch",
    "build_index",
    "compact_build",
    "compact_query",
    "decompose",
    "gfu_key",
    "merge",
    "parse_policy",
    "parse_specs",
    "plan",
    "rebuild_headers",
    "results_match",
    "run_query",
    "standardize",
]
