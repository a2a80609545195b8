from pathlib import Path

import pytest

from dgfindex.builder import BuildConfig, build_index
from dgfindex.schema import Schema

# one "[PASS]/[FAIL] criterion N: ..." line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


FIG4_ROWS = [
    (1, 14, 0.1),
    (2, 11, 0.3),
    (5, 16, 0.2),
    (3, 17, 0.6),
    (8, 13, 0.5),
    (11, 12, 0.4),
    (6, 19, 0.8),
    (12, 14, 0.7),
    (9, 14, 0.9),
    (2, 20, 0.2),
]
FIG4_SCHEMA = Schema([("A", "int"), ("B", "int"), ("C", "float")])
FIG4_POLICY = "A=1_3,B=11_2"


def write_rows(path: Path, rows, schema: Schema | None = None) -> Path:
    """Write rows as CSV (values rendered through ``schema`` when given) plus a schema sidecar."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            if schema is not None:
                row = [schema.render(n, v) for n, v in zip(schema.names, row)]
            f.write(",".join(str(v) for v in row) + "\n")
    if schema is not None:
        schema.save(Path(str(path) + ".schema"))
    return path


@pytest.fixture
def fig4_file(tmp_path) -> Path:
    return write_rows(tmp_path / "fig4.csv", FIG4_ROWS, FIG4_SCHEMA)


@pytest.fixture
def fig4_table(tmp_path, fig4_file):
    cfg = BuildConfig(FIG4_POLICY, ["sum(C)", "count(*)", "min(C)", "max(C)"], split_size=64,
                      output_dir=tmp_path / "fig4_table")
    return build_index([fig4_file], cfg, FIG4_SCHEMA)
