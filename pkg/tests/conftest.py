from __future__ import annotations

import json
from pathlib import Path

import pytest

from sentinel import classify
from sentinel.coa import CoaPolicy
from sentinel.kb import KnowledgeBase
from sentinel.pipeline import Pipeline

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

WCRY_SHA256 = "5ca1ab1e" * 8
NOTEPAD_SHA256 = "00c0ffee" * 8
SEVENZIP_SHA256 = "7a2b7a2b" * 8
UNKNOWN_SHA256 = "deadbeef" * 8
DLL_SHA256 = "d11d11d0" * 8


def load_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def make_kb(*bundles: str) -> KnowledgeBase:
    kb = KnowledgeBase()
    for name in bundles:
        kb.load_bundle(load_json(FIXTURES / name))
    return kb


def default_policy() -> classify.Policy:
    from importlib import resources
    text = resources.files("sentinel").joinpath("data", "default_policy.json").read_text()
    return classify.load_policy(text)


def default_coa_policy() -> CoaPolicy:
    from importlib import resources
    text = resources.files("sentinel").joinpath("data", "default_coa_policy.json").read_text()
    return CoaPolicy.load(text)


def make_pipeline(tmp_path, *, bundles=("wannacry_bundle.json", "whitelist_bundle.json"),
                  cache_ttl_s: int = 3600) -> Pipeline:
    kb = make_kb(*bundles)
    return Pipeline(kb, default_policy(), default_coa_policy(),
                    journal_dir=tmp_path / "journal", cache_ttl_s=cache_ttl_s)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN


@pytest.fixture
def fixture_kb() -> KnowledgeBase:
    return make_kb("wannacry_bundle.json", "whitelist_bundle.json")


@pytest.fixture
def pipeline(tmp_path) -> Pipeline:
    return make_pipeline(tmp_path)


# ---------------------------------------------------------------------------
# acceptance reporting: one pass/fail line per criterion
# ---------------------------------------------------------------------------

_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call":
        _acceptance_results[report.nodeid] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and report.failed:
        _acceptance_results[report.nodeid] = "ERROR"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for nodeid in sorted(_acceptance_results):
        name = nodeid.split("::")[-1]
        outcome = _acceptance_results[nodeid]
        terminalreporter.write_line(f"{outcome}  {name}")
