import pytest

from ruleembed.graph import build_graph

ACCEPTANCE_RESULTS: list[tuple[str, str, str]] = []


def record(criterion: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((criterion, "PASS" if ok else "FAIL", detail))
    print(f"{criterion}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit, status, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{status} {crit} {detail}".rstrip())


@pytest.fixture
def movie_graph():
    """Users and movies with friend/likes edges and MAJOR/GENRE/TITLE attributes."""
    edges = [
        ("V6", "V4", "friend"),
        ("V4", "V6", "friend"),
        ("V4", "V0", "likes"),
        ("V2", "V1", "likes"),
        ("V3", "V1", "likes"),
        ("V5", "V0", "likes"),
        ("V2", "V3", "friend"),
    ]
    assoc = [
        ("V0", "TITLE=Oppenheimer"),
        ("V0", "GENRE=History"),
        ("V1", "TITLE=Dune"),
        ("V1", "GENRE=Sci-Fi"),
        ("V2", "MAJOR=Science"),
        ("V3", "MAJOR=Science"),
        ("V4", "MAJOR=Humanities"),
        ("V5", "MAJOR=Humanities"),
        ("V6", "MAJOR=Humanities"),
    ]
    labels = {"V0": "movie", "V1": "movie", "V2": "user", "V3": "user",
              "V4": "user", "V5": "user", "V6": "user"}
    return build_graph(edges, assoc, labels, directed=True)
