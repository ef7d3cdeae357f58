import numpy as np
import pytest

ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def has_cycle_dfs(adj) -> bool:
    """Independent cycle oracle: iterative depth-first search with colours."""
    adj = np.asarray(adj) != 0
    d = adj.shape[0]
    adj = adj & ~np.eye(d, dtype=bool)
    colour = [0] * d
    for start in range(d):
        if colour[start]:
            continue
        stack = [(start, iter(np.flatnonzero(adj[start])))]
        colour[start] = 1
        while stack:
            node, children = stack[-1]
            nxt = next(children, None)
            if nxt is None:
                colour[node] = 2
                stack.pop()
            elif colour[nxt] == 1:
                return True
            elif colour[nxt] == 0:
                colour[nxt] = 1
                stack.append((nxt, iter(np.flatnonzero(adj[nxt]))))
    return False


def rel_err(a, b) -> float:
    a = np.ravel(np.asarray(a, dtype=float))
    b = np.ravel(np.asarray(b, dtype=float))
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
