import numpy as np
import pytest

INV_SQRT2 = 1.0 / np.sqrt(2.0)


def unit(n, *idx, sign=1.0):
    v = np.zeros(n)
    for k in idx:
        v[k - 1] = sign
    return v


def reference_T_d():
    """Reference T_id of the nine-state tracking example (rows are columns of T_id).

    `rounded` carries 0.7071, a four-digit rounding of 1/sqrt(2); `exact`
    substitutes the exact value.
    """
    n = 9

    def cols(*rows):
        return np.array(rows, float).T

    def node2(c):
        return cols([0, 0, 0, 0, 0, 0, .5, -c, .5], [0, 0, 0, -c, 0, 0, .5, 0, -.5], [0, 0, -1, 0, 0, 0, 0, 0, 0])

    common = {
        1: cols(unit(n, 1)),
        3: cols(unit(n, 6, sign=-1), unit(n, 5)),
        4: cols(unit(n, 8), unit(n, 9), unit(n, 7, sign=-1)),
        5: cols(unit(n, 2)),
        6: cols(unit(n, 4)),
    }
    rounded = {**common, 2: node2(0.7071)}
    exact = {**common, 2: node2(INV_SQRT2)}
    return rounded, exact


def random_triplet(rng, n=None, m_minus=None, p=None):
    """Random (A, B_minus, C) meeting the rank preconditions."""
    n = n or int(rng.integers(3, 7))
    p = p or int(rng.integers(1, n))
    m_minus = int(rng.integers(0, n - 1)) if m_minus is None else m_minus
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, m_minus)) if m_minus else np.zeros((n, 0))
    C = rng.standard_normal((p, n))
    return A, B, C


def structured_triplet(rng, n, p, k_hidden, unstable):
    """(A, C) with a known undetectable subspace, hidden by a random rotation.

    The last `k_hidden` coordinates are unobservable; `unstable` of them carry
    eigenvalues with positive real part.  Returns ``(A, C, U)`` where ``U``
    spans the true undetectable subspace.
    """
    k_obs = n - k_hidden
    A11 = rng.standard_normal((k_obs, k_obs))
    C1 = rng.standard_normal((p, k_obs))
    lam = np.concatenate([rng.uniform(0.2, 2.0, unstable), -rng.uniform(0.2, 2.0, k_hidden - unstable)])
    V = rng.standard_normal((k_hidden, k_hidden)) + 2 * np.eye(k_hidden)
    A22 = V @ np.diag(lam) @ np.linalg.inv(V)
    A = np.zeros((n, n))
    A[:k_obs, :k_obs] = A11
    A[k_obs:, :k_obs] = rng.standard_normal((k_hidden, k_obs))
    A[k_obs:, k_obs:] = A22
    C = np.hstack([C1, np.zeros((p, k_hidden))])
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ A @ Q.T, C @ Q.T, Q


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# -- acceptance report ----------------------------------------------------------

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, text): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    label, text = mark.args
    if hasattr(rep, "wasxfail"):
        status = "FAIL" if rep.skipped else "PASS"
        note = "expected failure, " + rep.wasxfail if rep.skipped else "unexpectedly passed"
    else:
        status, note = ("PASS" if rep.passed else "FAIL"), ""
    details = "; ".join(f"{k}: {v}" for k, v in rep.user_properties)
    _CRITERIA.append((label, status, text, details, note))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label, status, text, details, note in _CRITERIA:
        tr.write_line(f"[{status}] criterion {label}: {text}")
        if details:
            tr.write_line(f"         {details}")
        if note:
            tr.write_line(f"         ({note})")
