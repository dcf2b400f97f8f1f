import numpy as np
import pytest
from hypothesis import settings

from blockuav.geometry import Building

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_boxes(rng, count, area=(1500.0, 1500.0), side=(20.0, 80.0), height=(10.0, 96.0)):
    out = []
    for _ in range(count):
        sx, sy = rng.uniform(*side, size=2)
        x = rng.uniform(0, area[0] - sx)
        y = rng.uniform(0, area[1] - sy)
        out.append(Building([x, y, 0.0], [sx, sy, rng.uniform(*height)]))
    return out


def ground_point_outside(rng, buildings, area=(1500.0, 1500.0), margin=1.0):
    while True:
        p = np.array([rng.uniform(0, area[0]), rng.uniform(0, area[1]), 0.0])
        if not any(b.min_corner[0] - margin <= p[0] <= b.max_corner[0] + margin
                   and b.min_corner[1] - margin <= p[1] <= b.max_corner[1] + margin
                   for b in buildings):
            return p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def mixed_association(rng, K, M, N, terms=3):
    """A doubly-substochastic C built as a convex mix of one-to-one matchings."""
    w = rng.dirichlet(np.ones(terms))
    C = np.zeros((K, M * N))
    for wi in w:
        C[np.arange(K), rng.permutation(M * N)[:K]] += wi
    return C.reshape(K, M, N)


@pytest.fixture
def small_net(rng):
    """Four users among eight boxes, two UAVs with two subcarriers each."""
    from blockuav.channel import ChannelParams, evaluate_links
    from blockuav.geometry import ShadowSet, blocked_regions

    boxes = random_boxes(rng, 8, area=(500.0, 500.0), side=(40.0, 40.0))
    users = np.array([ground_point_outside(rng, boxes, area=(500.0, 500.0)) for _ in range(4)])
    shadows = [ShadowSet(r) for r in blocked_regions(users, boxes)]
    cp = ChannelParams()
    X = np.array([[100.0, 100.0, 150.0], [300.0, 300.0, 160.0]])
    P = rng.uniform(0.1, 0.5, (2, 2))
    C = mixed_association(rng, 4, 2, 2)
    Lam = np.full((4, 2, 2), 0.1)
    links = evaluate_links(X, users, shadows, cp)
    return dict(users=users, shadows=shadows, cp=cp, X=X, P=P, C=C, Lam=Lam, links=links,
                boxes=boxes)


# acceptance verdicts, printed once at the end of the session
VERDICTS = {}


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records the outcome of acceptance criterion n.

    A test that errors before recording is reported as FAIL.
    """
    seen = []

    def record(n, ok, detail=""):
        seen.append(n)
        VERDICTS[n] = (bool(ok), detail)
        return ok

    yield record
    n = getattr(request.function, "criterion", None)
    if n is not None and n not in seen:
        VERDICTS[n] = (False, "test errored before reaching a verdict")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
