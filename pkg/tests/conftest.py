import pytest
import torch

from synthasu import toy


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    real = toy.make_real(root / "real", n_sessions=5, per_label_per_session=6, seed=0)
    syn = toy.make_synthetic(root / "synthetic", per_label=30, seed=1)
    return real, syn


@pytest.fixture
def probe_batch():
    gen = torch.Generator().manual_seed(123)
    waves = torch.randn(16, 4800, generator=gen) * 0.1
    mask = torch.ones_like(waves, dtype=torch.bool)
    mask[8:, 3000:] = False
    return waves * mask, mask


# acceptance criteria outcomes, printed once at the end of the session
CRITERIA: dict[int, tuple[str, bool]] = {}


@pytest.fixture
def criterion(request):
    """Record the pass/fail outcome of one numbered acceptance criterion."""
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    CRITERIA[number] = (title, False)
    yield
    rep = getattr(request.node, "rep_call", None)
    CRITERIA[number] = (title, bool(rep and rep.passed))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, ok = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
