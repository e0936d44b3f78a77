import multiprocessing
import socket

import numpy as np
import pytest

from collectium.transport.sim import SimNetwork


def run_group(p, fn, link=None, gamma=0.0, **kwargs):
    """Run fn(rank, endpoint) on a fresh simulated network; returns
    (per-rank results, network)."""
    net = SimNetwork(p, link=link, gamma=gamma, **kwargs)
    return net.run(fn), net


def sum_oracle(arrays):
    """Independent oracle: sequential left fold over ranks 0..p-1."""
    acc = np.array(arrays[0], copy=True)
    for a in arrays[1:]:
        acc = acc + a
    return acc


def max_oracle(arrays):
    acc = np.array(arrays[0], copy=True)
    for a in arrays[1:]:
        acc = np.maximum(acc, a)
    return acc


def free_ports(n):
    socks, ports = [], []
    for _ in range(n):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
        ports.append(s.getsockname()[1])
    for s in socks:
        s.close()
    return ports


def write_hostfile(tmp_path, ports):
    path = tmp_path / "hostfile"
    path.write_text("".join(f"{r} 127.0.0.1 {port}\n"
                            for r, port in enumerate(ports)))
    return str(path)


def spawn_ranks(target, per_rank_args, timeout=60):
    """Fork one process per rank running target(rank, *args, queue); each
    target must put exactly one (rank, result) on the queue."""
    ctx = multiprocessing.get_context("fork")
    queue = ctx.Queue()
    procs = [ctx.Process(target=target, args=(rank, *args, queue))
             for rank, args in enumerate(per_rank_args)]
    for p in procs:
        p.start()
    try:
        results = dict(queue.get(timeout=timeout) for _ in procs)
    finally:
        for p in procs:
            p.join(timeout=10)
            if p.is_alive():
                p.terminate()
    return [results[r] for r in range(len(procs))]


@pytest.fixture
def two_ports(tmp_path):
    return write_hostfile(tmp_path, free_ports(2))


# -- acceptance criterion reporting -------------------------------------------
# Tests marked @pytest.mark.criterion(num, "summary") get one visible
# pass/fail line each in the terminal summary (pytest captures stdout, so
# printing from inside the test would not be shown on success).

_criterion_results = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(num, summary): acceptance criterion pass/fail reporting")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call":
        num, summary = marker.args
        _criterion_results[num] = (report.passed, summary)


def pytest_terminal_summary(terminalreporter):
    if not _criterion_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(_criterion_results):
        passed, summary = _criterion_results[num]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {status} - {summary}")
