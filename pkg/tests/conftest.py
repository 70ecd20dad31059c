import pytest

from iastab.rate_model import SystemConfig


def reference_config(cross=0.2, bits=30, n_pairs=6, **overrides):
    """Six pairs, 7x7 antennas, two streams, power 10, unit noise and
    threshold, probe cost 0.01, 1000 bits per stream."""
    params = dict(n_tx=7, n_rx=7, streams=2, power=10.0, noise_var=1.0,
                  probe_cost=0.01, bits=bits, threshold=1.0,
                  stream_rate=1000.0)
    direct = overrides.pop("direct", 1.0)
    params.update(overrides)
    return SystemConfig.homogeneous(n_pairs, cross=cross, direct=direct,
                                    **params)


def random_config(rng, n_pairs=None, homogeneous=True):
    """Draw a config with IA-feasible antennas and random link gains."""
    n = int(rng.integers(2, 7)) if n_pairs is None else n_pairs
    streams = int(rng.integers(1, 3))
    ant = (n + 1) * streams
    n_tx = int(rng.integers(streams, ant))
    n_rx = max(ant - n_tx, streams)
    kw = dict(n_tx=n_tx, n_rx=n_rx, streams=streams,
              power=float(rng.uniform(5, 20)), noise_var=1.0,
              probe_cost=float(rng.uniform(0.005, 0.9 / n)),
              bits=int(rng.integers(10, 41)),
              threshold=float(rng.uniform(0.5, 2.0)), stream_rate=1000.0)
    if homogeneous:
        return SystemConfig.homogeneous(n, cross=float(rng.uniform(0.05, 1)),
                                        **kw)
    pl = rng.uniform(0.05, 1.0, size=(n, n))
    pl[range(n), range(n)] = rng.uniform(0.5, 1.5, size=n)
    return SystemConfig(n_pairs=n, path_loss=pl.tolist(), **kw)


@pytest.fixture
def ref_cfg():
    return reference_config()


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; returns ``ok``."""
    def emit(criterion, ok, detail):
        line = "%s criterion %d: %s" % ("PASS" if ok else "FAIL", criterion,
                                        detail)
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES,
                           key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
