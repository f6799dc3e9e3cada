import pytest

from lfrecog import cli


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small complete synthetic dataset: 3 subjects, 3x3 grid, 16px views."""
    out = tmp_path_factory.mktemp("tiny") / "data"
    rc = cli.main([
        "synth", "--subjects", "3", "--grid", "3", "--view-size", "16",
        "--disparity", "0.8", "--noise", "4", "--seed", "5",
        "--out", str(out),
    ])
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def paired_dataset(tmp_path_factory):
    """8 subjects on a 9x9 grid where consecutive pairs share the texture and
    differ only in per-view disparity sign."""
    out = tmp_path_factory.mktemp("paired") / "data"
    rc = cli.main([
        "synth", "--subjects", "8", "--grid", "9", "--view-size", "32",
        "--disparity", "1.0", "--noise", "6", "--paired-patterns",
        "--seed", "1", "--out", str(out),
    ])
    assert rc == 0
    return out
