import pytest
from hypothesis import given, settings, strategies as st

from polaron_renewal.config import RunConfig
from polaron_renewal.errors import InvalidParameterError

finite = dict(allow_nan=False, allow_infinity=False)


@settings(max_examples=100, deadline=None)
@given(alpha=st.floats(1e-6, 50, **finite), seed=st.integers(0, 2**63), h=st.floats(1e-4, 0.5, **finite),
       P=st.lists(st.floats(0, 10, **finite), max_size=6), fmt=st.sampled_from(["csv", "jsonl"]),
       threads=st.none() | st.integers(1, 64), tol=st.floats(1e-12, 0.5, **finite))
def test_round_trip(alpha, seed, h, P, fmt, threads, tol):
    cfg = RunConfig(alpha=alpha, base_seed=seed, h=h, T_max=h * 100, P_grid=P, format=fmt,
                    threads=threads, tol=tol)
    assert RunConfig.loads(cfg.dumps()) == cfg


def test_file_round_trip(tmp_path):
    cfg = RunConfig(alpha=0.3, output_dir="out dir")
    cfg.save(tmp_path / "run.cfg")
    assert RunConfig.load(tmp_path / "run.cfg") == cfg


def test_comments_and_partial_files():
    cfg = RunConfig.loads("# a comment\nalpha = 0.5  # trailing\n\nP_grid = 0, 1\n")
    assert cfg.alpha == 0.5 and cfg.P_grid == (0.0, 1.0)
    assert cfg.shards == RunConfig().shards


@pytest.mark.parametrize("text, key", [
    ("alpha = 0", "alpha"), ("h = -1", "h"), ("format = xml", "format"), ("shards = 0", "shards"),
    ("tol = 2", "tol"), ("alpha = abc", "alpha"), ("lambda_min = 1", "lambda_min"),
])
def test_invalid_values_name_the_key(text, key):
    with pytest.raises(InvalidParameterError, match=key):
        RunConfig.loads(text)


def test_unknown_key_and_bad_line():
    with pytest.raises(InvalidParameterError, match="unknown"):
        RunConfig.loads("beta = 1")
    with pytest.raises(InvalidParameterError, match="line 2"):
        RunConfig.loads("alpha = 1\nnonsense")


def test_lambda_grid():
    cfg = RunConfig(lambda_min=-2.0, lambda_max=0.0, n_lambda=5)
    assert cfg.lambda_grid() == [-2.0, -1.5, -1.0, -0.5, 0.0]
