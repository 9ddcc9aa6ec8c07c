import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from blocklink.comparison import BlockedFile, ComparisonSchema, ComparisonSpec, build_comparison_cube
from blocklink.model import ModelParams


def binary_schema() -> ComparisonSchema:
    return ComparisonSchema(
        block=[ComparisonSpec("bv", "binary-exact")],
        record=[ComparisonSpec("rv", "binary-exact")],
    )


def make_blocked_file(file_id, block_vals, record_vals) -> BlockedFile:
    """block_vals: list of tuples; record_vals: list of lists of tuples."""
    return BlockedFile(
        file_id=file_id,
        block_ids=[f"{file_id}b{i}" for i in range(len(block_vals))],
        block_values=list(block_vals),
        record_ids=[
            [f"{file_id}b{i}r{j}" for j in range(len(recs))] for i, recs in enumerate(record_vals)
        ],
        record_values=[list(recs) for recs in record_vals],
    )


def random_binary_instance(rng, s_blocks, t_blocks, n1, n2):
    """Random binary-variable instance; returns (f1, f2, cube)."""
    f1 = make_blocked_file(
        "f1",
        [(int(rng.integers(3)),) for _ in range(s_blocks)],
        [[(int(rng.integers(3)),) for _ in range(n1)] for _ in range(s_blocks)],
    )
    f2 = make_blocked_file(
        "f2",
        [(int(rng.integers(3)),) for _ in range(t_blocks)],
        [[(int(rng.integers(3)),) for _ in range(n2)] for _ in range(t_blocks)],
    )
    return f1, f2, build_comparison_cube(f1, f2, binary_schema())


def binary_theta(p_bm=0.75, p_bu=0.4, p_cm=0.8, p_cu=0.3, p_cnb=0.45, alpha=1.0, beta=1.0):
    mk = lambda p: [np.array([1.0 - p, p])]
    return ModelParams(
        theta_bm=mk(p_bm),
        theta_bu=mk(p_bu),
        theta_cm=mk(p_cm),
        theta_cu=mk(p_cu),
        theta_cnb=mk(p_cnb),
        alpha_pi=alpha,
        beta_pi=beta,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
