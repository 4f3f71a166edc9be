import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vdsa.learning.qtable import MAGIC, LearningParams, QTable, fuse_average, q_update
from vdsa.scenario import ConfigError


def random_table(rng, levels=8, bands=3):
    t = QTable.zeros(levels, bands)
    t.values[:] = rng.normal(0, 10, t.values.shape)
    t.visit_counts[:] = rng.integers(0, 100, t.num_states)
    return t


def test_zeros_shape():
    t = QTable.zeros(8, 3)
    assert t.values.shape == (120, 3)
    assert t.visit_counts.shape == (120,)


def test_alpha_zero_leaves_values():
    t = QTable.zeros(8, 3)
    t.values[3] = [1.0, 2.0, 3.0]
    before = t.values.copy()
    q_update(t, 3, 1, 99.0, 5, LearningParams(alpha=0.0))
    assert np.array_equal(t.values, before)
    assert t.visit_counts[3] == 1


def test_alpha_one_gamma_zero_sets_reward():
    t = QTable.zeros(8, 3)
    t.values[3, 1] = 17.0
    t.values[5] = 1000.0
    q_update(t, 3, 1, 42.25, 5, LearningParams(alpha=1.0, gamma=0.0))
    assert t.values[3, 1] == 42.25


def test_worked_update():
    t = QTable.zeros(8, 3)
    t.values[0, 0] = 50.0
    t.values[1] = [50.0, 10.0, 0.0]
    q_update(t, 0, 0, 60.0, 1, LearningParams(alpha=0.1, gamma=0.7))
    assert t.values[0, 0] == pytest.approx(54.5, abs=1e-12)


def test_literal_update_subtracts():
    t = QTable.zeros(8, 3)
    t.values[0, 0] = 50.0
    t.values[1] = [50.0, 10.0, 0.0]
    q_update(t, 0, 0, 60.0, 1, LearningParams(alpha=0.1, gamma=0.7, update_rule="paper_literal"))
    assert t.values[0, 0] == pytest.approx(50 + 0.1 * (60 - 35 - 50), abs=1e-12)


@given(st.integers(0, 119), st.integers(0, 2), st.floats(-100, 100), st.integers(0, 119))
@settings(max_examples=50)
def test_update_touches_one_entry(s, a, r, s2):
    rng = np.random.default_rng(s * 7 + a)
    t = random_table(rng)
    before = t.copy()
    q_update(t, s, a, r, s2, LearningParams())
    mask = np.ones_like(t.values, dtype=bool)
    mask[s, a] = False
    assert np.array_equal(t.values[mask], before.values[mask])
    counts = before.visit_counts.copy()
    counts[s] += 1
    assert np.array_equal(t.visit_counts, counts)


@pytest.mark.parametrize(
    "kw", [dict(alpha=1.5), dict(gamma=1.0), dict(epsilon=-0.1), dict(tau_low_samples=10, tau_high_samples=5), dict(update_rule="x")]
)
def test_params_validation(kw):
    with pytest.raises(ConfigError):
        LearningParams(**kw)


def test_binary_layout(rng):
    t = random_table(rng)
    raw = t.to_bytes()
    magic, version, R, K, S = struct.unpack_from("<8sIIIQ", raw)
    assert (magic, version, R, K, S) == (MAGIC, 1, 8, 3, 120)
    off = struct.calcsize("<8sIIIQ")
    vals = np.frombuffer(raw, "<f8", count=S * K, offset=off).reshape(S, K)
    counts = np.frombuffer(raw, "<i8", count=S, offset=off + S * K * 8)
    assert np.array_equal(vals, t.values)
    assert np.array_equal(counts, t.visit_counts)
    assert len(raw) == off + S * K * 8 + S * 8


def test_file_roundtrip(tmp_path, rng):
    t = random_table(rng)
    t.save(tmp_path / "q.qtbl")
    assert QTable.load(tmp_path / "q.qtbl") == t


def test_rejects_corrupt_files(rng):
    raw = random_table(rng).to_bytes()
    with pytest.raises(ValueError):
        QTable.from_bytes(b"NOTQTBL!" + raw[8:])
    with pytest.raises(ValueError):
        QTable.from_bytes(raw[:-1])
    with pytest.raises(ValueError):
        QTable.from_bytes(raw[:10])


def test_csv_export(tmp_path, rng):
    t = random_table(rng)
    t.to_csv(tmp_path / "q.csv")
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "state,levels,visits,q_0,q_1,q_2"
    assert len(lines) == 121
    row = lines[5].split(",")
    assert int(row[0]) == 4 and int(row[2]) == t.visit_counts[4]
    assert float(row[3]) == t.values[4, 0]


def test_fuse_identical_tables(rng):
    t = random_table(rng)
    f = fuse_average([t.copy(), t.copy(), t.copy()])
    assert np.array_equal(f.values, t.values)
    assert np.array_equal(f.visit_counts, 3 * t.visit_counts)


def test_fuse_two_values():
    a, b = QTable.zeros(8, 3), QTable.zeros(8, 3)
    b.values[:] = 10.0
    assert np.all(fuse_average([a, b]).values == 5.0)


def test_fuse_matches_elementwise_mean(rng):
    tables = [random_table(rng) for _ in range(3)]
    f = fuse_average(tables)
    for s in range(120):
        for k in range(3):
            expected = sum(t.values[s, k] for t in tables) / 3
            assert f.values[s, k] == pytest.approx(expected, rel=1e-12, abs=1e-12)
    assert np.array_equal(f.visit_counts, sum(t.visit_counts for t in tables))


def test_fuse_leaves_inputs_alone(rng):
    tables = [random_table(rng) for _ in range(2)]
    copies = [t.copy() for t in tables]
    fuse_average(tables)
    assert all(t == c for t, c in zip(tables, copies))


def test_fuse_with_base_counts_increments(rng):
    base = random_table(rng)
    forks = [base.copy() for _ in range(4)]
    params = LearningParams()
    for i, f in enumerate(forks):
        for _ in range(i + 1):
            q_update(f, 7, 1, 10.0, 8, params)
    fused = fuse_average(forks, base=base)
    expected = base.visit_counts.copy()
    expected[7] += 1 + 2 + 3 + 4
    assert np.array_equal(fused.visit_counts, expected)


def test_fuse_rejects_mismatch():
    with pytest.raises(ValueError):
        fuse_average([QTable.zeros(8, 3), QTable.zeros(6, 3)])
    with pytest.raises(ValueError):
        fuse_average([])


@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
@settings(max_examples=30)
def test_fuse_idempotent_and_order_free(seed, n):
    rng = np.random.default_rng(seed)
    t = random_table(rng)
    assert np.array_equal(fuse_average([t] * n).values, t.values)
    tables = [random_table(rng) for _ in range(n)]
    perm = rng.permutation(n)
    assert np.array_equal(fuse_average(tables).values, fuse_average([tables[i] for i in perm]).values)
