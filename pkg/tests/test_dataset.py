import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augbpm import dataset as ds
from augbpm.dataset import FeatureRow, LuxNorm, Provenance
from augbpm.ive import Illuminance, Leaving, Occupancy, SyntheticIveRecord
from augbpm.probit import BpmSample, ConfigError


def syn(occ, leave, lux=500.0, on=False):
    level = {200.0: Illuminance.DARK, 500.0: Illuminance.NORMAL, 700.0: Illuminance.BRIGHT}[lux]
    return SyntheticIveRecord(occ, leave, Illuminance.NORMAL, level, on, lux)


def bpm(n, seed=0):
    rng = np.random.default_rng(seed)
    return [BpmSample(float(x), float(p)) for x, p in zip(rng.uniform(200, 750, n), rng.uniform(0, 1, n))]


def test_single_atom_imputation():
    rows = ds.impute_contextual_factors(bpm(50), [syn(Occupancy.OCCUPANCY, Leaving.NONE)], seed=1)
    assert all(r.occupancy is Occupancy.OCCUPANCY and r.intermediate_leaving is Leaving.NONE for r in rows)


@pytest.mark.parametrize("joint", [True, False])
def test_imputed_marginal_matches_source(joint):
    ive_rows = [syn(Occupancy.NON_OCCUPANCY, Leaving.SHORT), syn(Occupancy.OCCUPANCY, Leaving.LONG)] * 5
    samples = [BpmSample(400.0, 0.3)] * 100_000
    rows = ds.impute_contextual_factors(samples, ive_rows, seed=2, joint=joint)
    frac = np.mean([r.occupancy is Occupancy.NON_OCCUPANCY for r in rows])
    assert frac == pytest.approx(0.5, abs=0.01)
    pairs = Counter((r.occupancy, r.intermediate_leaving) for r in rows)
    if joint:
        assert set(pairs) == {(Occupancy.NON_OCCUPANCY, Leaving.SHORT), (Occupancy.OCCUPANCY, Leaving.LONG)}
    else:
        assert len(pairs) == 4


def test_imputation_deterministic_and_preserves_values():
    source = bpm(300, seed=3)
    ive_rows = [syn(o, l) for o, l in itertools.product(Occupancy, Leaving)]
    a = ds.impute_contextual_factors(source, ive_rows, seed=4)
    assert a == ds.impute_contextual_factors(source, ive_rows, seed=4)
    assert [(r.work_lux, r.p_switch_on) for r in a] == [(s.work_lux, s.p_switch_on) for s in source]


def test_imputation_needs_ive_rows():
    with pytest.raises(ConfigError):
        ds.impute_contextual_factors(bpm(3), [], seed=0)


def test_concat_counts_and_multiset():
    ive_rows = [syn(Occupancy.OCCUPANCY, Leaving.SHORT)]
    a = ds.impute_contextual_factors(bpm(2000, 1), ive_rows, seed=0)
    b = ds.ive_feature_rows([syn(Occupancy.NON_OCCUPANCY, Leaving.LONG, 700.0, True)] * 2000)
    out = ds.concat(a, b, seed=5)
    assert len(out) == 4000
    assert Counter(out.provenance) == {Provenance.EXISTING_BPM: 2000, Provenance.SYNTHETIC_IVE: 2000}
    assert Counter(out.rows) == Counter(a + b)
    assert out.select(Provenance.SYNTHETIC_IVE) == b
    assert len(ds.concat(a[:1], b[:1])) == 2


def test_concat_rejects_empty():
    with pytest.raises(ConfigError):
        ds.concat([], ds.ive_feature_rows([syn(Occupancy.OCCUPANCY, Leaving.NONE)]))


def test_ive_rows_carry_switch_state():
    rows = ds.ive_feature_rows([syn(Occupancy.OCCUPANCY, Leaving.NONE, 200.0, True), syn(Occupancy.OCCUPANCY, Leaving.NONE)])
    assert [r.p_switch_on for r in rows] == [1.0, 0.0]
    assert rows[0].work_lux == 200.0


def test_feature_vector_examples():
    v = ds.to_feature_vector(FeatureRow(Occupancy.OCCUPANCY, Leaving.SHORT, 500.0))
    assert v == pytest.approx([1, 0, 1, 0, 300 / 550])
    assert v[4] == pytest.approx(0.5454, abs=1e-4)
    assert list(ds.to_feature_vector(FeatureRow(Occupancy.NON_OCCUPANCY, Leaving.NONE, 200.0))) == [0, 1, 0, 0, 0]
    assert ds.to_feature_vector(FeatureRow(Occupancy.NON_OCCUPANCY, Leaving.LONG, 640.0), LuxNorm.NONE)[4] == 640.0


def test_feature_encoding_injective():
    rows = [FeatureRow(o, l, 450.0) for o, l in itertools.product(Occupancy, Leaving)]
    vecs = {tuple(ds.to_feature_vector(r)) for r in rows}
    assert len(vecs) == len(rows)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(list(Occupancy)), st.sampled_from(list(Leaving)), st.floats(200, 750)), min_size=1, max_size=30))
def test_feature_matrix_matches_rowwise(items):
    rows = [FeatureRow(o, l, x) for o, l, x in items]
    mat = ds.feature_matrix(rows)
    assert mat.shape == (len(rows), ds.N_FEATURES)
    assert np.allclose(mat, np.stack([ds.to_feature_vector(r) for r in rows]))
    assert np.all(mat[:, 1:4].sum(axis=1) == 1)


def test_probabilities_requires_values():
    with pytest.raises(ConfigError):
        ds.probabilities([FeatureRow(Occupancy.OCCUPANCY, Leaving.NONE, 300.0)])


def test_mode_context():
    recs = [syn(Occupancy.OCCUPANCY, Leaving.NONE)] * 3 + [syn(Occupancy.NON_OCCUPANCY, Leaving.SHORT)] * 2
    assert ds.mode_context(recs) == (Occupancy.OCCUPANCY, Leaving.NONE)
    tie = [syn(Occupancy.OCCUPANCY, Leaving.NONE), syn(Occupancy.NON_OCCUPANCY, Leaving.LONG)]
    assert ds.mode_context(tie) == (Occupancy.NON_OCCUPANCY, Leaving.LONG)


def test_assembled_csv_round_trip(tmp_path):
    a = ds.impute_contextual_factors(bpm(20), [syn(Occupancy.OCCUPANCY, Leaving.LONG)], seed=0)
    b = ds.ive_feature_rows([syn(Occupancy.NON_OCCUPANCY, Leaving.SHORT, 200.0, True)] * 5)
    data = ds.concat(a, b, seed=1)
    path = tmp_path / "train.csv"
    ds.write_assembled_csv(data, path)
    back = ds.read_assembled_csv(path)
    assert back.provenance == data.provenance
    for x, y in zip(back.rows, data.rows):
        assert (x.occupancy, x.intermediate_leaving) == (y.occupancy, y.intermediate_leaving)
        assert x.work_lux == pytest.approx(y.work_lux, rel=1e-9)
        assert x.p_switch_on == pytest.approx(y.p_switch_on, rel=1e-9)
