import dataclasses
import logging
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpumem.data import (DEFAULT_LAW, FEATURES, MEMORY_CAP_MB, DataError, FeatureSpec, SyntheticLaw, TaskRecord,
                         apply_scaler, fit_scaler, generate_synthetic, load_csv, read_csv, split, tree_columns,
                         tree_matrix, write_csv)

FIXTURE = Path(__file__).parent / "fixtures" / "published_sample.csv"
HEADER = ",".join(FEATURES) + ",memory_usage_mb\n"


def closed_form(rec):
    """The generative law written out by hand."""
    bpp = {0: 2, 1: 4, 2: 8}[rec.precision_encoded]
    offsets = {"BERT": 2500, "GAN": 800, "ResNet50": 1000, "Transformer": 3000, "U-Net": 1200, "VGG16": 1500,
               "YOLO v4": 2000}
    m = (3.0 * rec.num_parameters * bpp / 1048576 + 0.5 * rec.batch_size * rec.input_dim * rec.num_layers / 1024
         + offsets[rec.model_arch])
    return min(max(m, 1.0), 48000.0)


# ---- published sample

def test_published_rows_load_with_defaults(caplog):
    with caplog.at_level(logging.WARNING):
        rows = load_csv(FIXTURE)
    assert len(rows) == 8
    assert "defaulting" in caplog.text
    assert all(r.task_type == "training" and r.batch_size == 1 for r in rows)
    assert rows[0].model_arch == "VGG16" and rows[0].memory_usage_mb == 27416.0


def test_published_rows_satisfy_ppl_relation():
    for r in load_csv(FIXTURE):
        assert abs(r.parameters_per_layer - r.num_parameters / (r.num_layers * 1_024_000)) <= 1e-4


def test_published_first_and_last_rows():
    rows = load_csv(FIXTURE)
    assert round(190063585 / (83 * 1024000), 4) == 2.2363 == rows[0].parameters_per_layer
    assert round(1396224 / (65 * 1024000), 4) == 0.0210 == rows[-1].parameters_per_layer


# ---- CSV validation

def write(tmp_path, body, header=HEADER):
    p = tmp_path / "d.csv"
    p.write_text(header + body)
    return p


def test_precision_three_names_row(tmp_path):
    p = write(tmp_path, "training,BERT,64,8,12,1000000,1,0.0814,900\n"
                        "training,BERT,64,8,12,1000000,3,0.0814,900\n")
    with pytest.raises(DataError, match=r"row 3.*precision_encoded") as e:
        read_csv(p)
    assert e.value.row == 3 and e.value.column == "precision_encoded"


def test_ppl_mismatch(tmp_path):
    p = write(tmp_path, "training,BERT,64,8,12,1000000,1,0.5,900\n")
    with pytest.raises(DataError, match="parameters_per_layer"):
        read_csv(p)


@pytest.mark.parametrize("bad,column", [("abc", "input_dim"), ("2.5", "batch_size"), ("0", "num_layers")])
def test_unparsable_or_out_of_domain(tmp_path, bad, column):
    vals = {"input_dim": "64", "batch_size": "8", "num_layers": "12"}
    vals[column] = bad
    layers = vals["num_layers"]
    ppl = "0.0814" if layers == "12" else "0"
    p = write(tmp_path, f"training,BERT,{vals['input_dim']},{vals['batch_size']},{layers},1000000,1,{ppl},900\n")
    with pytest.raises(DataError, match=column):
        read_csv(p)


def test_memory_bounds(tmp_path):
    ok = write(tmp_path, "training,BERT,64,8,12,1000000,1,0.0814,48000\n")
    assert read_csv(ok)[0].memory_usage_mb == MEMORY_CAP_MB
    for bad in ("48000.5", "0", "-3"):
        with pytest.raises(DataError, match="memory_usage_mb"):
            read_csv(write(tmp_path, f"training,BERT,64,8,12,1000000,1,0.0814,{bad}\n"))


def test_missing_column(tmp_path):
    header = HEADER.replace("num_layers,", "")
    with pytest.raises(DataError, match="num_layers"):
        read_csv(write(tmp_path, "training,BERT,64,8,1000000,1,0.0814,900\n", header))


def test_unknown_architecture_is_accepted(tmp_path):
    rows = read_csv(write(tmp_path, "inference,MobileNet,64,8,12,1000000,1,0.0814,900\n"))
    assert rows[0].model_arch == "MobileNet"
    assert FeatureSpec.from_records(rows)["model_arch"].vocab == ("MobileNet",)


def test_target_optional_for_prediction_inputs(tmp_path):
    p = write(tmp_path, "training,BERT,64,8,12,1000000,1,0.0814\n", ",".join(FEATURES) + "\n")
    assert read_csv(p, require_target=False)[0].memory_usage_mb is None
    with pytest.raises(DataError):
        read_csv(p)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**31 - 1))
def test_csv_roundtrip(tmp_path_factory, n, seed):
    recs = generate_synthetic(n, seed)
    p = tmp_path_factory.mktemp("rt") / "r.csv"
    write_csv(recs, p)
    assert read_csv(p) == recs
    raw = p.read_bytes()
    assert b"\r" not in raw and raw.startswith(HEADER.encode())


# ---- synthetic generator

def test_generator_is_deterministic():
    assert generate_synthetic(50, 4) == generate_synthetic(50, 4)
    assert generate_synthetic(50, 4) != generate_synthetic(50, 5)


def test_noiseless_law_matches_closed_form():
    law = dataclasses.replace(DEFAULT_LAW, sigma=0.0)
    recs = generate_synthetic(10, 21, law)
    for r in recs:
        assert r.memory_usage_mb == pytest.approx(closed_form(r), rel=1e-13)
    # the noise draw still happens, so features match the noisy stream
    noisy = generate_synthetic(10, 21)
    assert [dataclasses.replace(r, memory_usage_mb=None) for r in recs] == \
           [dataclasses.replace(r, memory_usage_mb=None) for r in noisy]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_generated_records_are_valid_and_capped(seed):
    for r in generate_synthetic(40, seed):
        r.validate()
        assert 0 < r.memory_usage_mb <= 48000


def test_generator_constants():
    assert (DEFAULT_LAW.c_params, DEFAULT_LAW.c_act, DEFAULT_LAW.sigma) == (3.0, 0.5, 50.0)
    assert DEFAULT_LAW.bytes_per_param == (2, 4, 8)
    assert isinstance(DEFAULT_LAW, SyntheticLaw) and DEFAULT_LAW.version == 1


def test_generator_rejects_empty():
    with pytest.raises(ValueError):
        generate_synthetic(0, 1)


# ---- scaling

def test_train_columns_are_standardized():
    recs = generate_synthetic(200, 1)
    s = split(200, seed=1)
    sc = fit_scaler(recs, s.train)
    enc = apply_scaler([recs[i] for i in s.train], sc, FeatureSpec.from_records(recs))
    for col in enc.numeric.values():
        assert abs(col.mean()) < 1e-12
        assert abs(col.std() - 1) < 1e-9
    assert abs(enc.y.mean()) < 1e-12 and abs(enc.y.std() - 1) < 1e-9


def test_scaler_inverts_on_train_rows():
    recs = generate_synthetic(50, 2)
    sc = fit_scaler(recs, range(50))
    enc = apply_scaler(recs, sc, FeatureSpec.from_records(recs))
    y = np.array([r.memory_usage_mb for r in recs])
    np.testing.assert_allclose(sc.unscale_target(enc.y), y, rtol=0, atol=1e-9 * y.max())
    x = np.array([r.input_dim for r in recs], dtype=float)
    np.testing.assert_allclose(enc.numeric["input_dim"] * sc.std["input_dim"] + sc.mean["input_dim"], x,
                               atol=1e-9)


def test_no_leakage_into_val_and_test():
    recs = generate_synthetic(452, 0)
    s = split(452, seed=0)
    sc = fit_scaler(recs, s.train)
    spec = FeatureSpec.from_records(recs)
    for part in (s.val, s.test):
        enc = apply_scaler([recs[i] for i in part], sc, spec)
        assert any(abs(c.mean()) > 1e-3 for c in enc.numeric.values())
        assert abs(enc.y.mean()) > 1e-3


def test_scaler_ignores_non_train_rows():
    recs = generate_synthetic(60, 3)
    s = split(60, seed=3)
    a = fit_scaler(recs, s.train)
    changed = list(recs)
    for i in s.val + s.test:
        changed[i] = dataclasses.replace(recs[i], input_dim=999, memory_usage_mb=47000.0)
    assert fit_scaler(changed, s.train) == a


def test_zero_variance_target():
    recs = [dataclasses.replace(r, memory_usage_mb=500.0) for r in generate_synthetic(5, 1)]
    with pytest.raises(DataError):
        fit_scaler(recs, range(5))


def test_zero_variance_feature_passes_through():
    recs = [dataclasses.replace(r, batch_size=8) for r in generate_synthetic(20, 1)]
    sc = fit_scaler(recs, range(20))
    assert "batch_size" in sc.passthrough and sc.std["batch_size"] == 1.0


def test_scaler_dict_roundtrip():
    recs = generate_synthetic(20, 9)
    sc = fit_scaler(recs, range(20))
    assert type(sc).from_dict(sc.to_dict()) == sc


def test_tree_matrix_layout():
    recs = generate_synthetic(30, 4)
    spec = FeatureSpec.from_records(recs)
    enc = apply_scaler(recs, fit_scaler(recs, range(30)), spec)
    X = tree_matrix(enc, spec)
    cols = tree_columns(spec)
    assert X.shape == (30, len(cols))
    assert cols[:6] == ["input_dim", "batch_size", "num_layers", "num_parameters", "precision_encoded",
                        "parameters_per_layer"]
    onehot = X[:, -len(spec["model_arch"].vocab):]
    assert (onehot.sum(axis=1) == 1).all()
    code = X[:, cols.index("model_arch#code")].astype(int)
    assert (onehot.argmax(axis=1) == code).all()


# ---- splits

def test_split_rounding_rule():
    s = split(10, (0.7, 0.15, 0.15), seed=0)
    assert (len(s.train), len(s.val), len(s.test)) == (7, 1, 2)
    s = split(452, seed=0)
    assert (len(s.train), len(s.val), len(s.test)) == (316, 67, 69)


@given(st.integers(7, 500), st.integers(0, 2**31 - 1))
def test_split_is_a_partition(n, seed):
    s = split(n, seed=seed)
    everything = s.train + s.val + s.test
    assert sorted(everything) == list(range(n))
    # floored parts are within one row; the remainder part absorbs both floors
    for part, f in zip((s.train, s.val), s.fractions):
        assert 0 <= f * n - len(part) < 1
    assert 0 <= len(s.test) - s.fractions[2] * n < 2


def test_split_is_seeded():
    assert split(100, seed=3) == split(100, seed=3)
    assert split(100, seed=3).train != split(100, seed=4).train


@pytest.mark.parametrize("n,fractions", [(3, (0.7, 0.15, 0.15)), (10, (0.5, 0.6, -0.1)), (10, (0.5, 0.2, 0.2))])
def test_split_errors(n, fractions):
    with pytest.raises(ValueError):
        split(n, fractions)


def test_record_is_frozen():
    r = generate_synthetic(1, 0)[0]
    assert isinstance(r, TaskRecord)
    with pytest.raises(dataclasses.FrozenInstanceError):
        r.input_dim = 3
