"""Checks against files written by h5py and Keras themselves (skipped if absent)."""

import json
import os

import pytest

from loadscan.policy import default_policy
from loadscan.rules import Label
from loadscan.scanner import scan_bytes, scan_path

POLICY = default_policy()
DOC = {"class_name": "Sequential", "config": {"name": "s", "layers": [
    {"class_name": "Dense", "config": {"name": "d", "units": 2}}]}}


@pytest.mark.parametrize("fixed_length", [False, True])
def test_h5py_model_config_attribute(tmp_path, fixed_length):
    h5py = pytest.importorskip("h5py")
    import numpy as np

    path = tmp_path / "model.h5"
    text = json.dumps(DOC)
    with h5py.File(path, "w") as f:
        f.attrs["keras_version"] = "2.15.0"
        f.attrs["model_config"] = np.bytes_(text) if fixed_length else text
        f.create_dataset("weights", data=np.zeros(16))
    report = scan_path(path, POLICY)
    assert report.format.kind.value == "Hdf5"
    assert report.label is Label.CLEAN
    assert {f.rule_id for f in report.findings} == {"KERAS-LEGACY-FORMAT"}


@pytest.fixture(scope="module")
def keras():
    os.environ.setdefault("KERAS_BACKEND", "jax")
    return pytest.importorskip("keras")


def _model(keras, with_lambda: bool):
    inputs = keras.Input((4,))
    x = keras.layers.Dense(2)(inputs)
    if with_lambda:
        x = keras.layers.Lambda(lambda t: t * 2.0)(x)
    return keras.Model(inputs, x)


@pytest.mark.slow
@pytest.mark.parametrize("suffix", [".keras", ".h5"])
@pytest.mark.parametrize("with_lambda,label", [(False, Label.CLEAN), (True, Label.SUSPICIOUS)])
def test_keras_written_models(keras, tmp_path, suffix, with_lambda, label):
    path = tmp_path / f"m{suffix}"
    _model(keras, with_lambda).save(path)
    report = scan_path(path, POLICY)
    assert report.label is label, report.findings
    if with_lambda:
        assert "KERAS-LAMBDA-BYTECODE" in {f.rule_id for f in report.findings}


@pytest.mark.slow
def test_keras_written_model_renamed_is_still_detected(keras, tmp_path):
    path = tmp_path / "m.keras"
    _model(keras, True).save(path)
    report = scan_bytes(path.read_bytes(), "weights.json", POLICY)
    assert report.label is Label.SUSPICIOUS
