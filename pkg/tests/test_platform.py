from __future__ import annotations

import csv

import numpy as np
import pytest

from hspi.errors import ConfigError, UsageError
from hspi.numerics import FP16, MXINT8, AccumOrder
from hspi.platform import (
    PlatformProfile,
    PlatformRegistry,
    bit_flip_histogram,
    eqc_diff,
    registry_dumps,
    registry_hash,
    registry_load,
    registry_loads,
    registry_save,
)

QUANT7 = ["fp32", "bf16", "fp16", "mxint8", "fp8-e3", "fp8-e4", "int8"]


def test_bundled_registry(registry):
    assert registry.ids == QUANT7
    assert registry.get("mxint8").format == MXINT8
    assert registry.get("fp16").format == FP16
    assert all(p.accum_order == AccumOrder("blocked", 16) for p in registry)


def test_profile_defaults():
    p = PlatformProfile(id="x", format="bf16")
    assert (p.conv_kernel, p.batch_group, p.logit_emit_format.name) == ("gemm", 1, "fp32")
    assert p.replace(batch_group=8).batch_group == 8
    assert p.replace(batch_group=8).format == p.format


def test_registry_text_round_trip(registry, tmp_path):
    again = registry_loads(registry_dumps(registry))
    assert list(again) == list(registry)
    assert registry_hash(again) == registry_hash(registry)
    registry_save(registry, tmp_path / "r.cfg")
    assert registry_load(tmp_path / "r.cfg").ids == QUANT7


def test_registry_hash_changes_with_content(registry):
    changed = PlatformRegistry(tuple(p.replace(batch_group=2) if p.id == "fp16" else p for p in registry))
    assert registry_hash(changed) != registry_hash(registry)


@pytest.mark.parametrize("text,code,line", [
    ("", "empty-registry", None),
    ("# only a comment\n", "empty-registry", None),
    ("[a]\nformat = fp32\ncolour = red\n", "unknown-field", 3),
    ("[a]\naccum = pairwise-tree\n", "missing-field", 1),
    ("[a]\nformat = fp32\n\n[a]\nformat = fp16\n", "duplicate-profile", 4),
    ("[a]\nformat = fp32\nbatch_group = 0\n", "bad-profile", 3),
    ("[a]\nformat = fp99\n", "bad-format", 1),
    ("format = fp32\n", "bad-section", 1),
])
def test_registry_errors(text, code, line):
    with pytest.raises(ConfigError) as info:
        registry_loads(text)
    assert info.value.code == code
    if line is not None:
        assert info.value.line == line


def test_registry_lookup(registry):
    assert registry.index("fp16") == 2
    assert registry.subset(["int8", "fp32"]).ids == ["fp32", "int8"]
    with pytest.raises(UsageError):
        registry.get("tpu")


def test_eqc_is_reflexive(mlp, registry, rng):
    x = rng.random((20,) + mlp.input_shape)
    for p in registry:
        report = eqc_diff(mlp, x, p, p)
        assert report.same_eqc
        assert report.bit_flips.sum() == 0


def test_fp32_and_fp8_are_separate_eqcs(cnn, registry, rng):
    x = rng.random((8,) + cnn.input_shape)
    report = eqc_diff(cnn, x, registry.get("fp32"), registry.get("fp8-e4"))
    assert not report.same_eqc
    assert report.max_abs_delta > 0
    assert "different EQC" in report.summary()


def test_conv_knob_is_inert_without_convolutions(mlp, registry, rng):
    x = rng.random((20,) + mlp.input_shape)
    p = registry.get("fp8-e4")
    assert eqc_diff(mlp, x, p.replace(conv_kernel="gemm"), p.replace(conv_kernel="direct")).same_eqc


def test_bit_flip_histogram():
    a = np.array([1.0, 2.0], dtype=np.float32)
    b = np.array([1.0, -2.0], dtype=np.float32)
    hist = bit_flip_histogram(a, b)
    assert hist[31] == 1
    assert hist.sum() == 1


def test_diff_report_csv(cnn, registry, rng, tmp_path):
    x = rng.random((4,) + cnn.input_shape)
    report = eqc_diff(cnn, x, registry.get("fp32"), registry.get("bf16"))
    report.write_csv(tmp_path / "bits.csv")
    with open(tmp_path / "bits.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 32
    assert rows[0] == {"bit": "31", "field": "sign", "flips": str(int(report.bit_flips[31]))}
    assert sum(int(r["flips"]) for r in rows) == int(report.bit_flips.sum())


def test_eqc_diff_is_symmetric_and_transitive(mlp, registry, rng):
    x = rng.random((20,) + mlp.input_shape)
    fp32, fp8 = registry.get("fp32"), registry.get("fp8-e4")
    profiles = [fp32, fp32.replace(id="fp32-twin"), fp32.replace(id="fp32-direct", conv_kernel="direct"),
                fp8, fp8.replace(id="fp8-e4-direct", conv_kernel="direct"), registry.get("bf16")]
    same = {}
    for a in profiles:
        for b in profiles:
            ab, ba = eqc_diff(mlp, x, a, b), eqc_diff(mlp, x, b, a)
            assert ab.same_eqc == ba.same_eqc
            assert ab.differing_logits == ba.differing_logits
            np.testing.assert_array_equal(ab.bit_flips, ba.bit_flips)
            same[a.id, b.id] = ab.same_eqc
    ids = [p.id for p in profiles]
    for a in ids:
        for b in ids:
            for c in ids:
                if same[a, b] and same[b, c]:
                    assert same[a, c]
    assert same["fp32", "fp32-direct"] and same["fp8-e4", "fp8-e4-direct"]
    assert not same["fp32", "fp8-e4"]
