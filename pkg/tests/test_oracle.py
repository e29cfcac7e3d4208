from __future__ import annotations

import asyncio
import socket
import struct
import warnings

import numpy as np
import pytest

from hspi.errors import ConfigError, ProtocolError, UsageError
from hspi.oracle import protocol
from hspi.oracle.client import RemoteOracle, parse_address
from hspi.oracle.defense import InputNoise, LogitBitFlip, NoDefense, parse_defense
from hspi.oracle.local import LocalOracle, QueryResponse
from hspi.oracle.server import OracleConfig, load_oracle_config


def _bits(a):
    return np.asarray(a, dtype=np.float32).view(np.uint32)


# ═══════════════════════════════════════════════════════════════
# Local oracle
# ═══════════════════════════════════════════════════════════════

def test_local_oracle_is_a_pure_function(mlp, registry, rng):
    oracle = LocalOracle(mlp, registry.get("bf16"))
    x = rng.random((5,) + mlp.input_shape)
    a, b = oracle.query(x), oracle.query(x)
    np.testing.assert_array_equal(_bits(a.logits), _bits(b.logits))
    np.testing.assert_array_equal(a.labels, np.argmax(a.logits, axis=1))
    assert a.served_batch_size == 5


def test_label_only_mode(mlp, registry, rng):
    x = rng.random((4,) + mlp.input_shape)
    full = LocalOracle(mlp, registry.get("fp16")).query(x)
    labels = LocalOracle(mlp, registry.get("fp16"), "label-only").query(x)
    assert labels.logits is None
    np.testing.assert_array_equal(labels.labels, full.labels)


def test_info(mlp, registry):
    info = LocalOracle(mlp, registry.get("int8").replace(batch_group=4), max_batch=64).info()
    assert (info.profile_id, info.input_shape, info.num_classes) == ("int8", (4, 1, 1), 2)
    assert (info.batch_group, info.max_batch, info.defense) == (4, 64, "none")


@pytest.mark.parametrize("shape,code,status", [
    ((3, 4, 1, 1), "batch-too-large", 413),
    ((2, 5, 1, 1), "shape-mismatch", 400),
    ((4, 1, 1), "shape-mismatch", 400),
])
def test_query_errors(mlp, fp32, shape, code, status):
    oracle = LocalOracle(mlp, fp32, max_batch=2)
    with pytest.raises(ProtocolError) as info:
        oracle.query(np.zeros(shape))
    assert (info.value.code, info.value.status) == (code, status)


def test_non_finite_input(mlp, fp32):
    x = np.zeros((1,) + mlp.input_shape)
    x[0, 0] = np.nan
    with pytest.raises(ProtocolError) as info:
        LocalOracle(mlp, fp32).query(x)
    assert info.value.code == "bad-input"


# ═══════════════════════════════════════════════════════════════
# Defenses
# ═══════════════════════════════════════════════════════════════

def test_bitflip_touches_only_low_bits(rng):
    logits = rng.normal(size=(50, 3)).astype(np.float32)
    logits[0, 0] = np.inf
    out = LogitBitFlip(1.0, bits=8).perturb_logits(logits, rng)
    xor = _bits(out) ^ _bits(logits)
    assert xor[0, 0] == 0
    finite = np.isfinite(logits)
    assert (xor[finite] == 0xFF).all()


def test_bitflip_with_zero_probability_is_identity(rng):
    logits = rng.normal(size=(10, 3)).astype(np.float32)
    np.testing.assert_array_equal(_bits(LogitBitFlip(0.0).perturb_logits(logits, rng)), _bits(logits))


def test_defended_oracle_changes_logits(mlp, fp32, rng):
    x = rng.random((20,) + mlp.input_shape)
    clean = LocalOracle(mlp, fp32).query(x)
    noisy = LocalOracle(mlp, fp32, defense=LogitBitFlip(0.5), seed=3).query(x)
    assert (_bits(clean.logits) != _bits(noisy.logits)).any()
    again = LocalOracle(mlp, fp32, defense=LogitBitFlip(0.5), seed=3).query(x)
    np.testing.assert_array_equal(_bits(noisy.logits), _bits(again.logits))


def test_input_noise_stays_in_range(rng):
    x = rng.random((4, 3))
    y = InputNoise(0.5).perturb_inputs(x, rng)
    assert y.min() >= 0.0 and y.max() <= 1.0
    assert not np.array_equal(x, y)


def test_parse_defense():
    assert isinstance(parse_defense("none"), NoDefense)
    assert parse_defense("logit-bitflip:p=0.1,bits=4").name == "logit-bitflip:p=0.1,bits=4"
    assert parse_defense("input-noise:sigma=0.01").name == "input-noise:sigma=0.01"
    for bad in ("logit-bitflip", "logit-bitflip:p=2", "logit-bitflip:p=0.1,bits=30", "jpeg:q=50", "none:x=1"):
        with pytest.raises(UsageError):
            parse_defense(bad)


# ═══════════════════════════════════════════════════════════════
# Wire format
# ═══════════════════════════════════════════════════════════════

def test_frame_header_layout():
    frame = protocol.pack_frame(protocol.OP_QUERY, b"abc")
    assert frame[:4] == b"HSPI"
    assert frame[4:6] == bytes([1, 3])
    assert struct.unpack("<I", frame[6:10]) == (3,)
    assert protocol.unpack_header(frame[:10], 100) == (protocol.OP_QUERY, 3)


@pytest.mark.parametrize("frame,code,status", [
    (b"XXXX" + bytes([1, 1]) + b"\0\0\0\0", "bad-magic", 400),
    (protocol.pack_frame(protocol.OP_HELLO, version=2), "version-mismatch", 426),
    (protocol.pack_frame(protocol.OP_QUERY, b"x" * 101), "message-too-large", 413),
])
def test_header_errors(frame, code, status):
    with pytest.raises(ProtocolError) as info:
        protocol.unpack_header(frame[:10], 100)
    assert (info.value.code, info.value.status) == (code, status)


def test_read_frame_async():
    async def run():
        reader = asyncio.StreamReader()
        reader.feed_data(protocol.pack_frame(protocol.OP_QUERY, b"payload"))
        reader.feed_eof()
        return await protocol.read_frame(reader, 1024)

    assert asyncio.run(run()) == (protocol.OP_QUERY, b"payload")


def test_result_keeps_nan_payload_bits():
    bits = np.array([[0x7FC00001, 0x3F800000]], dtype=np.uint32)
    resp = QueryResponse(labels=np.array([1]), logits=bits.view(np.float32), served_batch_size=1)
    back = protocol.decode_result(protocol.encode_result(resp))
    np.testing.assert_array_equal(_bits(back.logits), bits)
    np.testing.assert_array_equal(back.labels, [1])


def test_label_only_result_has_no_logit_block():
    resp = QueryResponse(labels=np.array([2, 0]), logits=None, served_batch_size=2)
    payload = protocol.encode_result(resp)
    assert len(payload) == 13 + 8
    assert protocol.decode_result(payload).logits is None


def test_malformed_payloads():
    with pytest.raises(ProtocolError) as info:
        protocol.decode_query(protocol.encode_query(np.zeros((1, 2))) + b"\0")
    assert info.value.code == "malformed-payload"
    with pytest.raises(ProtocolError):
        protocol.decode_query(b"\x02\x01\x00")


def test_error_frame():
    err = protocol.decode_error(protocol.encode_error(ProtocolError("batch-too-large", "9 > 8", 413)))
    assert (err.code, err.message, err.status) == ("batch-too-large", "9 > 8", 413)


# ═══════════════════════════════════════════════════════════════
# Network service
# ═══════════════════════════════════════════════════════════════

def test_remote_matches_local_bit_for_bit(served, rng):
    oracle, port = served
    x = rng.random((7,) + oracle.model.input_shape)
    with RemoteOracle("127.0.0.1", port) as remote:
        assert remote.info() == oracle.info()
        got = remote.query(x)
    want = oracle.query(x)
    np.testing.assert_array_equal(_bits(got.logits), _bits(want.logits))
    np.testing.assert_array_equal(got.labels, want.labels)
    assert got.served_batch_size == 7


def test_request_error_keeps_connection(served, rng):
    oracle, port = served
    with RemoteOracle("127.0.0.1", port) as remote:
        with pytest.raises(ProtocolError) as info:
            remote.query(np.zeros((1, 9)))
        assert info.value.code == "shape-mismatch"
        assert remote.query(rng.random((2,) + oracle.model.input_shape)).labels.shape == (2,)


def test_version_mismatch_closes_connection(served):
    _, port = served
    with socket.create_connection(("127.0.0.1", port), timeout=10) as sock:
        sock.sendall(protocol.pack_frame(protocol.OP_HELLO, version=9))
        opcode, payload = protocol.recv_frame(sock, 1 << 20)
        assert opcode == protocol.OP_ERROR
        err = protocol.decode_error(payload)
        assert (err.code, err.status) == ("version-mismatch", 426)
        assert sock.recv(1) == b""


def test_parse_address():
    assert parse_address("localhost:7700") == ("localhost", 7700)
    assert parse_address("[::1]:80") == ("::1", 80)
    with pytest.raises(UsageError):
        parse_address("localhost")


def test_oracle_config(tmp_path):
    cfg = tmp_path / "oracle.cfg"
    cfg.write_text("model = m.w\nregistry = r.cfg\nprofile = fp16\nport = 7801\n")
    config = load_oracle_config(cfg)
    assert config.model_path == tmp_path / "m.w"
    assert (config.profile_id, config.port, config.defense) == ("fp16", 7801, "none")

    cfg.write_text("model = m.w\nregistry = r.cfg\nprofile = fp16\nthreads = 4\n")
    with pytest.raises(ConfigError) as info:
        load_oracle_config(cfg)
    assert (info.value.code, info.value.line) == ("unknown-field", 4)


def test_bitflip_keeps_labels_over_repeats(mlp, fp32, rng):
    x = rng.random((20,) + mlp.input_shape)
    clean = LocalOracle(mlp, fp32).query(x).labels
    defended = LocalOracle(mlp, fp32, defense=LogitBitFlip(0.05), seed=11)
    agree = np.mean([defended.query(x).labels == clean for _ in range(100)])
    assert agree >= 0.95


def test_query_dims_that_overflow_are_rejected():
    payload = struct.pack("<B3I", 3, 2**31, 2**31, 2**31) + b"\0" * 16
    with pytest.raises(ProtocolError) as info:
        protocol.decode_query(payload)
    assert (info.value.code, info.value.status) == ("malformed-payload", 400)


def test_query_shape_must_match_payload_size():
    payload = protocol.encode_query(np.zeros((2, 3)))
    with pytest.raises(ProtocolError) as info:
        protocol.decode_query(payload[:-8])
    assert info.value.code == "malformed-payload"
    np.testing.assert_array_equal(protocol.decode_query(payload), np.zeros((2, 3)))


def test_failed_handshake_closes_the_socket(monkeypatch):
    ours, theirs = socket.socketpair()
    theirs.sendall(b"XXXX" + bytes([1, protocol.OP_INFO]) + b"\0\0\0\0")
    monkeypatch.setattr(socket, "create_connection", lambda *a, **kw: ours)
    with pytest.raises(ProtocolError) as info:
        RemoteOracle("127.0.0.1", 1)
    assert info.value.code == "bad-magic"
    assert ours.fileno() == -1
    theirs.close()


def test_oracle_config_allows_model_fields():
    assert OracleConfig.model_config["protected_namespaces"] == ()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cfg = OracleConfig(model_path="m.w", registry_path="r.cfg", profile_id="fp16")
    assert cfg.model_path.name == "m.w"


@pytest.mark.slow
def test_server_answers_a_thousand_queries(served, rng):
    oracle, port = served
    x = rng.random((4,) + oracle.model.input_shape)
    want = _bits(oracle.query(x).logits)
    with RemoteOracle("127.0.0.1", port) as remote:
        for _ in range(1000):
            np.testing.assert_array_equal(_bits(remote.query(x).logits), want)
