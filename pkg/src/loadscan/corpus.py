"""Deterministic synthetic artifacts for exercising the scanner.

Every case is built from literal structures, so the same case id always
yields the same bytes. Malicious cases only carry the *shape* of known
attacks: bytecode payloads are synthetic blobs containing the telltale
identifiers, not marshalled code, and nothing here is ever executed.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from loadscan.rules import Label

DOS_DATE = 0x0021  # 1980-01-01
DOS_TIME = 0
H5_SIGNATURE = b"\x89HDF\r\n\x1a\n"
KERAS_VERSION = "3.12.1"
KERAS2_VERSION = "2.15.0"
SKOPS_VERSION = "0.10.0"


class CorpusCase(str, enum.Enum):
    KV1 = "kv1"
    KV2 = "kv2"
    KV3 = "kv3"
    SV1 = "sv1"
    SV2 = "sv2"
    SV3 = "sv3"
    BENIGN_LAMBDA_KERAS = "benign_lambda_keras"
    BENIGN_LAMBDA_H5 = "benign_lambda_h5"
    MALICIOUS_LAMBDA_KERAS = "malicious_lambda_keras"
    NO_LAMBDA_KERAS = "no_lambda_keras"
    NO_LAMBDA_H5 = "no_lambda_h5"
    # Variants pinning individual rule behaviors; not part of the matrix.
    SKOPS_TEXT_FALLBACK = "skops_text_fallback"
    SKOPS_ATTRGETTER = "skops_attrgetter"
    SKOPS_BENIGN_METHOD = "skops_benign_method"
    EMPTY_TREE_H5 = "empty_tree_h5"


@dataclass(frozen=True)
class CaseSpec:
    case: CorpusCase
    extension: str
    expected_label: Label
    required_rules: tuple[str, ...]
    description: str
    in_matrix: bool = True

    @property
    def filename(self) -> str:
        return f"{self.case.value}{self.extension}"


_U, _S, _C = Label.UNSAFE, Label.SUSPICIOUS, Label.CLEAN
SPECS: dict[CorpusCase, CaseSpec] = {s.case: s for s in [
    CaseSpec(CorpusCase.KV1, ".keras", _U, ("KERAS-UNTRUSTED-MODULE",),
             "layer object resolving to subprocess.run with /bin/sh passed via inbound_nodes"),
    CaseSpec(CorpusCase.KV2, ".keras", _U, ("KERAS-GADGET-REUSE",),
             "Lambda referencing the global-state setter to switch safe mode off"),
    CaseSpec(CorpusCase.KV3, ".h5", _U, ("KERAS-LAMBDA-BYTECODE-DANGEROUS", "KERAS-LEGACY-FORMAT"),
             "legacy HDF5 model whose Lambda bytecode spawns a shell (also the malicious-Lambda HDF5 baseline)"),
    CaseSpec(CorpusCase.SV1, ".skops", _U, ("SKOPS-ATTR-TRAVERSAL", "SKOPS-TYPE-MISMATCH"),
             "MethodNode chain reaching __builtins__ under a builtins.int disguise"),
    CaseSpec(CorpusCase.SV2, ".skops", _U, ("SKOPS-OPERATOR-SPOOF",),
             "OperatorFuncNode declaring sklearn.SGDRegressor but invoking operator.call"),
    CaseSpec(CorpusCase.SV3, ".skops", _U, ("SKOPS-JOBLIB-FALLBACK", "PICKLE-DANGEROUS-IMPORT"),
             "protocol-4 pickle calling os.system('/bin/sh'), saved under a .skops name"),
    CaseSpec(CorpusCase.BENIGN_LAMBDA_KERAS, ".keras", _S, ("KERAS-LAMBDA-BYTECODE",),
             "Lambda with harmless serialized bytecode"),
    CaseSpec(CorpusCase.BENIGN_LAMBDA_H5, ".h5", _S, ("KERAS-LAMBDA-BYTECODE", "KERAS-LEGACY-FORMAT"),
             "legacy HDF5 model with a harmless bytecode Lambda"),
    CaseSpec(CorpusCase.MALICIOUS_LAMBDA_KERAS, ".keras", _U, ("KERAS-LAMBDA-BYTECODE-DANGEROUS",),
             "Lambda whose serialized bytecode spawns a shell"),
    CaseSpec(CorpusCase.NO_LAMBDA_KERAS, ".keras", _C, (), "plain dense model"),
    CaseSpec(CorpusCase.NO_LAMBDA_H5, ".h5", _C, ("KERAS-LEGACY-FORMAT",), "plain dense model in legacy HDF5"),
    CaseSpec(CorpusCase.SKOPS_TEXT_FALLBACK, ".skops", _U, ("SKOPS-JOBLIB-FALLBACK",),
             "plain text under a .skops name", in_matrix=False),
    CaseSpec(CorpusCase.SKOPS_ATTRGETTER, ".skops", _U, ("SKOPS-OPERATOR-DANGEROUS",),
             "OperatorFuncNode for operator.attrgetter with an honest module", in_matrix=False),
    CaseSpec(CorpusCase.SKOPS_BENIGN_METHOD, ".skops", _C, (),
             "MethodNode calling transform on an object of the declared type", in_matrix=False),
    CaseSpec(CorpusCase.EMPTY_TREE_H5, ".h5", _C, ("KERAS-LEGACY-FORMAT",),
             "legacy HDF5 with an empty Sequential model", in_matrix=False),
]}
MATRIX_CASES: tuple[CorpusCase, ...] = tuple(c for c, s in SPECS.items() if s.in_matrix)


@dataclass(frozen=True)
class ZipEntrySpec:
    name: str
    data: bytes


def write_zip_stored(entries: list[ZipEntrySpec]) -> bytes:
    """Build a ZIP with uncompressed entries and a fixed 1980-01-01 timestamp.

    Raises:
        ValueError: two entries share a name.
    """
    names = [e.name for e in entries]
    if len(set(names)) != len(names):
        raise ValueError("duplicate entry names")
    body = bytearray()
    central = bytearray()
    for entry in entries:
        name = entry.name.encode("utf-8")
        crc = zlib.crc32(entry.data)
        size = len(entry.data)
        offset = len(body)
        body += struct.pack("<4s5H3L2H", b"PK\x03\x04", 20, 0x0800, 0, DOS_TIME, DOS_DATE,
                            crc, size, size, len(name), 0)
        body += name + entry.data
        central += struct.pack("<4s6H3L5H2L", b"PK\x01\x02", 20, 20, 0x0800, 0, DOS_TIME, DOS_DATE,
                               crc, size, size, len(name), 0, 0, 0, 0, 0, offset)
        central += name
    eocd = struct.pack("<4s4H2LH", b"PK\x05\x06", 0, 0, len(entries), len(entries),
                       len(central), len(body), 0)
    return bytes(body + central + eocd)


def emit_h5_like(config_document: bytes) -> bytes:
    """Wrap a model config in an HDF5-signed container.

    The result is not a conformant HDF5 file. It carries the signature, a
    zeroed superblock-sized region, then ``model_config`` immediately
    followed by the document, which is the layout the legacy locator
    recognizes.

    Raises:
        ValueError: the document is empty.
    """
    if not config_document:
        raise ValueError("config document is empty")
    out = bytearray(H5_SIGNATURE)
    out += b"\x00" * (96 - len(out))
    for key, value in ((b"keras_version", KERAS2_VERSION.encode()), (b"backend", b"tensorflow")):
        out += key + b"\x00" + value + b"\x00"
    out += b"model_config\x00"
    out += config_document + b"\x00"
    out += b"\x00" * (-len(out) % 8)
    return bytes(out)


# -- synthetic payloads ---------------------------------------------------------

BENIGN_BYTECODE = (
    b"LSCN-SYNTHETIC-CODE\x00"
    b"co_name=<lambda>;co_varnames=x;co_names=abs;"
    b"ops=LOAD_GLOBAL abs,LOAD_FAST x,CALL 1,RETURN_VALUE"
)
MALICIOUS_BYTECODE = (
    b"LSCN-SYNTHETIC-CODE\x00"
    b"co_name=<lambda>;co_varnames=x;co_names=os,system;co_consts=/bin/sh;"
    b"ops=IMPORT_NAME os,LOAD_ATTR system,LOAD_CONST /bin/sh,CALL 1,RETURN_VALUE"
)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def sv3_pickle() -> bytes:
    """Protocol-4 stream equivalent to ``os.system("/bin/sh")`` on load."""

    def text(s: str) -> bytes:
        raw = s.encode()
        return b"\x8c" + bytes([len(raw)]) + raw + b"\x94"

    body = text("os") + text("system") + b"\x93\x94" + text("/bin/sh") + b"\x85\x94" + b"R\x94" + b"."
    return b"\x80\x04\x95" + struct.pack("<Q", len(body)) + body


# -- Keras documents ------------------------------------------------------------


def _dtype() -> dict:
    return {"module": "keras", "class_name": "DTypePolicy", "config": {"name": "float32"},
            "registered_name": None}


def _input_layer() -> dict:
    return {"module": "keras.layers", "class_name": "InputLayer",
            "config": {"batch_shape": [None, 4], "dtype": "float32", "sparse": False, "name": "input_layer"},
            "registered_name": None, "name": "input_layer", "inbound_nodes": []}


def _inbound(source: str) -> list:
    return [{"args": [{"class_name": "__keras_tensor__",
                       "config": {"shape": [None, 4], "dtype": "float32", "keras_history": [source, 0, 0]}}],
             "kwargs": {}}]


def _dense(source: str) -> dict:
    return {"module": "keras.layers", "class_name": "Dense",
            "config": {"name": "dense", "trainable": True, "dtype": _dtype(), "units": 1,
                       "activation": "linear", "use_bias": True},
            "registered_name": None, "name": "dense", "inbound_nodes": _inbound(source)}


def _bytecode_lambda(payload: bytes) -> dict:
    function = {"module": "builtins", "class_name": "function",
                "config": {"code": _b64(payload), "defaults": None, "closure": None},
                "registered_name": "function"}
    return {"module": "keras.layers", "class_name": "Lambda",
            "config": {"name": "lambda", "trainable": True, "dtype": _dtype(), "function": function,
                       "arguments": {}},
            "registered_name": None, "name": "lambda", "inbound_nodes": _inbound("input_layer")}


def _kv1_layer() -> dict:
    return {"module": "subprocess", "class_name": "run", "config": {"name": "run"},
            "registered_name": None, "name": "run",
            "inbound_nodes": [{"args": ["/bin/sh"], "kwargs": {}}]}


def _kv2_layer() -> dict:
    return {"module": "keras.layers", "class_name": "Lambda",
            "config": {"name": "set_global_state",
                       "function": {"module": "keras.src.backend.common.global_state",
                                    "class_name": "function", "config": "set_global_attribute",
                                    "registered_name": "function"},
                       "arguments": {"value": False}},
            "name": "set_global_state",
            "inbound_nodes": [{"args": [], "kwargs": {"inputs": "safe_mode_saving"}}]}


def _functional(extra: list[dict]) -> dict:
    layers = [_input_layer(), *extra]
    last = layers[-1]["name"]
    return {"module": "keras", "class_name": "Functional",
            "config": {"name": "model", "trainable": True, "layers": layers,
                       "input_layers": [["input_layer", 0, 0]], "output_layers": [[last, 0, 0]]},
            "registered_name": "Functional", "build_config": {"input_shape": None}, "compile_config": None}


def _keras_archive(config: dict) -> bytes:
    metadata = {"keras_version": KERAS_VERSION, "date_saved": "1980-01-01@00:00:00"}
    return write_zip_stored([
        ZipEntrySpec("metadata.json", _dumps(metadata)),
        ZipEntrySpec("config.json", _dumps(config)),
        ZipEntrySpec("model.weights.h5", H5_SIGNATURE + b"\x00" * 56),
    ])


def _keras2_model(layers: list[dict]) -> dict:
    base = [{"class_name": "InputLayer",
             "config": {"batch_input_shape": [None, 4], "dtype": "float32", "sparse": False,
                        "name": "input_1"}}]
    return {"class_name": "Sequential", "config": {"name": "sequential", "layers": base + layers},
            "keras_version": KERAS2_VERSION, "backend": "tensorflow"}


def _keras2_lambda(payload: bytes) -> dict:
    return {"class_name": "Lambda",
            "config": {"name": "lambda", "trainable": True, "dtype": "float32",
                       "function": [_b64(payload), None, None], "function_type": "lambda",
                       "module": "__main__", "output_shape": None, "output_shape_type": "raw",
                       "output_shape_module": None, "arguments": {}}}


def _keras2_dense() -> dict:
    return {"class_name": "Dense",
            "config": {"name": "dense", "trainable": True, "dtype": "float32", "units": 1,
                       "activation": "linear", "use_bias": True}}


# -- Skops documents ------------------------------------------------------------


def _skops_archive(root: dict) -> bytes:
    schema = {**root, "protocol": 2, "_skops_version": SKOPS_VERSION}
    return write_zip_stored([ZipEntrySpec("schema.json", _dumps(schema))])


def _sv1_root() -> dict:
    qda = {"__class__": "QuadraticDiscriminantAnalysis", "__module__": "sklearn.discriminant_analysis",
           "__loader__": "ObjectNode", "__id__": 1}
    inner = {"__class__": "int", "__module__": "builtins", "__loader__": "MethodNode",
             "content": {"obj": qda, "func": "decision_function"}}
    return {"__class__": "int", "__module__": "builtins", "__loader__": "MethodNode",
            "content": {"obj": inner, "func": "__builtins__"}}


def _operator_root(class_name: str, module: str) -> dict:
    return {"__class__": class_name, "__module__": module, "__loader__": "OperatorFuncNode"}


def _benign_method_root() -> dict:
    scaler = {"__class__": "StandardScaler", "__module__": "sklearn.preprocessing",
              "__loader__": "ObjectNode", "__id__": 1, "content": {}}
    return {"__class__": "StandardScaler", "__module__": "sklearn.preprocessing", "__loader__": "MethodNode",
            "content": {"obj": scaler, "func": "transform"}}


def _dumps(obj: Any) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def gen_artifact(case: CorpusCase | str) -> tuple[str, bytes]:
    """Return ``(filename, bytes)`` for one corpus case."""
    case = CorpusCase(case)
    spec = SPECS[case]
    builders = {
        CorpusCase.KV1: lambda: _keras_archive(_functional([_kv1_layer()])),
        CorpusCase.KV2: lambda: _keras_archive(_functional([_kv2_layer()])),
        CorpusCase.KV3: lambda: emit_h5_like(_dumps(_keras2_model([_keras2_lambda(MALICIOUS_BYTECODE)]))),
        CorpusCase.SV1: lambda: _skops_archive(_sv1_root()),
        CorpusCase.SV2: lambda: _skops_archive(_operator_root("call", "sklearn.SGDRegressor")),
        CorpusCase.SV3: sv3_pickle,
        CorpusCase.BENIGN_LAMBDA_KERAS: lambda: _keras_archive(_functional([_bytecode_lambda(BENIGN_BYTECODE)])),
        CorpusCase.BENIGN_LAMBDA_H5: lambda: emit_h5_like(_dumps(_keras2_model([_keras2_lambda(BENIGN_BYTECODE)]))),
        CorpusCase.MALICIOUS_LAMBDA_KERAS:
            lambda: _keras_archive(_functional([_bytecode_lambda(MALICIOUS_BYTECODE)])),
        CorpusCase.NO_LAMBDA_KERAS: lambda: _keras_archive(_functional([_dense("input_layer")])),
        CorpusCase.NO_LAMBDA_H5: lambda: emit_h5_like(_dumps(_keras2_model([_keras2_dense()]))),
        CorpusCase.SKOPS_TEXT_FALLBACK: lambda: b"this is not a skops archive\n",
        CorpusCase.SKOPS_ATTRGETTER: lambda: _skops_archive(_operator_root("attrgetter", "operator")),
        CorpusCase.SKOPS_BENIGN_METHOD: lambda: _skops_archive(_benign_method_root()),
        CorpusCase.EMPTY_TREE_H5: lambda: emit_h5_like(_dumps(_keras2_model([]))),
    }
    return spec.filename, builders[case]()


def manifest(cases: list[CorpusCase] | None = None) -> dict:
    rows = []
    for case in cases or list(CorpusCase):
        spec = SPECS[case]
        name, data = gen_artifact(case)
        rows.append({
            "id": case.value,
            "file": name,
            "expected_label": spec.expected_label.value,
            "required_rules": list(spec.required_rules),
            "description": spec.description,
            "in_matrix": spec.in_matrix,
            "sha256": hashlib.sha256(data).hexdigest(),
        })
    return {"cases": rows}


def write_corpus(outdir: Path | str) -> Path:
    """Write every case plus ``manifest.json`` into ``outdir``; returns the manifest path."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for case in CorpusCase:
        name, data = gen_artifact(case)
        (out / name).write_bytes(data)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
