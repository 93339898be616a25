"""Mutation fuzzer for the byte-level parsers.

Each target gets seeds from the corpus plus a few hand-picked streams, and
inputs are derived by random byte mutations. Archive targets also mutate
the JSON member and re-wrap it in a valid ZIP, so mutations reach the
config walkers instead of dying at the CRC check.

A crash is any exception outside the target's documented error types; a
hang is an input that uses more than the per-input CPU budget.

Run ``python -m loadscan.fuzz --help`` for options.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import pickle
import random
import signal
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from loadscan.archive import ArchiveError, read_entry, read_inventory
from loadscan.corpus import CorpusCase, ZipEntrySpec, gen_artifact, sv3_pickle, write_zip_stored
from loadscan.keras_analysis import parse_keras_archive
from loadscan.pickle_analysis import disassemble
from loadscan.policy import default_policy
from loadscan.report import AnalyzerError
from loadscan.scanner import scan_bytes
from loadscan.skops_analysis import parse_skops_archive
from loadscan.sniffer import sniff

MAX_INPUT = 64 * 1024
DEFAULT_TIMEOUT = 1.0
EXPECTED_ERRORS: tuple[type[BaseException], ...] = (AnalyzerError, ArchiveError)


class InputTimeout(Exception):
    pass


@dataclass(frozen=True)
class Target:
    name: str
    run: Callable[[bytes], object]
    member: str | None = None  # JSON entry to mutate and re-wrap for archive targets


def _scan(data: bytes) -> object:
    return scan_bytes(data, "fuzz.skops", default_policy())


TARGETS: dict[str, Target] = {
    "sniff": Target("sniff", sniff),
    "disassemble": Target("disassemble", disassemble),
    "parse_keras_archive": Target("parse_keras_archive", parse_keras_archive, "config.json"),
    "parse_skops_archive": Target("parse_skops_archive", parse_skops_archive, "schema.json"),
    "scan": Target("scan", _scan),
}


def seeds() -> list[bytes]:
    """Corpus artifacts plus pickles at every protocol."""
    out = [gen_artifact(case)[1] for case in CorpusCase]
    payload = {"a": [1, 2.5, None, True], "b": (b"x", "y"), "c": {frozenset({3}), 4}}
    out += [pickle.dumps(payload, protocol=p) for p in range(6)]
    out += [sv3_pickle(), b"cos\nsystem\n(S'ls'\ntR.", b"{}", b"\x08\x96\x01\x12\x02hi"]
    return out


def _members(data: bytes, name: str) -> bytes | None:
    try:
        inv = read_inventory(data)
        entry = inv.get(name)
        return read_entry(data, entry) if entry else None
    except ArchiveError:
        return None


def mutate(rng: random.Random, data: bytes, pool: list[bytes]) -> bytes:
    buf = bytearray(data)
    for _ in range(rng.randint(1, 8)):
        choice = rng.randrange(8)
        pos = rng.randrange(len(buf) + 1)
        if choice == 0 and buf:
            i = rng.randrange(len(buf))
            buf[i] ^= 1 << rng.randrange(8)
        elif choice == 1 and buf:
            buf[rng.randrange(len(buf))] = rng.choice((0x00, 0xFF, 0x7F, 0x80, rng.randrange(256)))
        elif choice == 2:
            buf[pos:pos] = bytes(rng.randrange(256) for _ in range(rng.randint(1, 16)))
        elif choice == 3 and buf:
            del buf[pos : pos + rng.randint(1, 32)]
        elif choice == 4:
            del buf[pos:]
        elif choice == 5 and buf:
            start = rng.randrange(len(buf))
            chunk = buf[start : start + rng.randint(1, 64)]
            buf[pos:pos] = chunk * rng.randint(1, 8)
        elif choice == 6:
            other = rng.choice(pool)
            start = rng.randrange(len(other) + 1)
            buf[pos:pos] = other[start : start + rng.randint(1, 128)]
        else:
            token = rng.choice((b"[", b"{", b'"', b"\\u", b"\x80\x05", b"(", b"PK\x05\x06", b"\x89HDF\r\n\x1a\n",
                                b'"__loader__":"MethodNode"', b'"class_name":"Lambda"', b"9" * 40))
            buf[pos:pos] = token * rng.randint(1, 64)
    return bytes(buf[:MAX_INPUT])


def _with_timeout(fn: Callable[[bytes], object], data: bytes, seconds: float) -> None:
    def alarm(signum, frame):
        raise InputTimeout()

    previous = signal.signal(signal.SIGPROF, alarm)
    signal.setitimer(signal.ITIMER_PROF, seconds)
    try:
        fn(data)
    finally:
        signal.setitimer(signal.ITIMER_PROF, 0)
        signal.signal(signal.SIGPROF, previous)


@dataclass
class FuzzResult:
    target: str
    iterations: int = 0
    seconds: float = 0.0
    crashes: list[dict] = field(default_factory=list)
    hangs: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.crashes and not self.hangs

    def to_dict(self) -> dict:
        return {"target": self.target, "iterations": self.iterations, "seconds": round(self.seconds, 3),
                "crashes": self.crashes, "hangs": self.hangs, "ok": self.ok}


def fuzz(target_name: str, seconds: float, seed: int = 0, timeout: float = DEFAULT_TIMEOUT,
         max_iterations: int | None = None, crash_dir: Path | None = None) -> FuzzResult:
    """Fuzz one target for ``seconds`` (or ``max_iterations``) and collect failures.

    Must run on the main thread: the per-input budget uses ``SIGPROF``.
    """
    target = TARGETS[target_name]
    rng = random.Random(seed)
    pool = seeds()
    members = [m for m in (_members(s, target.member) for s in pool) if m] if target.member else []
    result = FuzzResult(target_name)
    start = time.monotonic()
    deadline = start + seconds
    while time.monotonic() < deadline and (max_iterations is None or result.iterations < max_iterations):
        if members and rng.random() < 0.5:
            inner = mutate(rng, rng.choice(members), members)
            data = write_zip_stored([ZipEntrySpec(target.member, inner)])
        else:
            data = mutate(rng, rng.choice(pool), pool)
        result.iterations += 1
        try:
            _with_timeout(target.run, data, timeout)
        except EXPECTED_ERRORS:
            pass
        except InputTimeout:
            result.hangs.append(_record(data, "timeout", crash_dir, target_name))
        except Exception:
            result.crashes.append(_record(data, traceback.format_exc(limit=4), crash_dir, target_name))
    result.seconds = time.monotonic() - start
    return result


def _record(data: bytes, detail: str, crash_dir: Path | None, target: str) -> dict:
    digest = hashlib.sha256(data).hexdigest()[:16]
    if crash_dir is not None:
        crash_dir.mkdir(parents=True, exist_ok=True)
        (crash_dir / f"{target}-{digest}.bin").write_bytes(data)
    return {"sha256_16": digest, "size": len(data), "detail": detail}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="python -m loadscan.fuzz", description=__doc__.splitlines()[0])
    parser.add_argument("--target", choices=sorted(TARGETS), action="append",
                        help="target to fuzz (repeatable; default: all four parsers)")
    parser.add_argument("--seconds", type=float, default=60.0, help="wall-clock budget per target")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, help="CPU seconds per input")
    parser.add_argument("--crash-dir", type=Path, help="save failing inputs here")
    args = parser.parse_args(argv)
    names = args.target or ["sniff", "disassemble", "parse_keras_archive", "parse_skops_archive"]
    results = [fuzz(n, args.seconds, args.seed, args.timeout, crash_dir=args.crash_dir) for n in names]
    json.dump([r.to_dict() for r in results], sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0 if all(r.ok for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
