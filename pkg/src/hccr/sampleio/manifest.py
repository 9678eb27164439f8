"""Dataset manifests: which record of which file belongs to which split.

One entry per line, tab separated::

    path <TAB> offset <TAB> code-hex <TAB> writer <TAB> split

A leading ``# vocab`` line freezes the code -> class index mapping so that
splits missing some classes still agree on indices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

SPLITS = ("train", "test", "adapt")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    offset: int
    code: bytes
    writer_id: int
    split: str


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    vocab: dict = field(default_factory=dict)  # code bytes -> dense class index

    @classmethod
    def build(cls, entries, vocab_codes=None):
        """Build a manifest; with an explicit vocabulary, unknown codes are rejected."""
        entries = list(entries)
        for e in entries:
            if e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r}")
        if vocab_codes is None:
            vocab_codes = sorted({e.code for e in entries})
        vocab = {}
        for code in vocab_codes:
            if code in vocab:
                raise ValueError(f"duplicate vocabulary code {code.hex()}")
            vocab[code] = len(vocab)
        for e in entries:
            if e.code not in vocab:
                raise ValueError(f"{e.path}@{e.offset}: code {e.code.hex()} not in vocabulary")
        return cls(entries, vocab)

    @property
    def num_classes(self) -> int:
        return len(self.vocab)

    def label_of(self, code: bytes) -> int:
        return self.vocab[code]

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def writers(self, split: str | None = None) -> list:
        return sorted({e.writer_id for e in self.entries if split is None or e.split == split})

    def dumps(self) -> str:
        codes = sorted(self.vocab, key=self.vocab.get)
        lines = ["# vocab " + " ".join(c.hex() for c in codes)]
        for e in self.entries:
            lines.append(f"{e.path}\t{e.offset}\t{e.code.hex()}\t{e.writer_id}\t{e.split}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str):
        vocab_codes, entries = None, []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            if line.startswith("# vocab"):
                vocab_codes = [bytes.fromhex(h) for h in line[len("# vocab"):].split()]
                continue
            if line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"manifest line {lineno}: expected 5 fields, got {len(parts)}")
            path, offset, code, writer, split = parts
            entries.append(ManifestEntry(path, int(offset), bytes.fromhex(code), int(writer), split))
        return cls.build(entries, vocab_codes)

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text())
