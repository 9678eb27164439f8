from .formats import (FormatError, OfflineSample, OnlineSample, parse_gnt, parse_pot,
                      read_gnt_record, read_pot_record, serialize_gnt, serialize_pot)
from .manifest import DatasetManifest, ManifestEntry
from .synth import ClassGrammar, WriterStyle, random_style, synth_generate

__all__ = [
    "FormatError", "OfflineSample", "OnlineSample", "parse_gnt", "parse_pot", "read_gnt_record",
    "read_pot_record", "serialize_gnt", "serialize_pot", "DatasetManifest", "ManifestEntry",
    "ClassGrammar", "WriterStyle", "random_style", "synth_generate",
]
