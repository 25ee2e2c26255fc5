"""Phase-wise stream construction: ingestion, splits, windows and synthetic regimes."""
from .dataset import Example, PhaseDataset, StreamConfigError, make_phase, stack_examples
from .idx import IdxFormatError, load_idx_images, read_idx, rotate_dataset, rotate_images, write_idx
from .scenarios import (DEFAULT_SCENARIOS, SCENARIOS, DataMissingError, StreamSpec, build_stream,
                        scenario, schedule)
from .splits import DIGIT_PAIRS, hash_groups, split_group, split_label_pairs, split_time
from .synth import synth_drift, synth_pairs
from .tabular import (CsvFormatError, Schema, Vocabulary, encode_features, load_csv_table,
                      make_windows, zscore)


def synth_stream(spec: StreamSpec):
    if spec.dataset != "synth":
        raise StreamConfigError(f"synth_stream needs a synth spec, got {spec.dataset!r}")
    return build_stream(spec)
