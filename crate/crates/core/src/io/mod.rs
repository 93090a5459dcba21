//! Annotation parsers, result documents, binary containers and file helpers.

mod annotations;
mod audio;
mod binary;
mod files;
mod result;

pub use annotations::{
    decode_utf8, format_beat_annotation, format_segment_annotation, parse_beat_annotation, parse_segment_annotation, MergeTable, FALLBACK_LABEL, LEAD_IN_LABEL,
};
pub use audio::{load_stem_dir, read_wav_mono};
pub use binary::{
    decode_spectrogram, decode_weights, encode_spectrogram, encode_weights, SPECTROGRAM_MAGIC, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};
pub use files::{parse_config_file, write_atomic};
pub use result::{serialize_result, ActivationsDoc, ResultDocument, SegmentDoc, SCHEMA_VERSION};
