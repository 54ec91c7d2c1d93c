mod audio;
mod ingest;
mod manifest;
mod spectro;
mod synth;

pub use audio::{read_wav, segment_recording, wav_bytes, write_wav, AudioClip};
pub use ingest::{ingest, load_annotations, scan_clip_files, RecordingStore};
pub use manifest::{
    build_manifest, clip_id, parse_clip_id, read_jsonl, validate_manifest, write_jsonl, AlignedLine, Annotations,
    ClipRecord, Instrument,
};
pub use spectro::{
    compute_mel_spectrogram, hz_to_mel, mel_center_hz, mel_to_hz, MelAnalyzer, MelSpectrogram, SpectroConfig,
};
pub use synth::{
    composition_id, generate_synthetic_corpus, key_name, SyntheticCorpus, SyntheticCorpusSpec, SyntheticRecording,
    FAMILIES, NOTE_NAMES,
};
