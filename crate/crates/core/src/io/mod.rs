//! Dataset ingestion, scenario synthesis, and model persistence.

mod model_file;
mod synth;
mod tracks;

pub use model_file::{
    load_model, report_digest, save_model, ModelFile, TrainingProvenance, MODEL_FORMAT_VERSION,
};
pub use synth::{example_params, synthesize, ScenarioSpec, Synthesized, TrackLatents, VehicleScript};
pub use tracks::{
    load_tracks, resample, AgentClass, RawRow, RawTrackTable, SchemaPreset, TARGET_HZ,
};
