//! Synthetic data, metrics, configuration and end-to-end orchestration.

mod ablation;
mod artifacts;
mod config;
mod pipeline;
mod metrics;
mod synth;

pub use config::{AugSettings, InputDirs, LabelCfg, PipelineConfig, SEED_ENV};
pub use metrics::{f1_score, f1_score_frames, F1Report, FrameScore};
pub use synth::{
    synth_background_views, synth_gesture_sequence, synth_test_sequence, trajectory_correlation, SynthCfg,
    SynthSequence, Variant,
};
pub use artifacts::{
    frame_name, image_from_blob, image_to_blob, label_from_blob, label_to_blob, list_files, read_image, read_image_dir,
    read_labels, stored_label, write_blob_dir, write_labels, write_png_dir, write_uncertainty,
};
pub use pipeline::{
    augment_cfg, boundary_band, build_dataset, corrupt_label, finalize_labels, gesture_examples_from_dirs, mc_rng, segment_frames, train_on_videos, gesture_training_examples, label_stacks, label_video, motion_cfg,
    obtain_gesture_net, pseudo_label_report, run_pipeline, run_pipeline_file, run_pipeline_in_memory, run_stage1,
    run_stage2, train_configured_gesture_net, train_gesture_on, training_labels, user_synth_cfg, Dataset, PipelineReport, Stage1, Stage2,
    Video, VideoLabels,
};
pub use ablation::{ablation_jsonl, ablation_runner, ablation_table, study_variants, AblationResult, Study};
