//! Episode capture at 30 Hz and the on-disk episode format.
//!
//! ```text
//! <episode_id>/
//!   meta.json
//!   states.jsonl        one FrameRecord per line
//!   cam_base/000000.png
//!   cam_wrist/000000.png
//! ```
//!
//! Episodes are written under a hidden `.<id>.partial` directory and renamed
//! into place once `meta.json` exists.

pub mod episode;
pub mod export;
pub mod session;

use std::path::PathBuf;

pub use episode::{list_episodes, load_episode, Episode, EpisodeMeta, EpisodeWriter, FrameRecord, Truncation};
pub use export::{export, read_table, table_header, ExportManifest, ExportSchema};
pub use session::{EpisodeOutcome, RecorderConfig, RecorderTask, DEFAULT_MAX_FRAMES, RECORD_RATE_HZ};

#[derive(Debug, thiserror::Error)]
pub enum RecorderError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("integrity error in {file}{}: {reason}", frame.map(|f| format!(" (frame {f})")).unwrap_or_default())]
    Integrity {
        file: PathBuf,
        frame: Option<u64>,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("episodes recorded at different rates {0:?}; pass allow-mixed to export anyway")]
    MixedRates(Vec<f64>),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
