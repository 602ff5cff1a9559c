use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RecorderError;
use crate::devices::imaging::png_dimensions;

pub const META_FILE: &str = "meta.json";
pub const STATES_FILE: &str = "states.jsonl";
pub const BASE_DIR: &str = "cam_base";
pub const WRIST_DIR: &str = "cam_wrist";
pub const FORMAT_VERSION: u32 = 1;

pub fn image_name(index: u64) -> String {
    format!("{index:06}.png")
}

/// One line of `states.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: u64,
    /// Capture time of the frame (clock ms).
    pub t_ms: f64,
    /// Capture time of the paired camera images; never after `t_ms`.
    pub image_t_ms: f64,
    /// Follower joints plus gripper closure.
    pub state: [f64; 7],
    /// Calibrated leader command in effect at `t_ms`.
    pub action: [f64; 7],
    pub prompt: String,
}

impl FrameRecord {
    pub fn image_base(&self) -> String {
        format!("{BASE_DIR}/{}", image_name(self.index))
    }

    pub fn image_wrist(&self) -> String {
        format!("{WRIST_DIR}/{}", image_name(self.index))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub reason: String,
    /// Frames written before the episode was cut short.
    pub at_frame: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub format_version: u32,
    pub episode_id: String,
    pub prompt: String,
    pub record_rate_hz: f64,
    pub frame_count: u64,
    pub created_at: String,
    pub image_size: [u32; 2],
    #[serde(default)]
    pub seed: Option<u64>,
    /// Arm, gripper and task parameters in effect while recording.
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default)]
    pub truncation: Option<Truncation>,
}

impl EpisodeMeta {
    pub fn new(episode_id: impl Into<String>, prompt: impl Into<String>, record_rate_hz: f64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            episode_id: episode_id.into(),
            prompt: prompt.into(),
            record_rate_hz,
            frame_count: 0,
            created_at: chrono::Utc::now().to_rfc3339(),
            image_size: [224, 224],
            seed: None,
            config: serde_json::Value::Null,
            truncated: false,
            truncation: None,
        }
    }
}

fn partial_dir(root: &Path, id: &str) -> PathBuf {
    root.join(format!(".{id}.partial"))
}

fn io_err(path: &Path, e: std::io::Error) -> RecorderError {
    RecorderError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Writes one episode into a hidden `.<id>.partial` directory and renames
/// it into place only after `meta.json` is complete, so an interrupted
/// recording never looks like a finished episode. Dropping an unfinished
/// writer removes the partial directory.
#[derive(Debug)]
pub struct EpisodeWriter {
    root: PathBuf,
    id: String,
    tmp: PathBuf,
    states: Option<BufWriter<File>>,
    count: u64,
    last_t: Option<f64>,
    fail_at: Option<u64>,
}

impl EpisodeWriter {
    pub fn create(root: &Path, id: &str) -> Result<Self, RecorderError> {
        if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']) {
            return Err(RecorderError::Invalid(format!("bad episode id {id:?}")));
        }
        let fin = root.join(id);
        if fin.exists() {
            return Err(RecorderError::Invalid(format!("{} already exists", fin.display())));
        }
        let tmp = partial_dir(root, id);
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
        }
        for d in [BASE_DIR, WRIST_DIR] {
            let p = tmp.join(d);
            fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        let sp = tmp.join(STATES_FILE);
        let states = File::create(&sp).map_err(|e| io_err(&sp, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            id: id.to_owned(),
            tmp,
            states: Some(BufWriter::new(states)),
            count: 0,
            last_t: None,
            fail_at: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn frame_count(&self) -> u64 {
        self.count
    }

    pub fn partial_path(&self) -> &Path {
        &self.tmp
    }

    /// Make the append of frame `index` fail as if the disk had filled up.
    pub fn inject_write_failure(&mut self, index: u64) {
        self.fail_at = Some(index);
    }

    /// Append the next frame; `frame.index` must equal the current count.
    pub fn append(&mut self, frame: &FrameRecord, base_png: &[u8], wrist_png: &[u8]) -> Result<(), RecorderError> {
        if frame.index != self.count {
            return Err(RecorderError::Invalid(format!(
                "frame index {} out of sequence (expected {})",
                frame.index, self.count
            )));
        }
        if self.last_t.is_some_and(|t| frame.t_ms <= t) || !frame.t_ms.is_finite() {
            return Err(RecorderError::Invalid(format!("frame {} timestamp not increasing", frame.index)));
        }
        if frame.state.iter().chain(&frame.action).any(|v| !v.is_finite()) {
            return Err(RecorderError::Invalid(format!("frame {} has non-finite values", frame.index)));
        }
        if self.fail_at == Some(frame.index) {
            return Err(io_err(
                &self.tmp,
                std::io::Error::new(std::io::ErrorKind::StorageFull, "injected write failure"),
            ));
        }
        let name = image_name(frame.index);
        for (dir, bytes) in [(BASE_DIR, base_png), (WRIST_DIR, wrist_png)] {
            let p = self.tmp.join(dir).join(&name);
            fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        }
        let states = self.states.as_mut().expect("writer open");
        serde_json::to_writer(&mut *states, frame)?;
        states.write_all(b"\n").map_err(|e| io_err(&self.tmp, e))?;
        self.count += 1;
        self.last_t = Some(frame.t_ms);
        Ok(())
    }

    /// Write `meta.json` (with the real frame count) and move the episode
    /// into place.
    pub fn finish(mut self, mut meta: EpisodeMeta) -> Result<PathBuf, RecorderError> {
        meta.episode_id = self.id.clone();
        meta.frame_count = self.count;
        let mut states = self.states.take().expect("writer open");
        states.flush().map_err(|e| io_err(&self.tmp, e))?;
        states
            .into_inner()
            .map_err(|e| io_err(&self.tmp, e.into_error()))?
            .sync_all()
            .map_err(|e| io_err(&self.tmp, e))?;
        let mp = self.tmp.join(META_FILE);
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(&mp, text).map_err(|e| io_err(&mp, e))?;
        let fin = self.root.join(&self.id);
        fs::rename(&self.tmp, &fin).map_err(|e| io_err(&fin, e))?;
        // Nothing left to clean up.
        self.tmp = PathBuf::new();
        Ok(fin)
    }

    /// Discard the episode.
    pub fn abort(self) {}

    /// Leave the partial directory behind, as a killed process would.
    pub fn simulate_crash(mut self) -> PathBuf {
        let _ = self.states.take().map(|mut s| s.flush());
        std::mem::replace(&mut self.tmp, PathBuf::new())
    }
}

impl Drop for EpisodeWriter {
    fn drop(&mut self) {
        if !self.tmp.as_os_str().is_empty() && self.tmp.exists() {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

/// A verified episode.
#[derive(Debug, Clone)]
pub struct Episode {
    pub dir: PathBuf,
    pub meta: EpisodeMeta,
    pub frames: Vec<FrameRecord>,
}

impl Episode {
    pub fn image_path(&self, index: u64, wrist: bool) -> PathBuf {
        self.dir
            .join(if wrist { WRIST_DIR } else { BASE_DIR })
            .join(image_name(index))
    }

    pub fn read_image(&self, index: u64, wrist: bool) -> Result<Vec<u8>, RecorderError> {
        let p = self.image_path(index, wrist);
        fs::read(&p).map_err(|e| io_err(&p, e))
    }

    /// Actions in frame order.
    pub fn actions(&self) -> Vec<[f64; 7]> {
        self.frames.iter().map(|f| f.action).collect()
    }
}

fn integrity(file: &Path, frame: Option<u64>, reason: impl Into<String>) -> RecorderError {
    RecorderError::Integrity {
        file: file.to_path_buf(),
        frame,
        reason: reason.into(),
    }
}

fn png_header_dims(path: &Path) -> Option<(u32, u32)> {
    let mut head = [0u8; 24];
    File::open(path).ok()?.read_exact(&mut head).ok()?;
    png_dimensions(&head)
}

/// Load and verify an episode directory: meta present and parseable, one
/// well-formed state line per frame with consecutive indices and increasing
/// timestamps, and both images present with the recorded dimensions.
pub fn load_episode(dir: &Path) -> Result<Episode, RecorderError> {
    let mp = dir.join(META_FILE);
    let text = fs::read_to_string(&mp).map_err(|e| integrity(&mp, None, format!("unreadable: {e}")))?;
    let meta: EpisodeMeta = serde_json::from_str(&text).map_err(|e| integrity(&mp, None, e.to_string()))?;

    let sp = dir.join(STATES_FILE);
    let file = File::open(&sp).map_err(|e| integrity(&sp, None, format!("unreadable: {e}")))?;
    let mut frames = Vec::with_capacity(meta.frame_count as usize);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let i = i as u64;
        let line = line.map_err(|e| integrity(&sp, Some(i), e.to_string()))?;
        let f: FrameRecord = serde_json::from_str(&line).map_err(|e| integrity(&sp, Some(i), e.to_string()))?;
        if f.index != i {
            return Err(integrity(&sp, Some(i), format!("index {} on line {i}", f.index)));
        }
        if let Some(prev) = frames.last().map(|p: &FrameRecord| p.t_ms) {
            if f.t_ms <= prev {
                return Err(integrity(&sp, Some(i), "timestamp not increasing"));
            }
        }
        if f.image_t_ms > f.t_ms {
            return Err(integrity(&sp, Some(i), "image captured after the frame"));
        }
        if f.state.iter().chain(&f.action).any(|v| !v.is_finite()) {
            return Err(integrity(&sp, Some(i), "non-finite state or action"));
        }
        frames.push(f);
    }
    if frames.len() as u64 != meta.frame_count {
        return Err(integrity(
            &mp,
            None,
            format!("frame_count {} but {} frames stored", meta.frame_count, frames.len()),
        ));
    }
    let want = (meta.image_size[0], meta.image_size[1]);
    for f in &frames {
        for dir_name in [BASE_DIR, WRIST_DIR] {
            let p = dir.join(dir_name).join(image_name(f.index));
            match png_header_dims(&p) {
                Some(d) if d == want => {}
                Some(d) => return Err(integrity(&p, Some(f.index), format!("image is {}x{}", d.0, d.1))),
                None => return Err(integrity(&p, Some(f.index), "missing or not a PNG")),
            }
        }
    }
    Ok(Episode {
        dir: dir.to_path_buf(),
        meta,
        frames,
    })
}

/// Complete episode directories directly under `root`, sorted by name.
/// Hidden partial directories are skipped.
pub fn list_episodes(root: &Path) -> Result<Vec<PathBuf>, RecorderError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| io_err(root, e))? {
        let entry = entry.map_err(|e| io_err(root, e))?;
        let p = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if !hidden && p.is_dir() && p.join(META_FILE).is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
