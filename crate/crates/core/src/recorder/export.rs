use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::episode::{load_episode, Episode, BASE_DIR, WRIST_DIR};
use super::RecorderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportSchema {
    /// The native episode layout, copied verbatim.
    Canonical,
    /// One flat CSV per episode plus its images.
    Table,
}

impl std::str::FromStr for ExportSchema {
    type Err = RecorderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(Self::Canonical),
            "table" => Ok(Self::Table),
            other => Err(RecorderError::Invalid(format!("unknown export schema {other:?}"))),
        }
    }
}

/// Column names of a table export, in order.
pub fn table_header() -> Vec<String> {
    let mut h = vec!["index".to_owned(), "t_ms".to_owned()];
    h.extend((0..7).map(|i| format!("state_{i}")));
    h.extend((0..7).map(|i| format!("action_{i}")));
    h.extend(["image_base", "image_wrist", "prompt"].map(String::from));
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub schema: ExportSchema,
    pub record_rate_hz: Vec<f64>,
    pub episodes: Vec<ExportedEpisode>,
    pub total_frames: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedEpisode {
    pub episode_id: String,
    pub frames: u64,
    /// Relative to the export directory.
    pub path: String,
}

fn copy_dir(src: &Path, dst: &Path) -> Result<(), RecorderError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| RecorderError::Io { path: p, source: e }
    };
    fs::create_dir_all(dst).map_err(io(dst))?;
    for entry in fs::read_dir(src).map_err(io(src))? {
        let entry = entry.map_err(io(src))?;
        let from = entry.path();
        let to = dst.join(entry.file_name());
        if from.is_dir() {
            copy_dir(&from, &to)?;
        } else {
            fs::copy(&from, &to).map_err(io(&from))?;
        }
    }
    Ok(())
}

fn write_table(ep: &Episode, out: &Path) -> Result<PathBuf, RecorderError> {
    let id = &ep.meta.episode_id;
    let csv_path = out.join(format!("{id}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(table_header())?;
    for f in &ep.frames {
        let mut row = vec![f.index.to_string(), f.t_ms.to_string()];
        // `Display` for f64 prints the shortest string that parses back to
        // the same value, so the export is lossless.
        row.extend(f.state.iter().map(f64::to_string));
        row.extend(f.action.iter().map(f64::to_string));
        row.push(format!("{id}/{}", f.image_base()));
        row.push(format!("{id}/{}", f.image_wrist()));
        row.push(f.prompt.clone());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| RecorderError::Io {
        path: csv_path.clone(),
        source: e,
    })?;
    for d in [BASE_DIR, WRIST_DIR] {
        copy_dir(&ep.dir.join(d), &out.join(id).join(d))?;
    }
    Ok(csv_path)
}

/// Verify and export episodes into `out`. Episodes recorded at different
/// rates are refused unless `allow_mixed`.
pub fn export(
    episodes: &[PathBuf],
    out: &Path,
    schema: ExportSchema,
    allow_mixed: bool,
) -> Result<ExportManifest, RecorderError> {
    let loaded = episodes
        .iter()
        .map(|p| load_episode(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rates: Vec<f64> = Vec::new();
    for ep in &loaded {
        if !rates.contains(&ep.meta.record_rate_hz) {
            rates.push(ep.meta.record_rate_hz);
        }
    }
    if rates.len() > 1 && !allow_mixed {
        return Err(RecorderError::MixedRates(rates));
    }
    fs::create_dir_all(out).map_err(|e| RecorderError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut exported = Vec::new();
    for ep in &loaded {
        let id = ep.meta.episode_id.clone();
        let path = match schema {
            ExportSchema::Canonical => {
                copy_dir(&ep.dir, &out.join(&id))?;
                id.clone()
            }
            ExportSchema::Table => {
                write_table(ep, out)?;
                format!("{id}.csv")
            }
        };
        exported.push(ExportedEpisode {
            episode_id: id,
            frames: ep.meta.frame_count,
            path,
        });
    }
    let manifest = ExportManifest {
        schema,
        record_rate_hz: rates,
        total_frames: exported.iter().map(|e| e.frames).sum(),
        episodes: exported,
    };
    let mp = out.join("manifest.json");
    fs::write(&mp, serde_json::to_string_pretty(&manifest)?).map_err(|e| RecorderError::Io { path: mp, source: e })?;
    Ok(manifest)
}

/// One table row's state and action columns.
pub type StateAction = ([f64; 7], [f64; 7]);

/// Read the state and action columns back from a table export.
pub fn read_table(csv_path: &Path) -> Result<Vec<StateAction>, RecorderError> {
    let mut r = csv::Reader::from_path(csv_path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64, RecorderError> {
            rec.get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| RecorderError::Integrity {
                    file: csv_path.to_path_buf(),
                    frame: Some(i as u64),
                    reason: format!("column {c} is not a number"),
                })
        };
        let mut s = [0.0; 7];
        let mut a = [0.0; 7];
        for j in 0..7 {
            s[j] = num(2 + j)?;
            a[j] = num(9 + j)?;
        }
        out.push((s, a));
    }
    Ok(out)
}
