//! JSON-lines clip manifest: a header line, then one record per clip.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{io, Tensor};

pub const SCHEMA: &str = "listenlab-manifest";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Real,
    Jitter,
    Decorr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Real, Method::Jitter, Method::Decorr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Real => "real",
            Method::Jitter => "jitter",
            Method::Decorr => "decorr",
        }
    }

    pub fn label(self) -> u8 {
        u8::from(self != Method::Real)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Validation {
                field: "method",
                msg: format!("unknown method `{s}`"),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Validation {
                field: "split",
                msg: format!("unknown split `{s}`"),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipManifestRecord {
    pub id: String,
    pub video_path: String,
    pub audio_path: String,
    pub label: u8,
    pub method: Method,
    pub duration_s: f64,
    pub split: Split,
}

impl ClipManifestRecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation {
                field: "id",
                msg: "empty clip id".into(),
            });
        }
        if self.label > 1 {
            return Err(Error::Validation {
                field: "label",
                msg: format!("label {} is not 0 or 1", self.label),
            });
        }
        if (self.label == 0) != (self.method == Method::Real) {
            return Err(Error::Validation {
                field: "label",
                msg: format!("label {} inconsistent with method {}", self.label, self.method),
            });
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Validation {
                field: "duration_s",
                msg: format!("duration {} must be positive", self.duration_s),
            });
        }
        Ok(())
    }
}

/// Generation-time separability statistics, keyed by method name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub clips: BTreeMap<String, usize>,
    /// Mean Σ‖ℳ‖² of the raw frames.
    pub mean_motion_energy: BTreeMap<String, f64>,
    /// Fraction of reactions whose onset trails the latest preceding audio
    /// event by exactly the configured latency.
    pub lag_match_rate: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<SynthStats>,
}

impl ManifestHeader {
    pub fn new(seed: u64) -> Self {
        ManifestHeader {
            schema: SCHEMA.into(),
            version: 1,
            seed,
            stats: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub header: Option<ManifestHeader>,
    pub records: Vec<ClipManifestRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    video_path: String,
    audio_path: String,
    label: i64,
    method: String,
    duration_s: f64,
    split: String,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        let mut first = true;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            let is_header = value.get("schema").is_some();
            if is_header {
                if !first {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "header must be the first line".into(),
                    });
                }
                let h: ManifestHeader = serde_json::from_value(value).map_err(|e| Error::Parse {
                    line: lineno,
                    msg: e.to_string(),
                })?;
                if h.schema != SCHEMA || h.version != 1 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unsupported manifest schema {} v{}", h.schema, h.version),
                    });
                }
                header = Some(h);
                first = false;
                continue;
            }
            first = false;
            let raw: RawRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            let label = u8::try_from(raw.label).ok().filter(|l| *l <= 1).ok_or_else(|| Error::Validation {
                field: "label",
                msg: format!("line {lineno}: label {} is not 0 or 1", raw.label),
            })?;
            let with_line = |e: Error| match e {
                Error::Validation { field, msg } => Error::Validation {
                    field,
                    msg: format!("line {lineno}: {msg}"),
                },
                other => other,
            };
            let record = ClipManifestRecord {
                method: raw.method.parse().map_err(with_line)?,
                split: raw.split.parse().map_err(with_line)?,
                id: raw.id,
                video_path: raw.video_path,
                audio_path: raw.audio_path,
                label,
                duration_s: raw.duration_s,
            };
            record.validate().map_err(with_line)?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::Validation {
                    field: "id",
                    msg: format!("line {lineno}: duplicate clip id `{}`", record.id),
                });
            }
            records.push(record);
        }
        Ok(Manifest { header, records })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out += &serde_json::to_string(h).expect("header serializes");
            out.push('\n');
        }
        for r in &self.records {
            out += &serde_json::to_string(r).expect("record serializes");
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> Vec<&ClipManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn find(&self, id: &str) -> Option<&ClipManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<ClipManifestRecord>> {
    Ok(Manifest::load(path)?.records)
}

/// A clip's media, loaded for scoring or training.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub method: Method,
    pub label: u8,
    /// `(T, C, H, W)`.
    pub video: Tensor<f32>,
    /// `(T_a, d_raw)`.
    pub audio: Tensor<f32>,
}

fn resolve(root: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

/// Reads a clip's tensors; media paths are relative to `root`.
pub fn load_sample(root: &Path, record: &ClipManifestRecord) -> Result<Sample> {
    let read = |rel: &str| -> Result<Tensor<f32>> {
        io::load(&resolve(root, rel)).map_err(|e| match e {
            Error::Io { path, source } => Error::Io {
                path: PathBuf::from(format!("clip {}: {}", record.id, path.display())),
                source,
            },
            other => other,
        })
    };
    Ok(Sample {
        id: record.id.clone(),
        method: record.method,
        label: record.label,
        video: read(&record.video_path)?,
        audio: read(&record.audio_path)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, method: Method) -> ClipManifestRecord {
        ClipManifestRecord {
            id: id.into(),
            video_path: format!("media/{id}.video.mtns"),
            audio_path: format!("media/{id}.audio.mtns"),
            label: method.label(),
            method,
            duration_s: 2.0,
            split: Split::Train,
        }
    }

    #[test]
    fn empty_file_is_empty_list() {
        let m = Manifest::parse("").unwrap();
        assert!(m.records.is_empty() && m.header.is_none());
    }

    #[test]
    fn round_trip() {
        let m = Manifest {
            header: Some(ManifestHeader::new(7)),
            records: vec![record("a", Method::Real), record("b", Method::Jitter), record("c", Method::Decorr)],
        };
        let text = m.to_jsonl();
        assert!(text.starts_with(r#"{"schema":"listenlab-manifest","version":1,"seed":7}"#));
        assert_eq!(Manifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn violations_name_the_field() {
        let mut bad = record("x", Method::Jitter);
        bad.label = 0;
        let line = serde_json::to_string(&bad).unwrap();
        assert!(matches!(Manifest::parse(&line), Err(Error::Validation { field: "label", .. })));

        let mut bad = record("x", Method::Real);
        bad.duration_s = 0.0;
        let line = serde_json::to_string(&bad).unwrap();
        assert!(matches!(Manifest::parse(&line), Err(Error::Validation { field: "duration_s", .. })));

        let line = serde_json::to_string(&record("x", Method::Real)).unwrap().replace("\"real\"", "\"deepfake\"");
        assert!(matches!(Manifest::parse(&line), Err(Error::Validation { field: "method", .. })));

        let line = serde_json::to_string(&record("x", Method::Real)).unwrap().replace("\"label\":0", "\"label\":3");
        assert!(matches!(Manifest::parse(&line), Err(Error::Validation { field: "label", .. })));

        let one = serde_json::to_string(&record("x", Method::Real)).unwrap();
        assert!(matches!(
            Manifest::parse(&format!("{one}\n{one}")),
            Err(Error::Validation { field: "id", .. })
        ));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let ok = serde_json::to_string(&record("a", Method::Real)).unwrap();
        let header = serde_json::to_string(&ManifestHeader::new(1)).unwrap();
        let err = Manifest::parse(&format!("{header}\n{ok}\n{{not json")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = Manifest::parse(&format!("{ok}\n{header}")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = Manifest::parse(r#"{"id":"a"}"#).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn missing_media_names_the_clip() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_sample(dir.path(), &record("clip-42", Method::Real)).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("clip-42"));
    }
}
