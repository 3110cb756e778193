use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::{bicubic_downscale, decode_png, load_png, modcrop, quantize, save_png, ImagePair};
use crate::error::{Error, Result};

/// Identifier of the degradation used to make LR images.
pub const BICUBIC_KERNEL: &str = "bicubic-a0.5-antialias";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    /// HR file relative to the manifest root, `/`-separated.
    pub path: String,
    pub width: usize,
    pub height: usize,
    /// Hex SHA-256 of the HR file bytes.
    pub sha256: String,
    /// Pre-generated 8-bit LR file relative to the manifest file's directory.
    pub lr_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Degradation {
    pub scale: usize,
    pub kernel: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ImageEntry>,
    pub degradation: Degradation,
    pub shuffle_seed: u64,
    /// Directory the manifest was loaded from; relative LR paths resolve here.
    #[serde(skip)]
    pub base: PathBuf,
}

/// A file that could not be ingested, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestIssue {
    pub path: PathBuf,
    pub reason: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_png(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Builds an LR image by modcrop, bicubic downscale and 8-bit quantization.
pub fn degrade(hr: &crate::Tensor<f32>, scale: usize) -> Result<(crate::Tensor<f32>, crate::Tensor<f32>)> {
    let hr = modcrop(hr, scale)?;
    let lr = quantize(&bicubic_downscale(&hr, scale)?);
    Ok((hr, lr))
}

/// Scans `dir` for PNGs in sorted path order, hashes them and writes 8-bit
/// LR counterparts under `out/lr_x{scale}/`. Unreadable files are reported
/// and skipped.
pub fn ingest(dir: &Path, scale: usize, out: &Path, seed: u64) -> Result<(DatasetManifest, Vec<IngestIssue>)> {
    if !(1..=8).contains(&scale) {
        return Err(Error::Dataset(format!("scale must be in 1..=8, got {scale}")));
    }
    let root = fs::canonicalize(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in WalkDir::new(&root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Dataset(format!("scanning {}: {e}", root.display())))?;
        if entry.file_type().is_file() && is_png(entry.path()) {
            files.push(entry.into_path());
        }
    }
    if files.is_empty() {
        return Err(Error::Dataset(format!("no images found in {}", root.display())));
    }
    let lr_dir = format!("lr_x{scale}");
    let mut entries = Vec::new();
    let mut issues = Vec::new();
    for file in files {
        let rel = file
            .strip_prefix(&root)
            .expect("walked under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let bytes = match fs::read(&file) {
            Ok(b) => b,
            Err(e) => {
                issues.push(IngestIssue {
                    path: file,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let hr = match decode_png::<f32>(&bytes, &file) {
            Ok(t) => t,
            Err(e) => {
                issues.push(IngestIssue {
                    path: file,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let s = hr.shape();
        if s.h < scale || s.w < scale {
            issues.push(IngestIssue {
                path: file,
                reason: format!("{}x{} is smaller than the scale factor", s.h, s.w),
            });
            continue;
        }
        let (_, lr) = degrade(&hr, scale)?;
        let lr_rel = format!("{lr_dir}/{rel}");
        let lr_file = out.join(&lr_rel);
        if let Some(parent) = lr_file.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        save_png(&lr, &lr_file)?;
        entries.push(ImageEntry {
            path: rel,
            width: s.w,
            height: s.h,
            sha256: sha256_hex(&bytes),
            lr_path: Some(lr_rel),
        });
    }
    if entries.is_empty() {
        return Err(Error::Dataset(format!("no readable images in {}", root.display())));
    }
    let manifest = DatasetManifest {
        root,
        entries,
        degradation: Degradation {
            scale,
            kernel: BICUBIC_KERNEL.to_string(),
        },
        shuffle_seed: seed,
        base: out.to_path_buf(),
    };
    Ok((manifest, issues))
}

impl DatasetManifest {
    pub fn scale(&self) -> usize {
        self.degradation.scale
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        if m.degradation.kernel != BICUBIC_KERNEL {
            return Err(Error::Dataset(format!("unknown degradation kernel {:?}", m.degradation.kernel)));
        }
        if m.entries.is_empty() {
            return Err(Error::Dataset(format!("{}: manifest has no entries", path.display())));
        }
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    /// Loads every pair, verifying HR hashes. LR comes from the pre-generated
    /// file when present, otherwise it is produced on the fly.
    pub fn load_pairs(&self) -> Result<Vec<ImagePair<f32>>> {
        let scale = self.scale();
        self.entries
            .iter()
            .map(|e| {
                let path = self.root.join(&e.path);
                let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
                let hash = sha256_hex(&bytes);
                if hash != e.sha256 {
                    return Err(Error::Dataset(format!(
                        "{}: content hash {hash} does not match manifest {}",
                        e.path, e.sha256
                    )));
                }
                let (hr, lr) = degrade(&decode_png(&bytes, &path)?, scale)?;
                let lr = match &e.lr_path {
                    Some(p) => load_png(self.base.join(p))?,
                    None => lr,
                };
                ImagePair::new(e.path.clone(), hr, lr, scale)
                    .map_err(|err| Error::Dataset(format!("{}: {err}", e.path)))
            })
            .collect()
    }
}
