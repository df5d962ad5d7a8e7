use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{read_bytes, read_frame, read_labels, write_bytes, FrameReader};
use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, StreakFrame};
use crate::signal::{SamplingConfig, TimeSignal};
use crate::synth::SceneSpec;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileRole {
    Frame,
    Label,
    Template,
    Distance,
    Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub role: FileRole,
    pub crc32: u32,
}

/// How the generator's random streams were produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngInfo {
    pub algorithm: String,
    pub derivation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub total: usize,
    pub train: usize,
    pub val: usize,
    /// `SNKL` masks, `frames × rows_per_frame`.
    pub train_file: String,
    pub val_file: String,
}

/// Dataset index. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub sampling: SamplingConfig,
    pub scene: Option<SceneSpec>,
    pub rng: Option<RngInfo>,
    pub frames: usize,
    pub rows_per_frame: usize,
    /// `frames × rows_per_frame` `SNKL` ground-truth mask.
    pub labels_file: String,
    pub template_file: String,
    /// Optional `frames × rows_per_frame` `SNKF` of target distances, metres.
    pub distance_file: Option<String>,
    /// Frame files in sample order.
    pub frame_files: Vec<String>,
    pub files: Vec<FileEntry>,
    pub splits: SplitInfo,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn total_samples(&self) -> usize {
        self.frames * self.rows_per_frame
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join(MANIFEST_NAME), self.to_json()?.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let bytes = read_bytes(&path)?;
        let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::Malformed {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                path,
                version: m.version,
            });
        }
        Ok(m)
    }
}

/// Split counts `⌊total·ratio⌋`; sample indices are shuffled with `seed`,
/// the first `train` go to training and the next `val` to validation.
pub fn assign_splits(total: usize, train_ratio: f64, val_ratio: f64, seed: u64) -> Result<(Vec<u8>, Vec<u8>)> {
    let ok = |r: f64| r.is_finite() && (0.0..=1.0).contains(&r);
    if !ok(train_ratio) || !ok(val_ratio) || train_ratio + val_ratio > 1.0 {
        return Err(Error::Config(format!(
            "split ratios ({train_ratio}, {val_ratio}) must be in [0, 1] and sum to at most 1"
        )));
    }
    let n_train = (total as f64 * train_ratio).floor() as usize;
    let n_val = (total as f64 * val_ratio).floor() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = vec![0u8; total];
    let mut val = vec![0u8; total];
    for &i in &order[..n_train] {
        train[i] = 1;
    }
    for &i in &order[n_train..n_train + n_val] {
        val[i] = 1;
    }
    Ok((train, val))
}

/// CRC32 of a whole file, streamed.
pub fn file_crc32(path: &Path) -> Result<u32> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = crc32fast::Hasher::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Ok(hasher.finalize());
        }
        hasher.update(&buf[..n]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Val,
    /// Every sample, for test imaging.
    All,
    /// Every sample outside the training split.
    Holdout,
}

impl std::str::FromStr for SplitRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitRole::Train),
            "val" => Ok(SplitRole::Val),
            "all" | "test" => Ok(SplitRole::All),
            "holdout" => Ok(SplitRole::Holdout),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleRef {
    pub frame: usize,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub at: SampleRef,
    pub signal: TimeSignal,
    pub label: u8,
}

/// A verified dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    dir: PathBuf,
    manifest: Manifest,
    labels: BinaryMask,
    train: BinaryMask,
    val: BinaryMask,
}

impl Dataset {
    /// Reads the manifest and checks every listed file's CRC32.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = Manifest::read(&dir)?;
        manifest.sampling.validate()?;
        for entry in &manifest.files {
            let path = dir.join(&entry.path);
            let computed = file_crc32(&path)?;
            if computed != entry.crc32 {
                return Err(Error::Checksum {
                    path,
                    stored: entry.crc32,
                    computed,
                });
            }
        }
        let shape = (manifest.frames, manifest.rows_per_frame);
        let load_mask = |name: &str| -> Result<BinaryMask> {
            let path = dir.join(name);
            let m = read_labels(&path)?;
            if m.shape() != shape {
                return Err(Error::Malformed {
                    path,
                    reason: format!("mask shape {:?}, manifest says {shape:?}", m.shape()),
                });
            }
            Ok(m)
        };
        let labels = load_mask(&manifest.labels_file)?;
        let train = load_mask(&manifest.splits.train_file)?;
        let val = load_mask(&manifest.splits.val_file)?;
        if manifest.frame_files.len() != manifest.frames {
            return Err(Error::Malformed {
                path: dir.join(MANIFEST_NAME),
                reason: "frame file count does not match frames".into(),
            });
        }
        if train.count_ones() != manifest.splits.train || val.count_ones() != manifest.splits.val {
            return Err(Error::Malformed {
                path: dir.join(MANIFEST_NAME),
                reason: "split masks disagree with recorded counts".into(),
            });
        }
        Ok(Self {
            dir,
            manifest,
            labels,
            train,
            val,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn sampling(&self) -> &SamplingConfig {
        &self.manifest.sampling
    }

    /// Ground truth, `frames × rows_per_frame`.
    pub fn labels(&self) -> &BinaryMask {
        &self.labels
    }

    pub fn template(&self) -> Result<TimeSignal> {
        let f = read_frame(self.dir.join(&self.manifest.template_file))?;
        Ok(f.signal(0))
    }

    pub fn distances(&self) -> Result<Option<StreakFrame>> {
        self.manifest
            .distance_file
            .as_ref()
            .map(|p| read_frame(self.dir.join(p)))
            .transpose()
    }

    pub fn frame_path(&self, frame: usize) -> PathBuf {
        self.dir.join(&self.manifest.frame_files[frame])
    }

    pub fn read_frame(&self, frame: usize) -> Result<StreakFrame> {
        if frame >= self.manifest.frames {
            return Err(Error::InvalidArgument(format!("frame {frame} out of range")));
        }
        read_frame(self.frame_path(frame))
    }

    /// Sample positions of a split in manifest (frame-major) order.
    pub fn samples(&self, role: SplitRole) -> Vec<SampleRef> {
        let mut out = Vec::new();
        for frame in 0..self.manifest.frames {
            for row in 0..self.manifest.rows_per_frame {
                let keep = match role {
                    SplitRole::Train => self.train.get(frame, row) == 1,
                    SplitRole::Val => self.val.get(frame, row) == 1,
                    SplitRole::All => true,
                    SplitRole::Holdout => self.train.get(frame, row) == 0,
                };
                if keep {
                    out.push(SampleRef { frame, row });
                }
            }
        }
        out
    }

    /// Split positions in a seeded random order.
    pub fn shuffled(&self, role: SplitRole, seed: u64) -> Vec<SampleRef> {
        let mut s = self.samples(role);
        s.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        s
    }

    /// Streams the given positions; only one frame file is open at a time
    /// and rows are read individually.
    pub fn stream(&self, refs: Vec<SampleRef>) -> SampleStream<'_> {
        SampleStream {
            ds: self,
            refs: refs.into_iter(),
            reader: None,
        }
    }

    /// [`Dataset::stream`] over a split in manifest order.
    pub fn load_split(&self, role: SplitRole) -> SampleStream<'_> {
        self.stream(self.samples(role))
    }
}

pub struct SampleStream<'a> {
    ds: &'a Dataset,
    refs: std::vec::IntoIter<SampleRef>,
    reader: Option<(usize, FrameReader)>,
}

impl SampleStream<'_> {
    fn next_sample(&mut self, at: SampleRef) -> Result<Sample> {
        if self.reader.as_ref().map(|(f, _)| *f) != Some(at.frame) {
            let reader = FrameReader::open(self.ds.frame_path(at.frame))?;
            if reader.rows() != self.ds.manifest.rows_per_frame
                || reader.cols() != self.ds.manifest.sampling.n_samples
            {
                return Err(Error::Malformed {
                    path: self.ds.frame_path(at.frame),
                    reason: "frame shape disagrees with manifest".into(),
                });
            }
            self.reader = Some((at.frame, reader));
        }
        let (_, reader) = self.reader.as_mut().expect("reader just set");
        let row = reader.read_row(at.row)?;
        Ok(Sample {
            at,
            signal: TimeSignal::new(row.into_iter().map(f64::from).collect())?,
            label: self.ds.labels.get(at.frame, at.row),
        })
    }
}

impl Iterator for SampleStream<'_> {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        let at = self.refs.next()?;
        Some(self.next_sample(at))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.refs.size_hint()
    }
}
