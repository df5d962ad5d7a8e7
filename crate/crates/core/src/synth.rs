//! Deterministic synthetic streak frames.
//!
//! Each row is `echo + scatter + white noise`. Echo rows carry the template
//! burst delayed by the target's round trip and scaled by the water response
//! at the carrier and the target's reflectivity. Scatter is Gaussian noise
//! whose amplitude spectrum is `(1 − M(f)/max M) / sqrt(1 + (f/f_corner)²)`,
//! so it is weakest where water passes modulation best. White noise power is
//! set from `snr_db` relative to the mean echo power over the burst.
//!
//! Random numbers: ChaCha8 seeded with `seed_from_u64(seed)`; row `r` of
//! frame `f` uses stream `(f << 32) | r`, target layout uses stream
//! `u64::MAX`. Uniforms are `(next_u64 >> 11)·2⁻⁵³`; normals come from
//! Box-Muller pairs `sqrt(−2 ln(1−u1))·cos(2π u2)` and `·sin(2π u2)`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, StreakFrame};
use crate::io::{
    assign_splits, file_crc32, write_frame, write_labels, FileEntry, FileRole, Manifest, RngInfo,
    SplitInfo, MANIFEST_VERSION,
};
use crate::signal::{m_function, MFunctionParams, SamplingConfig, TimeSignal, LIGHT_SPEED};

pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.3), seed_from_u64(seed)";
pub const RNG_DERIVATION: &str = "row stream (frame << 32) | row; target layout stream 2^64-1; \
uniform (u64 >> 11) * 2^-53; normal Box-Muller sqrt(-2 ln(1-u1)) * (cos, sin)(2 pi u2)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub row: usize,
    /// One-way distance, metres.
    pub distance: f64,
    /// Echo amplitude multiplier.
    pub reflectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n_frames: usize,
    pub rows_per_frame: usize,
    /// Per frame, sorted by row, at most one target per row.
    pub targets: Vec<Vec<Target>>,
    pub carrier_freq: f64,
    pub k_pulses: u32,
    pub snr_db: f64,
    /// Scatter RMS relative to the echo RMS over its burst.
    pub scatter_strength: f64,
    pub scatter_corner_hz: f64,
    /// Echo peak amplitude before the water response and reflectivity.
    pub echo_amplitude: f64,
    pub water: MFunctionParams,
    pub seed: u64,
}

/// Parameters of the procedural disk scene used by the built-in profiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskLayout {
    /// Disk radius as a fraction of the row count.
    pub radius: f64,
    pub distance: f64,
    /// Uniform distance jitter half-width, metres.
    pub distance_jitter: f64,
    pub reflectivity: (f64, f64),
}

impl Default for DiskLayout {
    fn default() -> Self {
        Self {
            radius: 0.35,
            distance: 20.0,
            distance_jitter: 0.02,
            reflectivity: (0.3, 1.2),
        }
    }
}

/// Named dataset sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 8 frames × 256 rows.
    Mini,
    /// 8 frames × 2048 rows.
    Full,
}

impl Profile {
    pub fn rows(self) -> usize {
        match self {
            Profile::Mini => 256,
            Profile::Full => 2048,
        }
    }

    pub fn frames(self) -> usize {
        8
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mini" => Ok(Profile::Mini),
            "full" => Ok(Profile::Full),
            other => Err(Error::InvalidArgument(format!("unknown profile {other:?}"))),
        }
    }
}

/// Sampling config whose gate puts a target at `distance` `lead` seconds
/// into the window.
pub fn gated_sampling(distance: f64, lead: f64) -> SamplingConfig {
    let mut cfg = SamplingConfig::default();
    cfg.gate_delay = 2.0 * distance / cfg.medium_speed() - lead;
    cfg
}

struct Uniform(ChaCha8Rng);

impl Uniform {
    fn stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }

    fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next();
        let u2 = self.next();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        (r * c, r * s)
    }
}

impl SceneSpec {
    /// A disk swept across the frames: frame `i` sees the chord of a circle
    /// centred on the middle frame and row.
    pub fn disk(profile: Profile, snr_db: f64, scatter_strength: f64, seed: u64, layout: DiskLayout) -> Self {
        Self::disk_sized(profile.frames(), profile.rows(), snr_db, scatter_strength, seed, layout)
    }

    pub fn disk_sized(
        n_frames: usize,
        rows: usize,
        snr_db: f64,
        scatter_strength: f64,
        seed: u64,
        layout: DiskLayout,
    ) -> Self {
        let mut rng = Uniform::stream(seed, u64::MAX);
        let r_rows = layout.radius * rows as f64;
        let mid_f = (n_frames as f64 - 1.0) / 2.0;
        let half_span = (n_frames as f64 / 2.0).max(1.0);
        let targets = (0..n_frames)
            .map(|f| {
                let x = (f as f64 - mid_f) / half_span;
                let h = r_rows * (1.0 - x * x).max(0.0).sqrt();
                let centre = rows as f64 / 2.0;
                (0..rows)
                    .filter(|&r| (r as f64 + 0.5 - centre).abs() <= h)
                    .map(|row| Target {
                        row,
                        distance: layout.distance + rng.range(-layout.distance_jitter, layout.distance_jitter),
                        reflectivity: rng.range(layout.reflectivity.0, layout.reflectivity.1),
                    })
                    .collect()
            })
            .collect();
        Self {
            n_frames,
            rows_per_frame: rows,
            targets,
            carrier_freq: 500e6,
            k_pulses: 4,
            snr_db,
            scatter_strength,
            scatter_corner_hz: 150e6,
            echo_amplitude: 0.02,
            water: MFunctionParams::default(),
            seed,
        }
    }

    pub fn burst_duration(&self) -> f64 {
        self.k_pulses as f64 / self.carrier_freq
    }

    /// Round-trip delay inside the window for a target at `distance`.
    pub fn delay(&self, distance: f64, cfg: &SamplingConfig) -> f64 {
        2.0 * distance * cfg.refractive_index / LIGHT_SPEED - cfg.gate_delay
    }

    pub fn validate(&self, cfg: &SamplingConfig) -> Result<()> {
        cfg.validate()?;
        self.water.validate()?;
        if self.k_pulses == 0 {
            return Err(Error::Config("k_pulses must be >= 1".into()));
        }
        if !(self.carrier_freq > 0.0 && self.carrier_freq < cfg.sample_rate() / 2.0) {
            return Err(Error::Config(format!(
                "carrier {} Hz must be below Nyquist {} Hz",
                self.carrier_freq,
                cfg.sample_rate() / 2.0
            )));
        }
        if !self.snr_db.is_finite() || !(self.scatter_strength >= 0.0) || !(self.echo_amplitude > 0.0) {
            return Err(Error::Config("snr_db, scatter_strength and echo_amplitude are invalid".into()));
        }
        if !(self.scatter_corner_hz > 0.0) {
            return Err(Error::Config("scatter corner must be positive".into()));
        }
        if self.targets.len() != self.n_frames {
            return Err(Error::Config(format!(
                "{} target lists for {} frames",
                self.targets.len(),
                self.n_frames
            )));
        }
        for (f, list) in self.targets.iter().enumerate() {
            let mut prev = None;
            for t in list {
                if t.row >= self.rows_per_frame || prev.is_some_and(|p| p >= t.row) {
                    return Err(Error::Config(format!(
                        "frame {f}: target rows must be unique, sorted and below {}",
                        self.rows_per_frame
                    )));
                }
                prev = Some(t.row);
                let tau = self.delay(t.distance, cfg);
                if !(tau >= 0.0 && tau + self.burst_duration() <= cfg.t_full) {
                    return Err(Error::Config(format!(
                        "frame {f} row {}: distance {} m puts the echo outside the window",
                        t.row, t.distance
                    )));
                }
                if !(t.reflectivity.is_finite() && t.reflectivity >= 0.0) {
                    return Err(Error::Config("reflectivity must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Echo peak amplitude at unit reflectivity.
    pub fn carrier_amplitude(&self) -> Result<f64> {
        Ok(self.echo_amplitude * m_function(self.carrier_freq, &self.water)?)
    }

    pub fn white_noise_sigma(&self) -> Result<f64> {
        let a = self.carrier_amplitude()?;
        Ok((a * a / 2.0 / 10f64.powf(self.snr_db / 10.0)).sqrt())
    }

    pub fn positive_count(&self) -> usize {
        self.targets.iter().map(Vec::len).sum()
    }
}

/// `K` periods of the carrier sinusoid from t = 0, zero afterwards, with
/// the amplitude of a noiseless unit-reflectivity echo.
pub fn make_template(spec: &SceneSpec, cfg: &SamplingConfig) -> Result<TimeSignal> {
    spec.validate(cfg)?;
    let fs = cfg.sample_rate();
    let a = spec.carrier_amplitude()?;
    TimeSignal::new((0..cfg.n_samples).map(|i| a * burst(spec, i as f64 / fs)).collect())
}

fn burst(spec: &SceneSpec, t: f64) -> f64 {
    if (0.0..spec.burst_duration()).contains(&t) {
        (2.0 * PI * spec.carrier_freq * t).sin()
    } else {
        0.0
    }
}

/// Frequency-domain scatter synthesis shared by all rows of a frame set.
struct ScatterShaper {
    len: usize,
    amplitude: Vec<f64>,
    ifft: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl ScatterShaper {
    fn new(spec: &SceneSpec, cfg: &SamplingConfig) -> Result<Self> {
        let len = (4 * cfg.n_samples).next_power_of_two();
        let fs = cfg.sample_rate();
        let half = len / 2;
        let m: Vec<f64> = (0..=half)
            .map(|k| {
                if k == 0 {
                    Ok(1.0)
                } else {
                    m_function(k as f64 * fs / len as f64, &spec.water)
                }
            })
            .collect::<Result<_>>()?;
        let m_max = m.iter().cloned().fold(0.0, f64::max);
        let amplitude: Vec<f64> = (0..=half)
            .map(|k| {
                let f = k as f64 * fs / len as f64;
                (1.0 - m[k] / m_max) / (1.0 + (f / spec.scatter_corner_hz).powi(2)).sqrt()
            })
            .collect();
        // Variance of the real output for unit-variance bin draws.
        let var = amplitude[0].powi(2)
            + amplitude[half].powi(2)
            + 2.0 * amplitude[1..half].iter().map(|a| a * a).sum::<f64>();
        let rms = spec.scatter_strength * spec.carrier_amplitude()? / 2f64.sqrt();
        let scale = if var > 0.0 { rms / var.sqrt() } else { 0.0 };
        Ok(Self {
            len,
            amplitude,
            ifft: FftPlanner::new().plan_fft_inverse(len),
            scale,
        })
    }

    fn sample(&self, rng: &mut Uniform, n: usize) -> Vec<f64> {
        let half = self.len / 2;
        let mut x = vec![Complex64::default(); self.len];
        for k in 0..=half {
            let (g1, g2) = rng.normal_pair();
            let a = self.amplitude[k];
            x[k] = if k == 0 || k == half {
                Complex64::new(a * g1, 0.0)
            } else {
                Complex64::new(a * g1, a * g2) * std::f64::consts::FRAC_1_SQRT_2
            };
        }
        for k in 1..half {
            x[self.len - k] = x[k].conj();
        }
        self.ifft.process(&mut x);
        x[..n].iter().map(|c| c.re * self.scale).collect()
    }
}

/// Per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub mask: Vec<u8>,
    /// Target distance per row, 0 where there is no target.
    pub distance: Vec<f64>,
}

struct Generator<'a> {
    spec: &'a SceneSpec,
    cfg: &'a SamplingConfig,
    scatter: Option<ScatterShaper>,
    sigma: f64,
    amplitude: f64,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a SceneSpec, cfg: &'a SamplingConfig) -> Result<Self> {
        spec.validate(cfg)?;
        let scatter = if spec.scatter_strength > 0.0 {
            Some(ScatterShaper::new(spec, cfg)?)
        } else {
            None
        };
        Ok(Self {
            spec,
            cfg,
            scatter,
            sigma: spec.white_noise_sigma()?,
            amplitude: spec.carrier_amplitude()?,
        })
    }

    fn row(&self, frame: usize, row: usize, target: Option<&Target>) -> Vec<f32> {
        let n = self.cfg.n_samples;
        let fs = self.cfg.sample_rate();
        let mut rng = Uniform::stream(self.spec.seed, ((frame as u64) << 32) | row as u64);
        let mut v = match &self.scatter {
            Some(s) => s.sample(&mut rng, n),
            None => vec![0.0; n],
        };
        for pair in v.chunks_mut(2) {
            let (g1, g2) = rng.normal_pair();
            pair[0] += self.sigma * g1;
            if let Some(x) = pair.get_mut(1) {
                *x += self.sigma * g2;
            }
        }
        if let Some(t) = target {
            let tau = self.spec.delay(t.distance, self.cfg);
            let a = self.amplitude * t.reflectivity;
            let first = (tau * fs).floor().max(0.0) as usize;
            let last = (((tau + self.spec.burst_duration()) * fs).ceil() as usize).min(n - 1);
            for (i, x) in v.iter_mut().enumerate().take(last + 1).skip(first) {
                *x += a * burst(self.spec, i as f64 / fs - tau);
            }
        }
        v.into_iter().map(|x| x as f32).collect()
    }

    fn frame(&self, index: usize) -> (StreakFrame, FrameTruth) {
        let rows = self.spec.rows_per_frame;
        let mut lookup: Vec<Option<&Target>> = vec![None; rows];
        for t in &self.spec.targets[index] {
            lookup[t.row] = Some(t);
        }
        let data: Vec<Vec<f32>> = (0..rows)
            .into_par_iter()
            .map(|r| self.row(index, r, lookup[r]))
            .collect();
        let pixels = data.concat();
        let frame = StreakFrame::new(rows, self.cfg.n_samples, self.cfg.gate_delay, index as u32, pixels)
            .expect("generated pixels are finite");
        let truth = FrameTruth {
            mask: lookup.iter().map(|t| u8::from(t.is_some())).collect(),
            distance: lookup.iter().map(|t| t.map_or(0.0, |t| t.distance)).collect(),
        };
        (frame, truth)
    }
}

/// Frame `index` of the scene with its ground truth.
pub fn make_frame(spec: &SceneSpec, cfg: &SamplingConfig, index: usize) -> Result<(StreakFrame, FrameTruth)> {
    if index >= spec.n_frames {
        return Err(Error::InvalidArgument(format!(
            "frame {index} out of range for {} frames",
            spec.n_frames
        )));
    }
    Ok(Generator::new(spec, cfg)?.frame(index))
}

/// Every frame of a scene, in memory.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub frames: Vec<StreakFrame>,
    /// `frames × rows` ground truth.
    pub truth: BinaryMask,
    /// `frames × rows` distances, 0 where no target.
    pub distances: Vec<Vec<f64>>,
    pub template: TimeSignal,
}

pub fn generate(spec: &SceneSpec, cfg: &SamplingConfig) -> Result<SynthData> {
    let gen = Generator::new(spec, cfg)?;
    let (frames, truths): (Vec<_>, Vec<_>) = (0..spec.n_frames).map(|i| gen.frame(i)).unzip();
    let bits = truths.iter().flat_map(|t| t.mask.iter().copied()).collect();
    Ok(SynthData {
        frames,
        truth: BinaryMask::new(spec.n_frames, spec.rows_per_frame, bits)?,
        distances: truths.into_iter().map(|t| t.distance).collect(),
        template: make_template(spec, cfg)?,
    })
}

/// Writes frames, labels, distances, template, split masks and the
/// manifest into `dir` (created if missing). Frames are generated and
/// written one at a time.
pub fn make_dataset(
    spec: &SceneSpec,
    cfg: &SamplingConfig,
    split: (f64, f64),
    dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    let gen = Generator::new(spec, cfg)?;
    let (rows, frames) = (spec.rows_per_frame, spec.n_frames);
    let (train, val) = assign_splits(frames * rows, split.0, split.1, spec.seed)?;

    let mut files = Vec::new();
    let mut record = |rel: String, role: FileRole| -> Result<String> {
        let crc32 = file_crc32(&dir.join(&rel))?;
        files.push(FileEntry {
            path: rel.clone(),
            role,
            crc32,
        });
        Ok(rel)
    };

    let mut truth = Vec::with_capacity(frames * rows);
    let mut distance = Vec::with_capacity(frames * rows);
    let mut frame_files = Vec::with_capacity(frames);
    for i in 0..frames {
        let (frame, t) = gen.frame(i);
        let rel = format!("frames/frame_{i:04}.snkf");
        write_frame(dir.join(&rel), &frame)?;
        frame_files.push(record(rel, FileRole::Frame)?);
        truth.extend(t.mask);
        distance.extend(t.distance.iter().map(|&d| d as f32));
    }

    let template = make_template(spec, cfg)?;
    let tem_px = template.samples().iter().map(|&v| v as f32).collect();
    write_frame(
        dir.join("template.snkf"),
        &StreakFrame::new(1, cfg.n_samples, cfg.gate_delay, 0, tem_px)?,
    )?;
    let template_file = record("template.snkf".into(), FileRole::Template)?;

    write_labels(dir.join("labels.snkl"), &BinaryMask::new(frames, rows, truth)?)?;
    let labels_file = record("labels.snkl".into(), FileRole::Label)?;

    write_frame(
        dir.join("distance.snkf"),
        &StreakFrame::new(frames, rows, cfg.gate_delay, 0, distance)?,
    )?;
    let distance_file = record("distance.snkf".into(), FileRole::Distance)?;

    let n_train = train.iter().filter(|&&b| b == 1).count();
    let n_val = val.iter().filter(|&&b| b == 1).count();
    write_labels(dir.join("split_train.snkl"), &BinaryMask::new(frames, rows, train)?)?;
    let train_file = record("split_train.snkl".into(), FileRole::Split)?;
    write_labels(dir.join("split_val.snkl"), &BinaryMask::new(frames, rows, val)?)?;
    let val_file = record("split_val.snkl".into(), FileRole::Split)?;

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        sampling: *cfg,
        scene: Some(spec.clone()),
        rng: Some(RngInfo {
            algorithm: RNG_ALGORITHM.into(),
            derivation: RNG_DERIVATION.into(),
        }),
        frames,
        rows_per_frame: rows,
        labels_file,
        template_file,
        distance_file: Some(distance_file),
        frame_files,
        files,
        splits: SplitInfo {
            seed: spec.seed,
            train_ratio: split.0,
            val_ratio: split.1,
            total: frames * rows,
            train: n_train,
            val: n_val,
            train_file,
            val_file,
        },
    };
    manifest.write(dir)?;
    Ok(manifest)
}
