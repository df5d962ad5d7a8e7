use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// When results become available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AitMode {
    /// Every result waits for the global pass after the last frame.
    Traditional,
    /// Each frame's result is ready when that frame is done.
    StreakNet,
}

impl std::str::FromStr for AitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traditional" => Ok(AitMode::Traditional),
            "streaknet" => Ok(AitMode::StreakNet),
            other => Err(Error::InvalidArgument(format!("unknown AIT mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AitReport {
    pub mode: AitMode,
    pub n_frames: usize,
    /// Input-to-result latency per frame, seconds.
    pub latencies: Vec<f64>,
    /// Mean of `latencies`.
    pub ait: f64,
    /// Same latencies with frame loading time removed.
    pub compute_latencies: Vec<f64>,
    pub compute_ait: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Feeds `n_frames` frames through `load` then `process`, strictly one
/// after another; `finish` is the global pass (traditional mode only). A
/// warm-up frame (index 0 of an extra run) is processed first and not
/// timed. Frame `i` is input when its load starts.
pub fn ait_benchmark<T, L, P, F>(
    mode: AitMode,
    n_frames: usize,
    mut load: L,
    mut process: P,
    mut finish: F,
) -> Result<AitReport>
where
    L: FnMut(usize) -> Result<T>,
    P: FnMut(usize, T) -> Result<()>,
    F: FnMut() -> Result<()>,
{
    if n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be >= 1".into()));
    }
    let warm = load(0)?;
    process(0, warm)?;
    if mode == AitMode::Traditional {
        finish()?;
    }

    let mut input = Vec::with_capacity(n_frames);
    let mut done = Vec::with_capacity(n_frames);
    // Cumulative load time up to the end of frame i's load.
    let mut loaded = Vec::with_capacity(n_frames);
    let mut load_total = Duration::ZERO;
    let origin = Instant::now();
    for i in 0..n_frames {
        let t0 = Instant::now();
        input.push(t0 - origin);
        let x = load(i)?;
        load_total += t0.elapsed();
        loaded.push(load_total);
        process(i, x)?;
        done.push(origin.elapsed());
    }
    if mode == AitMode::Traditional {
        finish()?;
        let end = origin.elapsed();
        done.iter_mut().for_each(|d| *d = end);
    }

    let latencies: Vec<f64> = input.iter().zip(&done).map(|(a, b)| (*b - *a).as_secs_f64()).collect();
    let compute_latencies: Vec<f64> = (0..n_frames)
        .map(|i| {
            let last = match mode {
                AitMode::Traditional => n_frames - 1,
                AitMode::StreakNet => i,
            };
            let before = if i == 0 { Duration::ZERO } else { loaded[i - 1] };
            latencies[i] - (loaded[last] - before).as_secs_f64()
        })
        .collect();
    Ok(AitReport {
        mode,
        n_frames,
        ait: mean(&latencies),
        compute_ait: mean(&compute_latencies),
        latencies,
        compute_latencies,
    })
}

/// Sleeps until `t_m` has passed since the call; stands in for a frame's
/// compute.
pub fn simulated_work(t_m: Duration) {
    let deadline = Instant::now() + t_m;
    loop {
        let now = Instant::now();
        if now >= deadline {
            break;
        }
        std::thread::sleep(deadline - now);
    }
}

/// Benchmark with a constant simulated per-frame workload and free loads.
pub fn simulated_ait(mode: AitMode, n_frames: usize, t_m: Duration) -> Result<AitReport> {
    ait_benchmark(mode, n_frames, |_| Ok(()), |_, ()| {
        simulated_work(t_m);
        Ok(())
    }, || Ok(()))
}

/// Least-squares line `y = slope·x + intercept`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("x values are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}
