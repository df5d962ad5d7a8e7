//! Weight-derived equivalent filters: the column-wise absolute weight mass of
//! the echo embedding layer, min-max normalized, read as a transfer function.

use std::io::Write;

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Tensor2;
use crate::signal::TransferFunction;

/// Default smoothing window for peak reporting, Hz.
pub const DEFAULT_PEAK_WINDOW: f64 = 5e6;

/// Normalized attention per expanded-spectrum input (length `2L`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDistribution {
    values: Vec<f64>,
    freq_resolution: f64,
}

impl AttentionDistribution {
    /// Wraps precomputed values; they must span exactly [0, 1].
    pub fn new(values: Vec<f64>, freq_resolution: f64) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "attention length {} must be even and non-zero",
                values.len()
            )));
        }
        if !(freq_resolution.is_finite() && freq_resolution > 0.0) {
            return Err(Error::InvalidArgument("frequency resolution must be positive".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("attention values must lie in [0, 1]".into()));
        }
        Ok(Self {
            values,
            freq_resolution,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn freq_resolution(&self) -> f64 {
        self.freq_resolution
    }

    /// Number of frequency bins `L`.
    pub fn half_len(&self) -> usize {
        self.values.len() / 2
    }

    /// One `(frequency, amplitude)` pair per bin; amplitude combines the real
    /// and imaginary inputs of that bin by `max`.
    pub fn per_frequency(&self) -> Vec<(f64, f64)> {
        let l = self.half_len();
        (0..l)
            .map(|i| {
                (
                    i as f64 * self.freq_resolution,
                    self.values[i].max(self.values[i + l]),
                )
            })
            .collect()
    }

    /// `freq_hz,attention` CSV, one row per bin.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "freq_hz,attention")?;
        for (f, a) in self.per_frequency() {
            writeln!(out, "{f},{a}")?;
        }
        Ok(())
    }
}

/// `(mantissa, exponent)` with `|x| = m·2^e`; zero gives `None`.
fn decompose(x: f64) -> Option<(u64, i32)> {
    let bits = x.abs().to_bits();
    if bits == 0 {
        return None;
    }
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    Some(if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    })
}

/// Column sums of `|w|`, computed exactly.
///
/// Each entry is an integer multiple of `2^e_min` for the smallest exponent
/// in the matrix, so the sums are exact integers in those units; the result
/// does not depend on row order.
fn exact_column_mass(w: &Tensor2) -> Result<Vec<BigUint>> {
    if !w.is_finite() {
        return Err(Error::InvalidArgument("weights must be finite".into()));
    }
    let e_min = w
        .data()
        .iter()
        .filter_map(|&x| decompose(x).map(|(_, e)| e))
        .min()
        .unwrap_or(0);
    let sums = (0..w.cols())
        .into_par_iter()
        .map(|c| {
            let mut acc = BigUint::default();
            for r in 0..w.rows() {
                if let Some((m, e)) = decompose(w.get(r, c)) {
                    acc += BigUint::from(m) << ((e - e_min) as u32);
                }
            }
            acc
        })
        .collect();
    Ok(sums)
}

/// `(num / den)` rounded down to a multiple of 2^-64, as `f64`.
fn ratio_to_f64(num: &BigUint, den: &BigUint) -> f64 {
    let q: BigUint = (num << 64u32) / den;
    let digits = q.to_u64_digits();
    match digits.as_slice() {
        [] => 0.0,
        [lo] => *lo as f64 * 2f64.powi(-64),
        _ => 1.0,
    }
}

/// Column-wise absolute weight mass, min-max normalized to [0, 1].
///
/// `freq_resolution` is carried along for plotting. Row permutations and
/// positive rescalings that keep the products exact leave the result
/// bit-for-bit unchanged.
pub fn analyze(w: &Tensor2, freq_resolution: f64) -> Result<AttentionDistribution> {
    if w.cols() == 0 || !w.cols().is_multiple_of(2) || w.rows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "weight matrix {:?} must have an even, non-zero column count",
            w.shape()
        )));
    }
    let mass = exact_column_mass(w)?;
    let min = mass.iter().min().cloned().unwrap_or_default();
    let max = mass.iter().max().cloned().unwrap_or_default();
    if min == max {
        return Err(Error::DegenerateAttention);
    }
    let span = &max - &min;
    let values = mass.iter().map(|m| ratio_to_f64(&(m - &min), &span)).collect();
    AttentionDistribution::new(values, freq_resolution)
}

/// Gains carried over unchanged; bins `i` and `i + L` both describe
/// frequency `i·ΔR_f`.
pub fn to_transfer_function(a: &AttentionDistribution) -> Result<TransferFunction> {
    TransferFunction::new(a.values.clone())
}

/// Local maxima of the per-frequency amplitude after a centred moving
/// average spanning `window` Hz, strongest first.
pub fn attention_peaks(a: &AttentionDistribution, window: f64) -> Result<Vec<(f64, f64)>> {
    let df = a.freq_resolution;
    if !(window.is_finite() && window > df) {
        return Err(Error::InvalidArgument(format!(
            "peak window {window} Hz must exceed the bin width {df} Hz"
        )));
    }
    let amp: Vec<f64> = a.per_frequency().into_iter().map(|(_, v)| v).collect();
    let half = ((window / df).round() as usize / 2).max(1);
    let n = amp.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in amp.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect();
    // Runs of equal values count as one candidate, reported at their centre.
    let mut peaks = Vec::new();
    let mut lo = 0;
    while lo < n {
        let mut hi = lo;
        while hi + 1 < n && smooth[hi + 1] == smooth[lo] {
            hi += 1;
        }
        let v = smooth[lo];
        let left = lo == 0 || smooth[lo - 1] < v;
        let right = hi + 1 == n || smooth[hi + 1] < v;
        if v > 0.0 && left && right && !(lo == 0 && hi + 1 == n) {
            peaks.push((((lo + hi) / 2) as f64 * df, v));
        }
        lo = hi + 1;
    }
    peaks.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.total_cmp(&y.0)));
    Ok(peaks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DF: f64 = 1e6;

    fn random_f32_valued(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
        let data = (0..rows * cols)
            .map(|_| f64::from(rng.gen_range(-1.0f32..1.0)))
            .collect();
        Tensor2::new(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_is_degenerate() {
        assert!(matches!(
            analyze(&Tensor2::identity(8), DF),
            Err(Error::DegenerateAttention)
        ));
    }

    #[test]
    fn zero_column_is_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = random_f32_valued(4, 6, &mut rng);
        for r in 0..4 {
            w.set(r, 3, 0.0);
        }
        let a = analyze(&w, DF).unwrap();
        assert_eq!(a.values()[3], 0.0);
        assert_eq!(a.values().iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Tensor2::new(8, 16, (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let a = analyze(&w, DF).unwrap();
        let mut raw = vec![0.0; 16];
        for (i, r) in raw.iter_mut().enumerate() {
            for j in 0..8 {
                *r += w.get(j, i).abs();
            }
        }
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (got, r) in a.values().iter().zip(&raw) {
            assert!((got - (r - lo) / (hi - lo)).abs() < 1e-12);
        }
    }

    #[test]
    fn invariant_to_row_order_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w = random_f32_valued(16, 32, &mut rng);
            let base = analyze(&w, DF).unwrap();
            let mut order: Vec<usize> = (0..16).collect();
            order.shuffle(&mut rng);
            let permuted: Vec<f64> = order.iter().flat_map(|&r| w.row(r).to_vec()).collect();
            let permuted = Tensor2::new(16, 32, permuted).unwrap();
            assert_eq!(analyze(&permuted, DF).unwrap(), base);
            // f32-valued factors keep every product exact in f64.
            for c in [2.0, 0.125, f64::from(rng.gen_range(0.01f32..100.0)), 3.0] {
                assert_eq!(analyze(&w.scale(c), DF).unwrap(), base, "c = {c}");
            }
        }
    }

    #[test]
    fn transfer_function_carries_gains() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = analyze(&random_f32_valued(4, 10, &mut rng), DF).unwrap();
        let h = to_transfer_function(&a).unwrap();
        assert_eq!(h.gains(), a.values());
        let all = AttentionDistribution::new(vec![1.0; 10], DF).unwrap();
        assert_eq!(to_transfer_function(&all).unwrap(), TransferFunction::all_pass(10));
    }

    #[test]
    fn per_frequency_takes_max_of_halves() {
        let a = AttentionDistribution::new(vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.2], DF).unwrap();
        assert_eq!(a.per_frequency(), vec![(0.0, 0.25), (1e6, 0.75), (2e6, 1.0)]);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next(), Some("freq_hz,attention"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn spikes_are_reported() {
        let l = 1000;
        let mut v = vec![0.0; 2 * l];
        v[40] = 1.0;
        v[l + 500] = 0.8;
        let a = AttentionDistribution::new(v, DF).unwrap();
        let peaks = attention_peaks(&a, DEFAULT_PEAK_WINDOW).unwrap();
        let freqs: Vec<f64> = peaks.iter().map(|p| p.0).collect();
        assert_eq!(freqs, vec![40e6, 500e6]);

        let narrow = attention_peaks(&a, 2.0 * DF).unwrap();
        assert!((narrow[0].0 - 40e6).abs() <= DF);
        assert!(attention_peaks(&a, DF).is_err());
    }

    #[test]
    fn monotone_has_endpoint_peak() {
        let l = 50;
        let v: Vec<f64> = (0..2 * l).map(|i| (i % l) as f64 / (l - 1) as f64).collect();
        let a = AttentionDistribution::new(v, DF).unwrap();
        let peaks = attention_peaks(&a, 5.0 * DF).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].0, (l - 1) as f64 * DF);
    }
}
