use crate::error::{Error, Result};

const BINS: usize = 256;

/// Bin index of `x` in a 256-bin histogram spanning `[min, max]`.
fn bin_of(x: f64, min: f64, span: f64) -> usize {
    (((x - min) / span * BINS as f64) as usize).min(BINS - 1)
}

/// Otsu's threshold over a 256-bin histogram of min-max scaled values.
///
/// Returns `min + k·(max-min)/256` for the cut `k ∈ 1..256` maximizing the
/// between-class variance, so `x >= threshold` selects exactly the bins at or
/// above the cut. Ties go to the lowest cut.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || min >= max {
        return Err(Error::DegenerateHistogram);
    }
    let span = max - min;
    let mut hist = [0u64; BINS];
    for &x in values {
        hist[bin_of(x, min, span)] += 1;
    }
    let cut = best_cut(&hist);
    Ok(min + cut as f64 * span / BINS as f64)
}

/// Between-class variance is proportional to `(S0·N - S·N0)² / (N0·N1)` with
/// bin indices as levels; compared by cross-multiplication in exact integers.
fn best_cut(hist: &[u64; BINS]) -> usize {
    let n: u128 = hist.iter().map(|&c| c as u128).sum();
    let s: u128 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u128 * c as u128)
        .sum();
    let mut n0: u128 = 0;
    let mut s0: u128 = 0;
    let mut best: Option<(usize, u128, u128)> = None;
    for k in 1..BINS {
        n0 += hist[k - 1] as u128;
        s0 += (k - 1) as u128 * hist[k - 1] as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (s0 * n).abs_diff(s * n0);
        let num = diff * diff;
        let den = n0 * n1;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => wide_mul_gt(num, bd, bn, den),
        };
        if better {
            best = Some((k, num, den));
        }
    }
    best.map(|(k, _, _)| k).unwrap_or(1)
}

/// `a·b > c·d` without overflow.
fn wide_mul_gt(a: u128, b: u128, c: u128, d: u128) -> bool {
    let lhs = mul_256(a, b);
    let rhs = mul_256(c, d);
    lhs > rhs
}

fn mul_256(a: u128, b: u128) -> (u128, u128) {
    let mask = u64::MAX as u128;
    let (a_hi, a_lo) = (a >> 64, a & mask);
    let (b_hi, b_lo) = (b >> 64, b & mask);
    let ll = a_lo * b_lo;
    let lh = a_lo * b_hi;
    let hl = a_hi * b_lo;
    let hh = a_hi * b_hi;
    let mid = (ll >> 64) + (lh & mask) + (hl & mask);
    let lo = (ll & mask) | ((mid & mask) << 64);
    let hi = hh + (lh >> 64) + (hl >> 64) + (mid >> 64);
    (hi, lo)
}
