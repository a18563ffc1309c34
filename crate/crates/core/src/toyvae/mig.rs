//! Mutual information gap (MIG) for discrete ground-truth factors.
//!
//! Latent codes are discretised by equal-frequency binning with tie merging:
//! equal values always land in the same bin (the one owned by the first of
//! their sorted ranks), so a latent that is an exact copy of a factor keeps
//! exactly one bin per factor value and scores the full gap. Mutual
//! information and entropies are plug-in estimates in nats. For each factor
//! the gap is (I_top1 − I_top2) / H(factor); MIG is the mean over factors.

use ndarray::Array2;

use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MigError {
    #[error("latents and factors must describe the same samples")]
    LengthMismatch,
    #[error("need at least two latent dimensions to form a gap")]
    TooFewLatents,
    #[error("need at least two bins")]
    TooFewBins,
    #[error("latent values must be finite")]
    NonFiniteLatent,
    #[error("factor {0} is constant; its normalised gap is undefined")]
    ConstantFactor(usize),
}

/// Equal-frequency bin index per value, ties merged to the first rank's bin.
pub fn equal_frequency_bins(values: &[f64], n_bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut bins = vec![0usize; n];
    let mut prev_value = f64::NAN;
    let mut prev_bin = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        let bin = if values[i] == prev_value {
            prev_bin
        } else {
            rank * n_bins / n
        };
        bins[i] = bin;
        prev_value = values[i];
        prev_bin = bin;
    }
    bins
}

/// Plug-in Shannon entropy of a discrete sequence, in nats.
///
/// Counts live in ordered maps so the floating-point accumulation order — and
/// therefore the result, bit for bit — does not depend on hasher seeds.
pub fn entropy_nats(xs: &[usize]) -> f64 {
    let n = xs.len() as f64;
    let mut counts = std::collections::BTreeMap::new();
    for &x in xs {
        *counts.entry(x).or_insert(0usize) += 1;
    }
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in mutual information between two discrete sequences, in nats.
pub fn mutual_info_nats(xs: &[usize], ys: &[usize]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "sequences must be paired");
    let n = xs.len() as f64;
    let mut joint = std::collections::BTreeMap::new();
    let mut px = std::collections::BTreeMap::new();
    let mut py = std::collections::BTreeMap::new();
    for (&x, &y) in xs.iter().zip(ys) {
        *joint.entry((x, y)).or_insert(0usize) += 1;
        *px.entry(x).or_insert(0usize) += 1;
        *py.entry(y).or_insert(0usize) += 1;
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c as f64 / n;
        let p1 = px[&x] as f64 / n;
        let p2 = py[&y] as f64 / n;
        mi += pxy * (pxy / (p1 * p2)).ln();
    }
    mi.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MigReport {
    pub mig: f64,
    /// `mi[j][k]` = I(latent j; factor k) in nats.
    pub mi: Vec<Vec<f64>>,
    /// Normalised top-1 minus top-2 gap per factor.
    pub gaps: Vec<f64>,
    pub factor_entropies: Vec<f64>,
}

/// MIG of mean-encoder codes against the dataset's factor columns.
pub fn mig_score<T: Real>(
    latents: &Array2<T>,
    factors: &[[usize; 3]],
    n_bins: usize,
) -> Result<MigReport, MigError> {
    if latents.nrows() != factors.len() {
        return Err(MigError::LengthMismatch);
    }
    if latents.ncols() < 2 {
        return Err(MigError::TooFewLatents);
    }
    if n_bins < 2 {
        return Err(MigError::TooFewBins);
    }
    let n = factors.len();
    let k = latents.ncols();
    let mut binned: Vec<Vec<usize>> = Vec::with_capacity(k);
    for j in 0..k {
        let col: Vec<f64> = latents
            .column(j)
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(MigError::NonFiniteLatent);
        }
        binned.push(equal_frequency_bins(&col, n_bins));
    }
    let n_factors = 3;
    let mut mi = vec![vec![0.0; n_factors]; k];
    let mut gaps = Vec::with_capacity(n_factors);
    let mut factor_entropies = Vec::with_capacity(n_factors);
    for f in 0..n_factors {
        let col: Vec<usize> = (0..n).map(|i| factors[i][f]).collect();
        let h = entropy_nats(&col);
        if h <= 0.0 {
            return Err(MigError::ConstantFactor(f));
        }
        factor_entropies.push(h);
        for (j, bins) in binned.iter().enumerate() {
            mi[j][f] = mutual_info_nats(bins, &col);
        }
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for j in 0..k {
            let v = mi[j][f];
            if v > best {
                second = best;
                best = v;
            } else if v > second {
                second = v;
            }
        }
        gaps.push((best - second) / h);
    }
    Ok(MigReport {
        mig: gaps.iter().sum::<f64>() / n_factors as f64,
        mi,
        gaps,
        factor_entropies,
    })
}
