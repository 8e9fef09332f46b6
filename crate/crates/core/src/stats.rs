//! Resampling statistics: bootstrap intervals, paired permutation tests,
//! Benjamini-Hochberg, fragmentation covariates and correlations.
//!
//! Resample `i` always draws from ChaCha stream `i` of the caller's seed, so
//! results do not depend on how the work is split across threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibrate::quantile;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Bca,
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n_resamples: usize,
    pub level: f64,
    pub method: CiMethod,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            n_resamples: 2000,
            level: 0.95,
            method: CiMethod::Bca,
            seed: 0,
        }
    }
}

impl BootstrapOptions {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_resamples == 0 {
            return Err(Error::Parameter("need at least one resample".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Parameter(format!("level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    /// Method actually used; BCa falls back to percentile when the bias
    /// correction is infinite.
    pub method: CiMethod,
    pub n_resamples: usize,
    pub fell_back: bool,
}

impl ConfidenceInterval {
    pub fn excludes_zero(&self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn resample_into(rng: &mut ChaCha8Rng, src: &[f64], dst: &mut Vec<f64>) {
    dst.clear();
    dst.extend((0..src.len()).map(|_| src[rng.random_range(0..src.len())]));
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Interval from sorted bootstrap replicates, jackknife values and the
/// point estimate.
fn interval(
    estimate: f64,
    mut replicates: Vec<f64>,
    jackknife: &[f64],
    options: &BootstrapOptions,
) -> Result<ConfidenceInterval> {
    replicates.sort_by(f64::total_cmp);
    let alpha = (1.0 - options.level) / 2.0;
    let percentile = |lo_q: f64, hi_q: f64| -> Result<(f64, f64)> {
        Ok((quantile(&replicates, lo_q)?, quantile(&replicates, hi_q)?))
    };
    let mut method = options.method;
    let mut fell_back = false;
    let (lo, hi) = match options.method {
        CiMethod::Percentile => percentile(alpha, 1.0 - alpha)?,
        CiMethod::Bca => {
            let below = replicates.iter().filter(|&&r| r < estimate).count();
            let frac = below as f64 / replicates.len() as f64;
            if frac <= 0.0 || frac >= 1.0 {
                fell_back = true;
                method = CiMethod::Percentile;
                percentile(alpha, 1.0 - alpha)?
            } else {
                let normal = std_normal();
                let z0 = normal.inverse_cdf(frac);
                let mean_j = jackknife.iter().sum::<f64>() / jackknife.len() as f64;
                let num: f64 = jackknife.iter().map(|t| (mean_j - t).powi(3)).sum();
                let den: f64 = jackknife.iter().map(|t| (mean_j - t).powi(2)).sum();
                let accel = if den > 0.0 { num / (6.0 * den.powf(1.5)) } else { 0.0 };
                let adjust = |z: f64| normal.cdf(z0 + (z0 + z) / (1.0 - accel * (z0 + z)));
                let a1 = adjust(normal.inverse_cdf(alpha));
                let a2 = adjust(normal.inverse_cdf(1.0 - alpha));
                if !(a1.is_finite() && a2.is_finite()) {
                    fell_back = true;
                    method = CiMethod::Percentile;
                    percentile(alpha, 1.0 - alpha)?
                } else {
                    percentile(a1.clamp(0.0, 1.0), a2.clamp(0.0, 1.0))?
                }
            }
        }
    };
    Ok(ConfidenceInterval {
        estimate,
        lo: lo.min(hi),
        hi: hi.max(lo),
        level: options.level,
        method,
        n_resamples: options.n_resamples,
        fell_back,
    })
}

/// Bootstrap interval for `statistic` of a single sample.
pub fn bootstrap_ci<F>(samples: &[f64], statistic: F, options: &BootstrapOptions) -> Result<ConfidenceInterval>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    options.validate()?;
    if samples.is_empty() {
        return Err(Error::Size("bootstrap needs a non-empty sample".into()));
    }
    if options.method == CiMethod::Bca && samples.len() < 2 {
        return Err(Error::Size("BCa jackknife needs at least 2 samples".into()));
    }
    let estimate = statistic(samples);
    let replicates: Vec<f64> = (0..options.n_resamples)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut rng = stream_rng(options.seed, i as u64);
            resample_into(&mut rng, samples, buf);
            statistic(buf)
        })
        .collect();
    let jackknife: Vec<f64> = if options.method == CiMethod::Bca {
        (0..samples.len())
            .map(|i| {
                let rest: Vec<f64> = samples
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &v)| v)
                    .collect();
                statistic(&rest)
            })
            .collect()
    } else {
        Vec::new()
    };
    interval(estimate, replicates, &jackknife, options)
}

/// Stratified bootstrap for a statistic of two independent groups; each
/// group is resampled within itself.
pub fn bootstrap_two_sample<F>(
    a: &[f64],
    b: &[f64],
    statistic: F,
    options: &BootstrapOptions,
) -> Result<ConfidenceInterval>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    options.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Size("both groups must be non-empty".into()));
    }
    if options.method == CiMethod::Bca && a.len() + b.len() < 3 {
        return Err(Error::Size("BCa jackknife needs at least 3 samples".into()));
    }
    let estimate = statistic(a, b);
    let replicates: Vec<f64> = (0..options.n_resamples)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(ba, bb), i| {
                let mut rng = stream_rng(options.seed, i as u64);
                resample_into(&mut rng, a, ba);
                resample_into(&mut rng, b, bb);
                statistic(ba, bb)
            },
        )
        .collect();
    let mut jackknife = Vec::new();
    if options.method == CiMethod::Bca {
        let drop = |v: &[f64], i: usize| -> Vec<f64> {
            v.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).collect()
        };
        if a.len() > 1 {
            jackknife.extend((0..a.len()).map(|i| statistic(&drop(a, i), b)));
        }
        if b.len() > 1 {
            jackknife.extend((0..b.len()).map(|i| statistic(a, &drop(b, i))));
        }
    }
    interval(estimate, replicates, &jackknife, options)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mean_difference(a: &[f64], b: &[f64]) -> f64 {
    mean(a) - mean(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed: f64,
    pub p_value: f64,
    /// Sign patterns evaluated: `2^n` when exact, otherwise the shuffle count.
    pub n_shuffles: usize,
    pub exact: bool,
}

/// Largest pair count enumerated exactly.
pub const EXACT_PERMUTATION_MAX_PAIRS: usize = 20;

/// Two-sided paired sign-flip test of `mean(a - b)`.
pub fn paired_permutation(a: &[f64], b: &[f64], n_shuffles: usize, seed: u64) -> Result<PermutationResult> {
    if a.len() != b.len() {
        return Err(Error::Size(format!("paired samples of lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Size("paired test needs at least one pair".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("paired differences must be finite".into()));
    }
    let n = d.len();
    let observed_sum: f64 = d.iter().sum();
    // sums that differ only by rounding count as ties
    let slack = 1e-12 * d.iter().map(|v| v.abs()).sum::<f64>();
    let target = observed_sum.abs() - slack;
    let observed = observed_sum / n as f64;
    if n <= EXACT_PERMUTATION_MAX_PAIRS {
        let patterns = 1usize << n;
        let hits: usize = (0..patterns)
            .into_par_iter()
            .filter(|&mask| {
                let s: f64 = d
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if mask >> i & 1 == 1 { -v } else { *v })
                    .sum();
                s.abs() >= target
            })
            .count();
        return Ok(PermutationResult {
            observed,
            p_value: hits as f64 / patterns as f64,
            n_shuffles: patterns,
            exact: true,
        });
    }
    if n_shuffles == 0 {
        return Err(Error::Parameter("need at least one shuffle".into()));
    }
    let hits: usize = (0..n_shuffles)
        .into_par_iter()
        .filter(|&k| {
            let mut rng = stream_rng(seed, k as u64);
            let s: f64 = d
                .iter()
                .map(|v| if rng.random::<bool>() { -v } else { *v })
                .sum();
            s.abs() >= target
        })
        .count();
    Ok(PermutationResult {
        observed,
        p_value: (1 + hits) as f64 / (n_shuffles + 1) as f64,
        n_shuffles,
        exact: false,
    })
}

/// Benjamini-Hochberg step-up; flags are in input order.
pub fn bh_fdr(p_values: &[f64], q: f64) -> Result<Vec<bool>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Parameter(format!("FDR level {q} outside (0, 1)")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Input(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = (1..=m)
        .rev()
        .find(|&k| sorted[k - 1] <= k as f64 * q / m as f64)
        .map(|k| sorted[k - 1]);
    Ok(match cutoff {
        Some(c) => p_values.iter().map(|&p| p <= c).collect(),
        None => vec![false; m],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fragmentation {
    pub pieces_per_char: f64,
    /// Entropy (nats) of token-length classes, each weighted by the share of
    /// characters it covers.
    pub frag_entropy: f64,
}

pub fn fragmentation_covariates(tokens: &[String], text: &str) -> Result<Fragmentation> {
    let chars = text.chars().count();
    if chars == 0 {
        return Err(Error::Input("source text is empty".into()));
    }
    if tokens.is_empty() {
        return Err(Error::Input("tokenization is empty".into()));
    }
    let mut mass: BTreeMap<usize, usize> = BTreeMap::new();
    for t in tokens {
        let len = t.chars().count();
        if len > 0 {
            *mass.entry(len).or_default() += len;
        }
    }
    let total: usize = mass.values().sum();
    let frag_entropy = if total == 0 {
        0.0
    } else {
        mass.values()
            .map(|&m| {
                let p = m as f64 / total as f64;
                -p * p.ln()
            })
            .sum::<f64>()
            .max(0.0)
    };
    Ok(Fragmentation {
        pieces_per_char: tokens.len() as f64 / chars as f64,
        frag_entropy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::Degenerate("correlation of a zero-variance series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn correlation(x: &[f64], y: &[f64], method: CorrelationMethod) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Size(format!("series of lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Size("correlation needs at least 3 points".into()));
    }
    match method {
        CorrelationMethod::Pearson => pearson(x, y),
        CorrelationMethod::Spearman => pearson(&average_ranks(x), &average_ranks(y)),
    }
}

/// One line of a contrast report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub contrast: String,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_raw: f64,
    pub p_fdr_rejected: bool,
}

/// Paired contrasts `mean(a - b)`: bootstrap CI on the differences, paired
/// permutation p-value, then BH across all contrasts.
pub fn contrast_report(
    contrasts: &[(String, Vec<f64>, Vec<f64>)],
    options: &BootstrapOptions,
    n_shuffles: usize,
    fdr_q: f64,
) -> Result<Vec<ContrastRow>> {
    let mut rows = Vec::with_capacity(contrasts.len());
    for (name, a, b) in contrasts {
        if a.len() != b.len() {
            return Err(Error::Size(format!(
                "contrast '{name}': {} vs {} values",
                a.len(),
                b.len()
            )));
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let ci = bootstrap_ci(&d, mean, options)?;
        let perm = paired_permutation(a, b, n_shuffles, options.seed)?;
        rows.push(ContrastRow {
            contrast: name.clone(),
            estimate: ci.estimate,
            ci_lo: ci.lo,
            ci_hi: ci.hi,
            p_raw: perm.p_value,
            p_fdr_rejected: false,
        });
    }
    let p: Vec<f64> = rows.iter().map(|r| r.p_raw).collect();
    for (row, rejected) in rows.iter_mut().zip(bh_fdr(&p, fdr_q)?) {
        row.p_fdr_rejected = rejected;
    }
    Ok(rows)
}
