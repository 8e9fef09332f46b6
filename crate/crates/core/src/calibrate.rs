//! Threshold calibration: ROC/AUC, Youden's J, quantile bands, a logistic
//! probability model and ECE-driven band widening.
//!
//! Convention throughout: a higher score means class 1 (supported), and the
//! rule "predict 1 iff h >= t" is what every threshold refers to.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gate::{classify, Support, Thresholds};
use crate::{Error, Result};

/// Scores within this distance are treated as the same threshold.
const SCORE_TIE: f64 = 1e-12;
pub const LOGISTIC_SLOPE_CAP: f64 = 50.0;
pub const MIN_DECISIVE_HOLDOUT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub pairs: Vec<(f64, bool)>,
    pub model_id: String,
}

impl CalibrationSet {
    pub fn new(pairs: Vec<(f64, bool)>, model_id: impl Into<String>) -> Result<Self> {
        if let Some((h, _)) = pairs.iter().find(|(h, _)| !h.is_finite()) {
            return Err(Error::Input(format!("calibration score {h} is not finite")));
        }
        Ok(Self {
            pairs,
            model_id: model_id.into(),
        })
    }

    pub fn from_scores(scores: &[f64], labels: &[bool], model_id: impl Into<String>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Size(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        Self::new(scores.iter().cloned().zip(labels.iter().cloned()).collect(), model_id)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// (negatives, positives)
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.pairs.iter().filter(|p| p.1).count();
        (self.pairs.len() - pos, pos)
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (neg, pos) = self.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::Class(format!(
                "need both classes, got {pos} positive and {neg} negative"
            )));
        }
        Ok((neg, pos))
    }

    pub fn scores(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.0).collect()
    }
}

/// Stratified split into (train, holdout); `train_fraction` of each class
/// (rounded, at least one when the class is non-empty) goes to train.
pub fn split_holdout(
    set: &CalibrationSet,
    train_fraction: f64,
    seed: u64,
) -> Result<(CalibrationSet, CalibrationSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut hold = Vec::new();
    for class in [false, true] {
        let mut members: Vec<(f64, bool)> =
            set.pairs.iter().cloned().filter(|p| p.1 == class).collect();
        members.shuffle(&mut rng);
        let k = ((members.len() as f64 * train_fraction).round() as usize)
            .clamp(members.len().min(1), members.len());
        hold.extend_from_slice(&members[k..]);
        train.extend_from_slice(&members[..k]);
    }
    Ok((
        CalibrationSet::new(train, set.model_id.clone())?,
        CalibrationSet::new(hold, set.model_id.clone())?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ascending threshold; the last point uses `+inf` (nothing predicted
    /// positive).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Mann-Whitney AUC with ties counted one half, via average ranks.
pub fn mann_whitney_auc(set: &CalibrationSet) -> Result<f64> {
    let (neg, pos) = set.require_both_classes()?;
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&i, &j| set.pairs[i].0.total_cmp(&set.pairs[j].0));
    let ranks = average_ranks_sorted(&idx, |i| set.pairs[i].0);
    let rank_sum: f64 = idx
        .iter()
        .zip(&ranks)
        .filter(|(&i, _)| set.pairs[i].1)
        .map(|(_, r)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// 1-based average ranks for indices already sorted by `key`.
fn average_ranks_sorted(sorted: &[usize], key: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut ranks = vec![0.0; sorted.len()];
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && key(sorted[j + 1]) == key(sorted[i]) {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        ranks[i..=j].fill(r);
        i = j + 1;
    }
    ranks
}

/// Area under `points` by the trapezoid rule over FPR.
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

pub fn roc_auc(set: &CalibrationSet) -> Result<RocCurve> {
    let (neg, pos) = set.require_both_classes()?;
    let mut thresholds = set.scores();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let points = thresholds
        .into_iter()
        .map(|t| {
            let tp = set.pairs.iter().filter(|p| p.1 && p.0 >= t).count();
            let fp = set.pairs.iter().filter(|p| !p.1 && p.0 >= t).count();
            RocPoint {
                threshold: t,
                tpr: tp as f64 / pos as f64,
                fpr: fp as f64 / neg as f64,
            }
        })
        .collect();
    Ok(RocCurve {
        points,
        auc: mann_whitney_auc(set)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoudenChoice {
    pub tau_hat: f64,
    pub j: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Threshold maximizing `J = TPR - FPR`.
///
/// Every threshold strictly inside the gap between two consecutive distinct
/// scores gives the same classification, so J is evaluated per gap. Among the
/// gaps attaining the maximum the widest wins (first on equal width) and its
/// midpoint is returned. With no gap above J = 0 the median score is used.
pub fn youden_threshold(set: &CalibrationSet) -> Result<YoudenChoice> {
    let (neg, pos) = set.require_both_classes()?;
    let mut pairs = set.pairs.clone();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // cumulative counts of each class at or below the current score
    let mut below_pos = 0usize;
    let mut below_neg = 0usize;
    let mut best: Option<(f64, f64, f64)> = None; // (j, width, midpoint)
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            if pairs[i].1 {
                below_pos += 1;
            } else {
                below_neg += 1;
            }
            i += 1;
        }
        if i == pairs.len() {
            break;
        }
        let next = pairs[i].0;
        let tpr = (pos - below_pos) as f64 / pos as f64;
        let fpr = (neg - below_neg) as f64 / neg as f64;
        let j = tpr - fpr;
        let width = next - v;
        let better = match best {
            None => true,
            Some((bj, bw, _)) => j > bj + SCORE_TIE || ((j - bj).abs() <= SCORE_TIE && width > bw),
        };
        if better {
            best = Some((j, width, v + (next - v) / 2.0));
        }
    }
    match best {
        Some((j, _, mid)) if j > SCORE_TIE => Ok(YoudenChoice { tau_hat: mid, j }),
        _ => Ok(YoudenChoice {
            tau_hat: median(&mut set.scores()),
            j: 0.0,
        }),
    }
}

/// Linear-interpolation (type 7) sample quantile.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Parameter(format!("quantile level {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub const MIN_BAND_HALF_WIDTH: f64 = 1e-6;

/// `(tau_hat - Q, tau_hat + Q)` with `Q` the `q`-quantile of `|h - tau_hat|`,
/// clamped to `[0, 1]`.
pub fn quantile_band(set: &CalibrationSet, tau_hat: f64, q: f64) -> Result<Thresholds> {
    let dev: Vec<f64> = set.pairs.iter().map(|p| (p.0 - tau_hat).abs()).collect();
    let mut half = quantile(&dev, q)?;
    if half <= 0.0 {
        half = MIN_BAND_HALF_WIDTH;
    }
    let lo = (tau_hat - half).clamp(0.0, 1.0);
    let hi = (tau_hat + half).clamp(0.0, 1.0);
    Thresholds::new(lo, hi, set.model_id.clone())
        .map_err(|e| Error::Calibration(format!("band around {tau_hat} collapsed: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub a: f64,
    pub b: f64,
    pub separated: bool,
    pub converged: bool,
    pub iterations: usize,
    /// Negative log-likelihood after each accepted iterate, starting point first.
    pub nll_history: Vec<f64>,
}

impl LogisticFit {
    pub fn prob(&self, h: f64) -> f64 {
        sigmoid(self.a + self.b * h)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn nll(pairs: &[(f64, bool)], a: f64, b: f64) -> f64 {
    pairs
        .iter()
        .map(|&(h, y)| {
            let z = a + b * h;
            if y {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum()
}

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-8;

/// Maximum-likelihood fit of `p(y=1|h) = sigmoid(a + b h)` by damped Newton.
///
/// When the slope would exceed [`LOGISTIC_SLOPE_CAP`] in magnitude (the data
/// are separable and the MLE diverges) it is pinned at the cap, the
/// `separated` flag is set, and only the intercept continues to be fitted.
pub fn fit_logistic(set: &CalibrationSet) -> Result<LogisticFit> {
    let (neg, pos) = set.require_both_classes()?;
    let pairs = &set.pairs;
    let mut a = (pos as f64 / neg as f64).ln();
    let mut b = 0.0;
    let mut separated = false;
    let mut f = nll(pairs, a, b);
    let mut history = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < NEWTON_MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(h, y) in pairs {
            let p = sigmoid(a + b * h);
            let r = p - if y { 1.0 } else { 0.0 };
            let w = p * (1.0 - p);
            ga += r;
            gb += r * h;
            haa += w;
            hab += w * h;
            hbb += w * h * h;
        }
        let done = if separated {
            // the intercept-only problem is badly scaled once the slope is
            // pinned, so also require the Newton step itself to be tiny
            ga.abs() < NEWTON_GRAD_TOL && (ga / haa.max(1e-300)).abs() < 1e-10
        } else {
            ga.abs().max(gb.abs()) < NEWTON_GRAD_TOL
        };
        if done {
            converged = true;
            break;
        }
        iterations += 1;
        let (da, db) = if separated {
            (ga / haa.max(1e-300), 0.0)
        } else {
            let ridge = 1e-12 * (haa + hbb).max(1e-300);
            let (h11, h22) = (haa + ridge, hbb + ridge);
            let det = h11 * h22 - hab * hab;
            if det.abs() > 0.0 {
                ((h22 * ga - hab * gb) / det, (h11 * gb - hab * ga) / det)
            } else {
                (ga / h11, 0.0)
            }
        };
        // Near the optimum the predicted decrease drops below the rounding
        // noise of the summed NLL; comparing values would then reject good
        // Newton steps, so take them whole.
        let at_noise_floor = (ga * da + gb * db).abs() < 1e-13 * f.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let na = a - step * da;
            let mut nb = b - step * db;
            let capped = nb.abs() > LOGISTIC_SLOPE_CAP;
            if capped {
                nb = LOGISTIC_SLOPE_CAP.copysign(nb);
            }
            let nf = nll(pairs, na, nb);
            if nf <= f || (at_noise_floor && !capped) {
                a = na;
                b = nb;
                f = nf;
                if capped {
                    separated = true;
                }
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        history.push(f);
        if !accepted {
            // no descent possible at floating precision
            converged = true;
            break;
        }
    }
    if !separated && b.abs() >= LOGISTIC_SLOPE_CAP * (1.0 - 1e-12) {
        separated = true;
    }
    Ok(LogisticFit {
        a,
        b,
        separated,
        converged,
        iterations,
        nll_history: history,
    })
}

/// Expected calibration error over `n_bins` equal-width bins on [0, 1].
pub fn ece(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Size(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::Parameter("ECE needs at least one bin".into()));
    }
    if probs.is_empty() {
        return Err(Error::Input("ECE of an empty sample".into()));
    }
    let mut sum_p = vec![0.0; n_bins];
    let mut sum_y = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&p, &y) in probs.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Input(format!("probability {p} outside [0, 1]")));
        }
        let k = ((p * n_bins as f64).floor() as usize).min(n_bins - 1);
        sum_p[k] += p;
        sum_y[k] += if y { 1.0 } else { 0.0 };
        count[k] += 1;
    }
    let n = probs.len() as f64;
    Ok((0..n_bins)
        .filter(|&k| count[k] > 0)
        .map(|k| (count[k] as f64 / n) * ((sum_p[k] - sum_y[k]) / count[k] as f64).abs())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrateOptions {
    pub q: f64,
    pub ece_target: f64,
    pub q_step: f64,
    pub q_max: f64,
    pub n_bins: usize,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        Self {
            q: 0.15,
            ece_target: 0.05,
            q_step: 0.05,
            q_max: 0.45,
            n_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFlags {
    pub separated: bool,
    pub logistic_converged: bool,
    /// The widening loop reached `q_max` without meeting the ECE target.
    pub ece_not_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tau_hat: f64,
    pub tau_low: f64,
    pub tau_high: f64,
    pub a: f64,
    pub b: f64,
    pub ece: f64,
    /// ROC AUC on the training set.
    pub auc: f64,
    /// ROC AUC on the holdout, when it contains both classes.
    pub holdout_auc: Option<f64>,
    pub youden_j: f64,
    pub q_final: f64,
    pub widenings: usize,
    pub decisive_holdout: usize,
    pub model_id: String,
    pub flags: CalibrationFlags,
}

impl CalibrationResult {
    pub fn thresholds(&self) -> Result<Thresholds> {
        Thresholds::new(self.tau_low, self.tau_high, self.model_id.clone())
    }
}

fn decisive_ece(
    holdout: &CalibrationSet,
    band: &Thresholds,
    fit: &LogisticFit,
    n_bins: usize,
) -> Result<(f64, usize)> {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for &(h, y) in &holdout.pairs {
        if classify(h, band)?.support != Support::Uncertain {
            probs.push(fit.prob(h));
            labels.push(y);
        }
    }
    if probs.len() < MIN_DECISIVE_HOLDOUT {
        return Ok((f64::NAN, probs.len()));
    }
    Ok((ece(&probs, &labels, n_bins)?, probs.len()))
}

/// Full protocol: ROC, Youden threshold, quantile band, logistic fit, then
/// ECE on the holdout's decisive-zone points, widening `q` by `q_step` until
/// ECE drops below the target or `q_max` is reached.
pub fn calibrate_full(
    train: &CalibrationSet,
    holdout: &CalibrationSet,
    options: &CalibrateOptions,
) -> Result<CalibrationResult> {
    if !(options.q > 0.0 && options.q <= options.q_max && options.q_max < 1.0 && options.q_step > 0.0) {
        return Err(Error::Parameter(format!(
            "need 0 < q <= q_max < 1 and q_step > 0, got {options:?}"
        )));
    }
    if holdout.is_empty() {
        return Err(Error::Calibration("holdout set is empty".into()));
    }
    let curve = roc_auc(train)?;
    let youden = youden_threshold(train)?;
    let fit = fit_logistic(train)?;
    let mut q = options.q;
    let mut band = quantile_band(train, youden.tau_hat, q)?;
    let (mut ece_value, decisive) = decisive_ece(holdout, &band, &fit, options.n_bins)?;
    if decisive < MIN_DECISIVE_HOLDOUT {
        return Err(Error::Calibration(format!(
            "only {decisive} decisive holdout points (need {MIN_DECISIVE_HOLDOUT})"
        )));
    }
    let mut decisive_count = decisive;
    let mut widenings = 0;
    let mut not_converged = false;
    while ece_value >= options.ece_target {
        let next_q = q + options.q_step;
        if next_q > options.q_max + 1e-12 {
            not_converged = true;
            break;
        }
        let next_band = quantile_band(train, youden.tau_hat, next_q)?;
        let (next_ece, next_decisive) = decisive_ece(holdout, &next_band, &fit, options.n_bins)?;
        if next_decisive < MIN_DECISIVE_HOLDOUT {
            log::warn!("widening to q = {next_q} leaves {next_decisive} decisive points; stopping");
            not_converged = true;
            break;
        }
        q = next_q;
        band = next_band;
        ece_value = next_ece;
        decisive_count = next_decisive;
        widenings += 1;
    }
    let holdout_auc = match holdout.class_counts() {
        (n, p) if n > 0 && p > 0 => Some(mann_whitney_auc(holdout)?),
        _ => None,
    };
    Ok(CalibrationResult {
        tau_hat: youden.tau_hat,
        tau_low: band.tau_low,
        tau_high: band.tau_high,
        a: fit.a,
        b: fit.b,
        ece: ece_value,
        auc: curve.auc,
        holdout_auc,
        youden_j: youden.j,
        q_final: q,
        widenings,
        decisive_holdout: decisive_count,
        model_id: train.model_id.clone(),
        flags: CalibrationFlags {
            separated: fit.separated,
            logistic_converged: fit.converged,
            ece_not_converged: not_converged,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlrReport {
    /// Empirical risk of the best rule "predict 1 iff h >= t".
    pub single_threshold_risk: f64,
    pub threshold: f64,
    /// Empirical risk of the best rule with at most three intervals, each
    /// labelled freely.
    pub three_piece_risk: f64,
    pub passes: bool,
}

pub const MLR_RISK_TOLERANCE: f64 = 1e-2;

/// Minimum errors over labellings that follow `pattern` piecewise along the
/// sorted groups (pieces may be empty).
fn min_errors(groups: &[(f64, usize, usize)], pattern: &[bool]) -> usize {
    let mut dp = vec![0usize; pattern.len()];
    for &(_, n0, n1) in groups {
        let mut best_prefix = usize::MAX;
        for (j, &label) in pattern.iter().enumerate() {
            best_prefix = best_prefix.min(dp[j]);
            dp[j] = best_prefix + if label { n0 } else { n1 };
        }
    }
    dp.into_iter().min().unwrap_or(0)
}

/// Checks on samples from two class-conditional densities (equal priors)
/// that a single upper threshold is as good as any three-interval rule.
pub fn mlr_threshold_check(
    f0: &mut dyn FnMut(&mut ChaCha8Rng) -> f64,
    f1: &mut dyn FnMut(&mut ChaCha8Rng) -> f64,
    n: usize,
    seed: u64,
) -> Result<MlrReport> {
    if n == 0 {
        return Err(Error::Parameter("mlr check needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<(f64, bool)> = Vec::with_capacity(2 * n);
    for _ in 0..n {
        samples.push((f0(&mut rng), false));
        samples.push((f1(&mut rng), true));
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (v, y) in samples {
        match groups.last_mut() {
            Some(g) if g.0 == v => {
                if y {
                    g.2 += 1
                } else {
                    g.1 += 1
                }
            }
            _ => groups.push((v, usize::from(!y), usize::from(y))),
        }
    }
    let total = (2 * n) as f64;
    // single threshold by direct scan: everything at or above group i is 1
    let all_pos_errors: usize = groups.iter().map(|g| g.1).sum();
    let mut errors = all_pos_errors;
    let mut best = (errors, groups[0].0);
    for i in 0..groups.len() {
        // move group i to the negative side
        errors = errors - groups[i].1 + groups[i].2;
        let t = match groups.get(i + 1) {
            Some(next) => groups[i].0 + (next.0 - groups[i].0) / 2.0,
            None => f64::INFINITY,
        };
        if errors < best.0 {
            best = (errors, t);
        }
    }
    let mut three = usize::MAX;
    for mask in 0..8u8 {
        let pattern = [mask & 1 != 0, mask & 2 != 0, mask & 4 != 0];
        three = three.min(min_errors(&groups, &pattern));
    }
    let single = best.0 as f64 / total;
    let three_risk = three as f64 / total;
    Ok(MlrReport {
        single_threshold_risk: single,
        threshold: best.1,
        three_piece_risk: three_risk,
        passes: single - three_risk <= MLR_RISK_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(h: &[f64], y: &[u8]) -> CalibrationSet {
        let labels: Vec<bool> = y.iter().map(|&v| v == 1).collect();
        CalibrationSet::from_scores(h, &labels, "m").unwrap()
    }

    #[test]
    fn auc_hand_example() {
        let s = set(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        let c = roc_auc(&s).unwrap();
        assert_eq!(c.auc, 0.75);
        assert!((trapezoid_auc(&c.points) - c.auc).abs() < 1e-12);
    }

    #[test]
    fn auc_extremes() {
        assert_eq!(roc_auc(&set(&[0.1, 0.2, 0.7, 0.9], &[0, 0, 1, 1])).unwrap().auc, 1.0);
        let ties = set(&[0.3; 6], &[0, 1, 0, 1, 0, 1]);
        let c = roc_auc(&ties).unwrap();
        assert_eq!(c.auc, 0.5);
        assert!((trapezoid_auc(&c.points) - 0.5).abs() < 1e-12);
        assert!(matches!(roc_auc(&set(&[0.1, 0.2], &[1, 1])), Err(Error::Class(_))));
    }

    #[test]
    fn youden_separated_gap_midpoint() {
        let s = set(&[0.05, 0.05, 0.52, 0.52], &[0, 0, 1, 1]);
        let y = youden_threshold(&s).unwrap();
        assert!((y.tau_hat - 0.285).abs() < 1e-12);
        assert_eq!(y.j, 1.0);
    }

    #[test]
    fn youden_all_ties_uses_median() {
        let s = set(&[0.3, 0.3, 0.3, 0.3], &[0, 1, 0, 1]);
        assert_eq!(youden_threshold(&s).unwrap().tau_hat, 0.3);
    }

    #[test]
    fn youden_widest_optimal_gap() {
        // J = 0.5 is reached on (0.1, 0.35] and on (0.4, 0.8]; the wider wins
        let s = set(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        let y = youden_threshold(&s).unwrap();
        assert_eq!(y.j, 0.5);
        assert!((y.tau_hat - 0.6).abs() < 1e-12);
    }

    #[test]
    fn quantile_type7() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.5);
        assert!((quantile(&[0.0, 10.0], 0.15).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(quantile(&[5.0], 0.3).unwrap(), 5.0);
        assert!(quantile(&[], 0.3).is_err());
    }

    #[test]
    fn band_constant_deviation() {
        let s = set(&[0.3, 0.7, 0.3, 0.7], &[0, 1, 0, 1]);
        let b = quantile_band(&s, 0.5, 0.15).unwrap();
        assert!((b.tau_low - 0.3).abs() < 1e-12 && (b.tau_high - 0.7).abs() < 1e-12);
        let zero = set(&[0.5, 0.5], &[0, 1]);
        let b = quantile_band(&zero, 0.5, 0.15).unwrap();
        assert!((b.tau_high - b.tau_low - 2e-6).abs() < 1e-12);
    }

    #[test]
    fn logistic_symmetric_set() {
        let s = set(&[0.2, 0.4, 0.45, 0.55, 0.6, 0.8], &[0, 0, 1, 0, 1, 1]);
        let f = fit_logistic(&s).unwrap();
        assert!(f.converged && !f.separated);
        assert!((f.a + f.b * 0.5).abs() < 1e-6);
        assert!(f.nll_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn logistic_separated_caps_slope() {
        let s = set(&[0.05, 0.05, 0.52, 0.52], &[0, 0, 1, 1]);
        let f = fit_logistic(&s).unwrap();
        assert!(f.separated);
        assert_eq!(f.b, LOGISTIC_SLOPE_CAP);
        assert!((f.a + f.b * 0.285).abs() < 1e-6);
    }

    #[test]
    fn ece_cases() {
        assert_eq!(ece(&[0.0, 1.0, 1.0], &[false, true, true], 10).unwrap(), 0.0);
        assert_eq!(ece(&[0.5; 4], &[true, false, true, false], 10).unwrap(), 0.0);
        assert!((ece(&[0.9; 3], &[false; 3], 10).unwrap() - 0.9).abs() < 1e-12);
        assert!(matches!(ece(&[0.5], &[], 10), Err(Error::Size(_))));
        assert!(ece(&[1.5], &[true], 10).is_err());
    }

    #[test]
    fn calibrate_degenerate_two_point_classes() {
        let s = set(&[0.05, 0.05, 0.52, 0.52], &[0, 0, 1, 1]);
        let r = calibrate_full(&s, &s, &CalibrateOptions::default()).unwrap();
        assert!((r.tau_hat - 0.285).abs() < 1e-12);
        assert_eq!(r.widenings, 0);
        // capped slope: p(0.05) = sigmoid(-50 * 0.235)
        let expected = sigmoid(-LOGISTIC_SLOPE_CAP * 0.235);
        assert!((r.ece - expected).abs() < 1e-9, "{}", r.ece);
        assert!(r.flags.separated && !r.flags.ece_not_converged);
    }

    #[test]
    fn calibrate_needs_decisive_holdout() {
        let train = set(&[0.05, 0.05, 0.52, 0.52], &[0, 0, 1, 1]);
        let hold = set(&[0.28, 0.29, 0.05], &[0, 1, 0]);
        assert!(matches!(
            calibrate_full(&train, &hold, &CalibrateOptions::default()),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn split_is_stratified() {
        let s = set(&[0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9], &[0, 0, 0, 0, 1, 1, 1, 1]);
        let (tr, ho) = split_holdout(&s, 0.5, 3).unwrap();
        assert_eq!(tr.class_counts(), (2, 2));
        assert_eq!(ho.class_counts(), (2, 2));
        assert_eq!(split_holdout(&s, 0.5, 3).unwrap(), (tr, ho));
    }

    #[test]
    fn three_piece_dp() {
        // 1 0 1 pattern along the line
        let groups = vec![(0.0, 0, 3), (1.0, 3, 0), (2.0, 0, 3)];
        assert_eq!(min_errors(&groups, &[true, false, true]), 0);
        assert_eq!(min_errors(&groups, &[false, true]), 3);
        assert_eq!(min_errors(&groups, &[true]), 3);
    }
}
