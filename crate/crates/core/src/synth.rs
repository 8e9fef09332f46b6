//! Synthetic activation traces.
//!
//! [`synth_trace`] emits traces whose early-window HFER lands on a chosen
//! target, reproducing the two regimes seen on real models: a high-HFER mode
//! near 0.52 for context-supported statements and a low mode near 0.05 for
//! contradicted ones (bare statements sit near 0.51).
//!
//! Per layer the generator scatters tokens on the unit square, takes a
//! Gaussian-kernel affinity, row-normalizes it into attention (identical for
//! every head) and eigendecomposes the Laplacian the diagnostics will see.
//! The signal is then a unit low-band vector and a unit high-band vector mixed
//! as `sqrt(1 - h) * low + sqrt(h) * high`, which has HFER exactly `h`. The
//! bands are chosen so every cutoff in [`ROBUST_CUTOFFS`] classifies them the
//! same way.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diag::{layer_graph, DiagConfig};
use crate::strategy::{CountFraction, CutoffRule, MassFraction};
use crate::trace::{ActivationTrace, Hidden, LayerRecord};
use crate::{Error, Result};

pub const SYNTH_MODEL_ID: &str = "synthetic";

/// Mass cutoffs (percent) whose bands the generator keeps aligned.
pub const ROBUST_MASS_CUTOFFS: [f64; 6] = [10.0, 15.0, 20.0, 25.0, 30.0, 40.0];
/// Count-mode kappa kept aligned alongside the mass cutoffs.
pub const ROBUST_KAPPA: f64 = 0.2;

/// Human-readable list of the cutoffs the generator aligns to.
pub const ROBUST_CUTOFFS: &str = "mass:10..40, count:0.2";

/// Gaussian draws are truncated at this many standard deviations.
const TRUNCATION_SDS: f64 = 3.5;
const KERNEL_BANDWIDTH: f64 = 0.3;
const SIGNAL_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Supported,
    Contradicted,
    Bare,
}

impl Regime {
    /// Default (mean, sd) of early-window HFER.
    pub fn default_target(self) -> (f64, f64) {
        match self {
            Regime::Supported => (0.52, 0.01),
            Regime::Contradicted => (0.05, 0.01),
            Regime::Bare => (0.51, 0.01),
        }
    }

    pub fn label(self) -> Option<bool> {
        match self {
            Regime::Supported => Some(true),
            Regime::Contradicted => Some(false),
            Regime::Bare => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Supported => "supported",
            Regime::Contradicted => "contradicted",
            Regime::Bare => "bare",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "supported" => Ok(Regime::Supported),
            "contradicted" => Ok(Regime::Contradicted),
            "bare" => Ok(Regime::Bare),
            other => Err(Error::Config(format!(
                "unknown regime '{other}' (supported, contradicted, bare)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub regime: Regime,
    pub tokens: usize,
    pub heads: usize,
    pub n_layers: usize,
    pub target_hfer_mean: f64,
    pub target_hfer_sd: f64,
    pub seed: u64,
    /// Columns of the optional hidden matrix; 0 for none.
    pub hidden_dim: usize,
}

impl SynthConfig {
    pub fn new(regime: Regime, seed: u64) -> Self {
        let (mean, sd) = regime.default_target();
        Self {
            regime,
            tokens: 32,
            heads: 4,
            n_layers: 8,
            target_hfer_mean: mean,
            target_hfer_sd: sd,
            seed,
            hidden_dim: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens < 4 {
            return Err(Error::Config(format!("T = {} must be at least 4", self.tokens)));
        }
        if self.heads == 0 || self.n_layers == 0 {
            return Err(Error::Config("need at least one head and one layer".into()));
        }
        if !(self.target_hfer_mean > 0.0 && self.target_hfer_mean < 1.0) {
            return Err(Error::Config(format!(
                "target HFER mean {} must lie in (0, 1)",
                self.target_hfer_mean
            )));
        }
        if !(self.target_hfer_sd > 0.0) {
            return Err(Error::Config(format!(
                "target HFER sd {} must be positive",
                self.target_hfer_sd
            )));
        }
        Ok(())
    }
}

fn draw_target(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> Result<f64> {
    let lo = (mean - TRUNCATION_SDS * sd).max(1e-6);
    let hi = (mean + TRUNCATION_SDS * sd).min(1.0 - 1e-6);
    if lo >= hi {
        return Err(Error::Config(format!(
            "target {mean} +/- {sd} leaves no admissible HFER in (0, 1)"
        )));
    }
    let normal = Normal::new(mean, sd).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..10_000 {
        let h = normal.sample(rng);
        if (lo..=hi).contains(&h) {
            return Ok(h);
        }
    }
    Ok(mean.clamp(lo, hi))
}

/// Attention that row-normalizes a Gaussian kernel over random 2-D points.
fn geometric_attention(rng: &mut ChaCha8Rng, t: usize) -> Vec<f32> {
    let pts: Vec<(f64, f64)> = (0..t).map(|_| (rng.random(), rng.random())).collect();
    let two_s2 = 2.0 * KERNEL_BANDWIDTH * KERNEL_BANDWIDTH;
    let mut out = Vec::with_capacity(t * t);
    for i in 0..t {
        let row: Vec<f64> = (0..t)
            .map(|j| {
                let dx = pts[i].0 - pts[j].0;
                let dy = pts[i].1 - pts[j].1;
                (-(dx * dx + dy * dy) / two_s2).exp()
            })
            .collect();
        let sum: f64 = row.iter().sum();
        out.extend(row.iter().map(|v| (v / sum) as f32));
    }
    out
}

fn random_unit_in_span(rng: &mut ChaCha8Rng, basis: &DMatrix<f64>, cols: std::ops::Range<usize>) -> DVector<f64> {
    let mut v = DVector::<f64>::zeros(basis.nrows());
    for k in cols {
        let c: f64 = StandardNormal.sample(rng);
        v += basis.column(k) * c;
    }
    let n = v.norm();
    v / n
}

/// (end of low band, start of high band) agreed on by every robust cutoff.
fn aligned_bands(eigenvalues: &[f64]) -> Result<(usize, usize)> {
    let mut starts = Vec::new();
    for c in ROBUST_MASS_CUTOFFS {
        let rule = MassFraction::new(c)?;
        match rule.high_band_start(eigenvalues) {
            Ok(s) => starts.push(s),
            // the default cutoff must work; others are best effort on tiny graphs
            Err(e) if c == crate::diag::DEFAULT_MASS_CUTOFF => {
                return Err(Error::Config(format!("target unreachable: {e}")))
            }
            Err(_) => {}
        }
    }
    if let Ok(s) = CountFraction::new(ROBUST_KAPPA)?.high_band_start(eigenvalues) {
        starts.push(s);
    }
    let low_end = *starts.iter().min().expect("default cutoff present");
    let high_start = *starts.iter().max().expect("default cutoff present");
    if low_end == 0 || high_start >= eigenvalues.len() {
        return Err(Error::Config(
            "target unreachable: low or high frequency band is empty for this T".into(),
        ));
    }
    Ok((low_end, high_start))
}

/// Deterministic synthetic trace; see the module docs for the construction.
pub fn synth_trace(config: &SynthConfig) -> Result<ActivationTrace> {
    config.validate()?;
    let t = config.tokens;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let diag = DiagConfig::default();
    let mut layers = Vec::with_capacity(config.n_layers);
    for index in 0..config.n_layers {
        let head = geometric_attention(&mut rng, t);
        let mut attention = Vec::with_capacity(config.heads * t * t);
        for _ in 0..config.heads {
            attention.extend_from_slice(&head);
        }
        let mut layer = LayerRecord {
            layer_index: index as u32,
            tokens: t,
            heads: config.heads,
            attention,
            signal: vec![0.0; t],
            hidden: None,
        };
        let graph = layer_graph(&layer, &diag)?;
        let u = &graph.spectrum.eigenvectors;
        let (low_end, high_start) = aligned_bands(&graph.spectrum.eigenvalues)?;
        let h = draw_target(&mut rng, config.target_hfer_mean, config.target_hfer_sd)?;
        let mix = |rng: &mut ChaCha8Rng| -> Vec<f32> {
            let low = random_unit_in_span(rng, u, 0..low_end);
            let high = random_unit_in_span(rng, u, high_start..t);
            let x = (low * (1.0 - h).sqrt() + high * h.sqrt()) * SIGNAL_SCALE;
            x.iter().map(|&v| v as f32).collect()
        };
        layer.signal = mix(&mut rng);
        if config.hidden_dim > 0 {
            let columns: Vec<Vec<f32>> = (0..config.hidden_dim).map(|_| mix(&mut rng)).collect();
            let mut data = Vec::with_capacity(t * config.hidden_dim);
            for i in 0..t {
                data.extend(columns.iter().map(|c| c[i]));
            }
            layer.hidden = Some(Hidden {
                dim: config.hidden_dim,
                data,
            });
        }
        layers.push(layer);
    }
    let trace = ActivationTrace {
        model_id: SYNTH_MODEL_ID.into(),
        prompt_id: format!("{}-{:016x}", config.regime.name(), config.seed),
        layers,
        label: config.regime.label(),
        tokenization: None,
    };
    trace.validate()?;
    Ok(trace)
}

/// Shape and targets of a balanced synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub tokens: usize,
    pub heads: usize,
    pub n_layers: usize,
    pub base_seed: u64,
    pub supported: (f64, f64),
    pub contradicted: (f64, f64),
    pub hidden_dim: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        let base = SynthConfig::new(Regime::Supported, 0);
        Self {
            tokens: base.tokens,
            heads: base.heads,
            n_layers: base.n_layers,
            base_seed: 0,
            supported: Regime::Supported.default_target(),
            contradicted: Regime::Contradicted.default_target(),
            hidden_dim: 0,
        }
    }
}

impl DatasetSpec {
    pub fn config(&self, regime: Regime, seed: u64) -> SynthConfig {
        let (mean, sd) = match regime {
            Regime::Supported => self.supported,
            Regime::Contradicted => self.contradicted,
            Regime::Bare => Regime::Bare.default_target(),
        };
        SynthConfig {
            regime,
            tokens: self.tokens,
            heads: self.heads,
            n_layers: self.n_layers,
            target_hfer_mean: mean,
            target_hfer_sd: sd,
            seed,
            hidden_dim: self.hidden_dim,
        }
    }
}

/// `n_per_class` supported traces followed by `n_per_class` contradicted ones.
///
/// Trace `i` of each class uses seed `base_seed + 2i` (supported) or
/// `base_seed + 2i + 1` (contradicted).
pub fn synth_dataset(n_per_class: usize, spec: &DatasetSpec) -> Result<Vec<ActivationTrace>> {
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(2 * n_per_class);
    for (regime, offset) in [(Regime::Supported, 0u64), (Regime::Contradicted, 1)] {
        for i in 0..n_per_class {
            let seed = spec.base_seed.wrapping_add(2 * i as u64 + offset);
            let mut trace = synth_trace(&spec.config(regime, seed))?;
            trace.prompt_id = format!("{}-{i:04}", regime.name());
            out.push(trace);
        }
    }
    Ok(out)
}

/// Trace with independent random softmax heads and a positive, norm-like
/// signal. Used for invariant checks and latency measurements.
pub fn random_trace(seed: u64, tokens: usize, heads: usize, n_layers: usize) -> ActivationTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = (0..n_layers)
        .map(|index| {
            let mut attention = Vec::with_capacity(heads * tokens * tokens);
            for _ in 0..heads {
                let temperature: f64 = rng.random_range(0.3..3.0);
                for _ in 0..tokens {
                    let logits: Vec<f64> = (0..tokens)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            temperature * z
                        })
                        .collect();
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    attention.extend(exps.iter().map(|e| (e / sum) as f32));
                }
            }
            let signal = (0..tokens)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (1.0 + 0.5 * z.abs() + rng.random::<f64>()) as f32
                })
                .collect();
            LayerRecord {
                layer_index: index as u32,
                tokens,
                heads,
                attention,
                signal,
                hidden: None,
            }
        })
        .collect();
    ActivationTrace {
        model_id: "random".into(),
        prompt_id: format!("random-{seed:016x}"),
        layers,
        label: None,
        tokenization: None,
    }
}
