//! Graph Fourier transform and per-layer spectral diagnostics.
//!
//! The pipeline for one layer is: aggregate heads → normalized Laplacian →
//! eigendecomposition → GFT of the configured signal → HFER, spectral entropy,
//! Dirichlet energy and Fiedler value. Layer values are then averaged over an
//! early window (layers 2..=5 by default).

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::graph::{aggregate_heads, eig_spectrum, fiedler, Laplacian, Spectrum};
use crate::strategy::{
    CutoffRule, HeadAggregation, LaplacianNormalization, MassFraction, MassWeighted,
    StrategyRegistry, Symmetric,
};
use crate::trace::{ActivationTrace, LayerRecord};
use crate::{Error, Result};

/// Eigenvalues closer than this are treated as one eigenspace.
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_WINDOW: [u32; 4] = [2, 3, 4, 5];
pub const DEFAULT_MASS_CUTOFF: f64 = 20.0;
pub const DEFAULT_KAPPA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSource {
    /// Per-token scalar stored in [`LayerRecord::signal`].
    #[default]
    Scalar,
    /// The layer's `T x d` hidden matrix, one graph signal per column.
    HiddenMatrix,
}

/// Fully resolved diagnostic configuration.
#[derive(Debug, Clone)]
pub struct DiagConfig {
    pub window: Vec<u32>,
    pub cutoff: Arc<dyn CutoffRule>,
    pub aggregation: Arc<dyn HeadAggregation>,
    pub laplacian: Arc<dyn LaplacianNormalization>,
    pub signal: SignalSource,
}

impl Default for DiagConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW.to_vec(),
            cutoff: Arc::new(MassFraction::new(DEFAULT_MASS_CUTOFF).expect("valid default")),
            aggregation: Arc::new(MassWeighted),
            laplacian: Arc::new(Symmetric),
            signal: SignalSource::Scalar,
        }
    }
}

impl DiagConfig {
    pub fn with_window(mut self, window: Vec<u32>) -> Self {
        self.window = window;
        self
    }

    pub fn with_cutoff(mut self, cutoff: Arc<dyn CutoffRule>) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Arc<dyn HeadAggregation>) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn with_laplacian(mut self, laplacian: Arc<dyn LaplacianNormalization>) -> Self {
        self.laplacian = laplacian;
        self
    }

    pub fn settings(&self) -> DiagSettings {
        DiagSettings {
            window: format_window(&self.window),
            cutoff: self.cutoff.label(),
            laplacian: self.laplacian.name().to_owned(),
            aggregation: self.aggregation.name().to_owned(),
            signal: self.signal,
        }
    }
}

/// Name-based, serializable form of [`DiagConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagSettings {
    pub window: String,
    pub cutoff: String,
    pub laplacian: String,
    pub aggregation: String,
    pub signal: SignalSource,
}

impl Default for DiagSettings {
    fn default() -> Self {
        DiagConfig::default().settings()
    }
}

impl DiagSettings {
    pub fn resolve(&self, registry: &StrategyRegistry) -> Result<DiagConfig> {
        Ok(DiagConfig {
            window: parse_window(&self.window)?,
            cutoff: registry.cutoff(&self.cutoff)?,
            aggregation: registry.aggregation(&self.aggregation)?,
            laplacian: registry.laplacian(&self.laplacian)?,
            signal: self.signal,
        })
    }
}

/// Parses `2:5` (inclusive range) or `2,3,5` into a sorted layer list.
pub fn parse_window(s: &str) -> Result<Vec<u32>> {
    let bad = || Error::Config(format!("window '{s}' is not 'a:b' or a comma list"));
    let mut layers: Vec<u32> = if let Some((a, b)) = s.split_once(':') {
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    layers.sort_unstable();
    layers.dedup();
    if layers.is_empty() {
        return Err(bad());
    }
    Ok(layers)
}

pub fn format_window(window: &[u32]) -> String {
    let contiguous = window.windows(2).all(|w| w[1] == w[0] + 1);
    match (window.first(), window.last()) {
        (Some(a), Some(b)) if contiguous => format!("{a}:{b}"),
        _ => window
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(","),
    }
}

/// Per-mode energies of a signal in a Laplacian eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalPowers {
    pub powers: Vec<f64>,
    pub normalized: Vec<f64>,
    pub total: f64,
}

/// Index ranges of (numerically) repeated eigenvalues.
fn eigenspaces(eigenvalues: &[f64]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=eigenvalues.len() {
        if k == eigenvalues.len() || eigenvalues[k] - eigenvalues[k - 1] > DEGENERACY_TOLERANCE {
            out.push(start..k);
            start = k;
        }
    }
    out
}

/// Projects `signal` (T rows, one column per graph signal) onto the spectrum.
///
/// Energy inside a repeated eigenvalue is spread evenly over its modes, so
/// the result does not depend on the basis the solver picked for that
/// eigenspace.
pub fn gft(spectrum: &Spectrum, signal: &DMatrix<f64>) -> Result<ModalPowers> {
    let t = spectrum.tokens();
    if signal.nrows() != t {
        return Err(Error::Size(format!(
            "signal has {} rows, spectrum has T = {t}",
            signal.nrows()
        )));
    }
    let coeffs = spectrum.eigenvectors.tr_mul(signal);
    let mut powers: Vec<f64> = coeffs.row_iter().map(|r| r.norm_squared()).collect();
    for space in eigenspaces(&spectrum.eigenvalues) {
        if space.len() > 1 {
            let mean = powers[space.clone()].iter().sum::<f64>() / space.len() as f64;
            powers[space].fill(mean);
        }
    }
    let total: f64 = powers.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate(
            "signal has zero spectral energy; HFER is undefined".into(),
        ));
    }
    let normalized = powers.iter().map(|p| p / total).collect();
    Ok(ModalPowers {
        powers,
        normalized,
        total,
    })
}

/// High-frequency energy ratio: share of energy in the cutoff's high band.
pub fn hfer(powers: &ModalPowers, eigenvalues: &[f64], cutoff: &dyn CutoffRule) -> Result<f64> {
    if powers.powers.len() != eigenvalues.len() {
        return Err(Error::Size(format!(
            "{} modal powers for {} eigenvalues",
            powers.powers.len(),
            eigenvalues.len()
        )));
    }
    if !(powers.total > 0.0) {
        return Err(Error::Degenerate("zero total energy".into()));
    }
    let start = cutoff.high_band_start(eigenvalues)?;
    let high: f64 = powers.powers[start..].iter().sum();
    Ok((high / powers.total).clamp(0.0, 1.0))
}

/// Shannon entropy (nats) of the normalized modal powers.
pub fn spectral_entropy(powers: &ModalPowers) -> Result<f64> {
    if !(powers.total > 0.0) {
        return Err(Error::Degenerate("zero total energy".into()));
    }
    Ok(powers
        .normalized
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0))
}

/// `x^T L x` (one column) or `Tr(X^T L X)`.
pub fn dirichlet_energy(laplacian: &Laplacian, signal: &DMatrix<f64>) -> Result<f64> {
    laplacian.quadratic_form(signal)
}

/// Both sides of the Dirichlet-energy lower bound on HFER.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates `HFER >= (sum_top lambda / sum lambda) * Q / ||x||^2`.
///
/// The inequality does not hold for every signal, so this only reports.
pub fn hfer_bound_report(
    spectrum: &Spectrum,
    signal: &DMatrix<f64>,
    cutoff: &dyn CutoffRule,
) -> Result<BoundReport> {
    let powers = gft(spectrum, signal)?;
    let lambdas = &spectrum.eigenvalues;
    let lhs = hfer(&powers, lambdas, cutoff)?;
    let start = cutoff.high_band_start(lambdas)?;
    let lambda_total: f64 = lambdas.iter().sum();
    let lambda_top: f64 = lambdas[start..].iter().sum();
    let q: f64 = lambdas.iter().zip(&powers.powers).map(|(l, p)| l * p).sum();
    let rhs = if lambda_total > 0.0 {
        (lambda_top / lambda_total) * (q / powers.total)
    } else {
        0.0
    };
    Ok(BoundReport {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer_index: u32,
    pub hfer: f64,
    pub se: f64,
    pub dirichlet_energy: f64,
    pub fiedler: f64,
    /// `Tr(X^T L X)` of the hidden matrix, when the layer carries one.
    pub energy_trace: Option<f64>,
}

/// Laplacian and spectrum of one layer, reusable across signals.
#[derive(Debug, Clone)]
pub struct LayerGraph {
    pub layer_index: u32,
    pub laplacian: Laplacian,
    pub spectrum: Spectrum,
}

pub fn layer_graph(layer: &LayerRecord, config: &DiagConfig) -> Result<LayerGraph> {
    let affinity = aggregate_heads(layer, config.aggregation.as_ref())?;
    let laplacian = config.laplacian.normalize(&affinity)?;
    let spectrum = eig_spectrum(&laplacian)?;
    Ok(LayerGraph {
        layer_index: layer.layer_index,
        laplacian,
        spectrum,
    })
}

pub fn scalar_signal(layer: &LayerRecord) -> DMatrix<f64> {
    DMatrix::from_iterator(layer.tokens, 1, layer.signal.iter().map(|&v| f64::from(v)))
}

pub fn hidden_signal(layer: &LayerRecord) -> Option<DMatrix<f64>> {
    layer.hidden.as_ref().map(|h| {
        DMatrix::from_row_iterator(layer.tokens, h.dim, h.data.iter().map(|&v| f64::from(v)))
    })
}

fn configured_signal(layer: &LayerRecord, source: SignalSource) -> Result<DMatrix<f64>> {
    match source {
        SignalSource::Scalar => Ok(scalar_signal(layer)),
        SignalSource::HiddenMatrix => hidden_signal(layer).ok_or_else(|| {
            Error::Config("signal source is hidden_matrix but the layer has no hidden matrix".into())
        }),
    }
}

/// HFER and SE of `signal` on a prepared layer graph.
pub fn signal_hfer_se(
    graph: &LayerGraph,
    signal: &DMatrix<f64>,
    cutoff: &dyn CutoffRule,
) -> Result<(f64, f64)> {
    let coords = graph.laplacian.spectral_coordinates(signal);
    let powers = gft(&graph.spectrum, &coords)?;
    Ok((
        hfer(&powers, &graph.spectrum.eigenvalues, cutoff)?,
        spectral_entropy(&powers)?,
    ))
}

pub fn diagnose_layer(layer: &LayerRecord, config: &DiagConfig) -> Result<LayerDiagnostics> {
    let run = || -> Result<LayerDiagnostics> {
        let graph = layer_graph(layer, config)?;
        let signal = configured_signal(layer, config.signal)?;
        let (h, se) = signal_hfer_se(&graph, &signal, config.cutoff.as_ref())?;
        let energy_trace = match hidden_signal(layer) {
            Some(x) => Some(graph.laplacian.quadratic_form(&x)?),
            None => None,
        };
        Ok(LayerDiagnostics {
            layer_index: layer.layer_index,
            hfer: h,
            se,
            dirichlet_energy: dirichlet_energy(&graph.laplacian, &signal)?,
            fiedler: fiedler(&graph.spectrum)?,
            energy_trace,
        })
    };
    run().map_err(|e| e.at_layer(layer.layer_index))
}

fn window_layers<'a>(trace: &'a ActivationTrace, window: &[u32]) -> Result<Vec<&'a LayerRecord>> {
    if window.is_empty() {
        return Err(Error::Window("layer window is empty".into()));
    }
    window
        .iter()
        .map(|&l| {
            trace.layer(l).ok_or_else(|| {
                Error::Window(format!(
                    "trace '{}' has no layer {l} (available: {:?})",
                    trace.prompt_id,
                    trace.layer_indices()
                ))
            })
        })
        .collect()
}

/// Diagnostics for every layer of `config.window`, in window order.
pub fn layer_diagnostics(trace: &ActivationTrace, config: &DiagConfig) -> Result<Vec<LayerDiagnostics>> {
    window_layers(trace, &config.window)?
        .into_iter()
        .map(|layer| diagnose_layer(layer, config))
        .collect()
}

/// Diagnostics for every layer present in the trace.
pub fn all_layer_diagnostics(
    trace: &ActivationTrace,
    config: &DiagConfig,
) -> Result<Vec<LayerDiagnostics>> {
    trace.layers.iter().map(|l| diagnose_layer(l, config)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyWindowSummary {
    pub window: Vec<u32>,
    pub hfer_mean: f64,
    pub se_mean: f64,
    pub per_layer: Vec<LayerDiagnostics>,
}

/// Averages HFER and SE over `window`; input order does not matter.
pub fn early_window(diags: &[LayerDiagnostics], window: &[u32]) -> Result<EarlyWindowSummary> {
    let mut window = window.to_vec();
    window.sort_unstable();
    window.dedup();
    if window.is_empty() {
        return Err(Error::Window("layer window is empty".into()));
    }
    let per_layer = window
        .iter()
        .map(|&l| {
            diags
                .iter()
                .find(|d| d.layer_index == l)
                .cloned()
                .ok_or_else(|| Error::Window(format!("no diagnostics for layer {l}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_layer.len() as f64;
    Ok(EarlyWindowSummary {
        hfer_mean: per_layer.iter().map(|d| d.hfer).sum::<f64>() / n,
        se_mean: per_layer.iter().map(|d| d.se).sum::<f64>() / n,
        window,
        per_layer,
    })
}

/// Early-window summary of one trace under `config`.
pub fn summarize(trace: &ActivationTrace, config: &DiagConfig) -> Result<EarlyWindowSummary> {
    early_window(&layer_diagnostics(trace, config)?, &config.window)
}

/// `|ΔSE|` of the window mean after perturbing `m` random tokens of each
/// window layer's scalar signal by a vector of norm `epsilon * ||x||`.
pub fn se_stability_probe(
    trace: &ActivationTrace,
    config: &DiagConfig,
    m: usize,
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    let t = trace.tokens();
    if m >= t {
        return Err(Error::Parameter(format!("m = {m} must be below T = {t}")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Parameter(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut before = 0.0;
    let mut after = 0.0;
    let layers = window_layers(trace, &config.window)?;
    for layer in &layers {
        let graph = layer_graph(layer, config).map_err(|e| e.at_layer(layer.layer_index))?;
        let x = scalar_signal(layer);
        let (_, se0) = signal_hfer_se(&graph, &x, config.cutoff.as_ref())?;
        let mut xp = x.clone();
        if m > 0 && epsilon > 0.0 {
            let idx = sample(&mut rng, t, m);
            let delta: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            let scale = if norm > 0.0 { epsilon * x.norm() / norm } else { 0.0 };
            for (i, d) in idx.iter().zip(&delta) {
                xp[(i, 0)] += d * scale;
            }
        }
        let (_, se1) = signal_hfer_se(&graph, &xp, config.cutoff.as_ref())?;
        before += se0;
        after += se1;
    }
    let n = layers.len() as f64;
    Ok((after / n - before / n).abs())
}

/// Flat per-layer record for CSV/JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagRecord {
    pub prompt_id: String,
    pub layer: u32,
    pub hfer: f64,
    pub se: f64,
    pub dirichlet: f64,
    pub fiedler: f64,
    pub energy_trace: Option<f64>,
}

impl DiagRecord {
    pub fn from_diagnostics(prompt_id: &str, d: &LayerDiagnostics) -> Self {
        Self {
            prompt_id: prompt_id.to_owned(),
            layer: d.layer_index,
            hfer: d.hfer,
            se: d.se,
            dirichlet: d.dirichlet_energy,
            fiedler: d.fiedler,
            energy_trace: d.energy_trace,
        }
    }
}

/// One trace's early-window scores; the input format of calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub prompt_id: String,
    pub label: Option<u8>,
    pub hfer_mean: f64,
    pub se_mean: f64,
}

impl TraceSummary {
    pub fn new(trace: &ActivationTrace, summary: &EarlyWindowSummary) -> Self {
        Self {
            prompt_id: trace.prompt_id.clone(),
            label: trace.label.map(u8::from),
            hfer_mean: summary.hfer_mean,
            se_mean: summary.se_mean,
        }
    }
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::CountFraction;
    use nalgebra::DVector;

    fn toy_spectrum(t: usize) -> Spectrum {
        Spectrum {
            eigenvalues: (0..t).map(|k| 2.0 * k as f64 / (t - 1) as f64).collect(),
            eigenvectors: DMatrix::identity(t, t),
        }
    }

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn gft_of_basis_vectors() {
        let s = toy_spectrum(5);
        let mut x = vec![0.0; 5];
        x[4] = 1.0;
        let p = gft(&s, &col(&x)).unwrap();
        assert_eq!(p.powers, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        x[0] = 1.0;
        let p = gft(&s, &col(&x)).unwrap();
        assert_eq!(p.powers, vec![1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.total, 2.0);
    }

    #[test]
    fn zero_signal_is_degenerate() {
        let s = toy_spectrum(4);
        assert!(matches!(gft(&s, &col(&[0.0; 4])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn hfer_extremes_and_uniform() {
        let t = 10;
        let s = toy_spectrum(t);
        let cutoff = CountFraction::new(0.2).unwrap();
        let mut x = vec![0.0; t];
        x[t - 1] = 3.0;
        assert_eq!(hfer(&gft(&s, &col(&x)).unwrap(), &s.eigenvalues, &cutoff).unwrap(), 1.0);
        let mut x = vec![0.0; t];
        x[0] = 3.0;
        assert_eq!(hfer(&gft(&s, &col(&x)).unwrap(), &s.eigenvalues, &cutoff).unwrap(), 0.0);
        let p = gft(&s, &col(&[1.0; 10])).unwrap();
        // direct summation: two of ten equal powers
        let direct: f64 = p.powers[8..].iter().sum::<f64>() / p.powers.iter().sum::<f64>();
        let h = hfer(&p, &s.eigenvalues, &cutoff).unwrap();
        assert!((h - direct).abs() < 1e-15);
        assert!((h - 0.2).abs() < 1e-15);
    }

    #[test]
    fn kappa_too_small_for_t() {
        let s = toy_spectrum(4);
        let p = gft(&s, &col(&[1.0; 4])).unwrap();
        let cutoff = CountFraction::new(0.2).unwrap();
        assert!(matches!(hfer(&p, &s.eigenvalues, &cutoff), Err(Error::Cutoff(_))));
    }

    #[test]
    fn entropy_cases() {
        let s = toy_spectrum(8);
        let mut x = vec![0.0; 8];
        x[3] = 1.0;
        assert_eq!(spectral_entropy(&gft(&s, &col(&x)).unwrap()).unwrap(), 0.0);
        let se = spectral_entropy(&gft(&s, &col(&[1.0; 8])).unwrap()).unwrap();
        assert!((se - 8f64.ln()).abs() < 1e-12);
        assert!((se - 2.0794).abs() < 1e-4);
        let mut x = vec![0.0; 8];
        x[0] = 1.0;
        x[1] = 1.0;
        let se = spectral_entropy(&gft(&s, &col(&x)).unwrap()).unwrap();
        assert!((se - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_eigenspace_rotation_invariant() {
        // eigenvalue 1.0 repeated on modes 1 and 2; rotate that pair
        let vals = vec![0.0, 1.0, 1.0, 1.5, 2.0];
        let theta: f64 = 0.7;
        let mut u = DMatrix::<f64>::identity(5, 5);
        u[(1, 1)] = theta.cos();
        u[(2, 1)] = theta.sin();
        u[(1, 2)] = -theta.sin();
        u[(2, 2)] = theta.cos();
        let a = Spectrum {
            eigenvalues: vals.clone(),
            eigenvectors: DMatrix::identity(5, 5),
        };
        let b = Spectrum {
            eigenvalues: vals,
            eigenvectors: u,
        };
        let x = col(&[0.3, 1.0, -0.2, 0.5, 0.1]);
        let cutoff = MassFraction::new(60.0).unwrap();
        let (pa, pb) = (gft(&a, &x).unwrap(), gft(&b, &x).unwrap());
        let ha = hfer(&pa, &a.eigenvalues, &cutoff).unwrap();
        let hb = hfer(&pb, &b.eigenvalues, &cutoff).unwrap();
        assert!((ha - hb).abs() < 1e-10);
        let sa = spectral_entropy(&pa).unwrap();
        let sb = spectral_entropy(&pb).unwrap();
        assert!((sa - sb).abs() < 1e-10);
    }

    #[test]
    fn bound_report_extremes() {
        // eigenvalues sum to T, as for a loop-free normalized Laplacian
        let s = Spectrum {
            eigenvalues: vec![0.0, 0.8, 1.0, 1.1, 1.3, 1.8],
            eigenvectors: DMatrix::identity(6, 6),
        };
        let cutoff = CountFraction::new(0.34).unwrap();
        let mut top = vec![0.0; 6];
        top[5] = 1.0;
        let r = hfer_bound_report(&s, &col(&top), &cutoff).unwrap();
        assert_eq!(r.lhs, 1.0);
        assert!(r.holds);
        let mut bottom = vec![0.0; 6];
        bottom[0] = 1.0;
        let r = hfer_bound_report(&s, &col(&bottom), &cutoff).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.holds);
        let mut below = vec![0.0; 6];
        below[3] = 1.0;
        let r = hfer_bound_report(&s, &col(&below), &cutoff).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.rhs > 0.0 && !r.holds);
    }

    #[test]
    fn early_window_means() {
        let mk = |l: u32, h: f64| LayerDiagnostics {
            layer_index: l,
            hfer: h,
            se: 1.0,
            dirichlet_energy: 0.0,
            fiedler: 0.0,
            energy_trace: None,
        };
        let diags = vec![mk(2, 0.5), mk(3, 0.5), mk(4, 0.55), mk(5, 0.55)];
        let s = early_window(&diags, &[2, 3, 4, 5]).unwrap();
        assert!((s.hfer_mean - 0.525).abs() < 1e-12);
        let mut rev = diags.clone();
        rev.reverse();
        assert_eq!(early_window(&rev, &[5, 4, 3, 2]).unwrap(), s);
        let single = early_window(&diags, &[4]).unwrap();
        assert_eq!(single.hfer_mean, 0.55);
        assert!(matches!(early_window(&diags, &[6]), Err(Error::Window(_))));
    }

    #[test]
    fn window_parsing() {
        assert_eq!(parse_window("2:5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_window("5,2, 3").unwrap(), vec![2, 3, 5]);
        assert!(parse_window("5:2").is_err());
        assert!(parse_window("a:b").is_err());
        assert_eq!(format_window(&[2, 3, 4, 5]), "2:5");
        assert_eq!(format_window(&[2, 5]), "2,5");
    }

    #[test]
    fn settings_round_trip() {
        let reg = StrategyRegistry::builtin();
        let s = DiagSettings::default();
        assert_eq!(s.cutoff, "mass:20");
        assert_eq!(s.aggregation, "mass_weighted");
        let cfg = s.resolve(&reg).unwrap();
        assert_eq!(cfg.settings(), s);
        let bad = DiagSettings {
            laplacian: "unnormalized".into(),
            ..DiagSettings::default()
        };
        assert!(bad.resolve(&reg).is_err());
    }

    #[test]
    fn dirichlet_of_null_vector() {
        use crate::graph::{normalized_laplacian, Affinity, LaplacianKind};
        let mut m = DMatrix::from_element(4, 4, 0.3);
        m[(0, 3)] = 0.1;
        m[(3, 0)] = 0.1;
        let lap = normalized_laplacian(&Affinity::from_matrix(m).unwrap(), LaplacianKind::Symmetric)
            .unwrap();
        let s = eig_spectrum(&lap).unwrap();
        let u1: DVector<f64> = s.eigenvector(0);
        let q = dirichlet_energy(&lap, &DMatrix::from_column_slice(4, 1, u1.as_slice())).unwrap();
        assert!(q.abs() < 1e-9);
        let ut = s.eigenvector(3);
        let q = dirichlet_energy(&lap, &DMatrix::from_column_slice(4, 1, ut.as_slice())).unwrap();
        assert!((q - s.eigenvalues[3]).abs() < 1e-12);
        assert!(matches!(
            dirichlet_energy(&lap, &DMatrix::zeros(3, 1)),
            Err(Error::Size(_))
        ));
    }
}
