//! Robustness sweeps over cutoffs, early windows, Laplacian variants and
//! head aggregation schemes.
//!
//! Contrasts are always contradicted minus supported. Spectra are computed
//! once per (trace, layer, graph variant); cutoffs and windows only change how
//! the cached modal powers are read.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diag::{gft, hfer, layer_graph, DiagConfig, ModalPowers};
use crate::graph::fiedler;
use crate::stats::{bootstrap_ci, bootstrap_two_sample, correlation, mean, mean_difference, BootstrapOptions, ConfidenceInterval, CorrelationMethod};
use crate::strategy::{CutoffRule, MassFraction, StrategyRegistry};
use crate::trace::ActivationTrace;
use crate::{Error, Result};

pub const DEFAULT_C_GRID: [f64; 6] = [10.0, 15.0, 20.0, 25.0, 30.0, 40.0];

pub fn default_windows() -> Vec<Vec<u32>> {
    vec![vec![1, 2, 3, 4], vec![2, 3, 4, 5], vec![3, 4, 5, 6]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Cutoff,
    Window,
    LaplacianVariant,
    Aggregation,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Cutoff => "cutoff",
            SweepAxis::Window => "window",
            SweepAxis::LaplacianVariant => "laplacian_variant",
            SweepAxis::Aggregation => "aggregation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerContrast {
    pub layer: u32,
    pub hfer: f64,
    pub fiedler: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub setting: String,
    pub window: Vec<u32>,
    /// Early-window HFER mean of each trace, in dataset order.
    pub per_trace_hfer: Vec<f64>,
    /// Early-window Fiedler mean of each trace, in dataset order.
    pub per_trace_fiedler: Vec<f64>,
    pub supported: ConfidenceInterval,
    pub contradicted: ConfidenceInterval,
    /// Contradicted minus supported early-window HFER.
    pub contrast: ConfidenceInterval,
    /// Per-layer contrasts over every layer shared by the dataset.
    pub per_layer: Vec<LayerContrast>,
    /// Window layer with the largest |HFER contrast| (ties to the smaller index).
    pub peak_layer: u32,
    /// Window layer with the largest |Fiedler contrast|.
    pub fiedler_peak_layer: u32,
    /// Cutoff sweeps only: largest relative deviation of a class mean from
    /// the c = 20 baseline.
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// Cells whose early-window HFER contrast has the baseline's sign.
    pub sign_agreement_rate: f64,
    /// Cells whose HFER peak layer equals the baseline's.
    pub peak_layer_agreement_rate: f64,
    /// (cell, layer) pairs whose Fiedler contrast has the baseline's sign.
    pub fiedler_sign_agreement_rate: f64,
    pub fiedler_peak_agreement_rate: f64,
    /// Smallest correlation, across cells, of per-trace early-window Fiedler
    /// means with the baseline; `None` when a series has no variance.
    pub fiedler_correlation: Option<f64>,
    /// Same for early-window HFER means.
    pub hfer_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub baseline: String,
    pub cells: Vec<SweepCell>,
    pub agreement: Option<Agreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub setting: String,
    pub class: String,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub sign_agreement: bool,
    pub peak_layer: u32,
}

impl SweepReport {
    pub fn baseline_cell(&self) -> &SweepCell {
        self.cells
            .iter()
            .find(|c| c.setting == self.baseline)
            .unwrap_or(&self.cells[0])
    }

    pub fn max_deviation(&self) -> Option<f64> {
        self.cells
            .iter()
            .filter_map(|c| c.deviation)
            .fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.max(d))))
    }

    pub fn rows(&self) -> Vec<SweepRow> {
        let base_sign = sign(self.baseline_cell().contrast.estimate);
        let mut out = Vec::new();
        for cell in &self.cells {
            let agree = sign(cell.contrast.estimate) == base_sign;
            for (class, ci) in [
                ("supported", &cell.supported),
                ("contradicted", &cell.contradicted),
                ("contrast", &cell.contrast),
            ] {
                out.push(SweepRow {
                    axis: self.axis.as_str().into(),
                    setting: cell.setting.clone(),
                    class: class.into(),
                    mean: ci.estimate,
                    ci_lo: ci.lo,
                    ci_hi: ci.hi,
                    sign_agreement: agree,
                    peak_layer: cell.peak_layer,
                });
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        crate::diag::write_csv(&self.rows(), sink)
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub config: DiagConfig,
    pub bootstrap: BootstrapOptions,
}

/// Bootstrap seed for a cell: a fixed mix of the base seed and the setting
/// name, so a cell does not depend on which other cells were requested.
fn cell_seed(seed: u64, setting: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in setting.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed
}

struct LayerCache {
    layer: u32,
    eigenvalues: Vec<f64>,
    powers: ModalPowers,
    fiedler: f64,
}

struct TraceCache {
    label: bool,
    layers: Vec<LayerCache>,
}

impl TraceCache {
    fn layer(&self, l: u32) -> &LayerCache {
        self.layers
            .iter()
            .find(|c| c.layer == l)
            .expect("layer cached for every trace")
    }
}

fn labels(dataset: &[ActivationTrace]) -> Result<Vec<bool>> {
    if dataset.is_empty() {
        return Err(Error::Input("sweep needs a non-empty dataset".into()));
    }
    let labels = dataset
        .iter()
        .map(|t| {
            t.label.ok_or_else(|| {
                Error::Input(format!("trace '{}' has no label", t.prompt_id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::Class("sweep needs both supported and contradicted traces".into()));
    }
    Ok(labels)
}

fn common_layers(dataset: &[ActivationTrace]) -> Vec<u32> {
    if dataset.is_empty() {
        return Vec::new();
    }
    let mut common: BTreeSet<u32> = dataset[0].layer_indices().into_iter().collect();
    for t in &dataset[1..] {
        let mine: BTreeSet<u32> = t.layer_indices().into_iter().collect();
        common = common.intersection(&mine).cloned().collect();
    }
    common.into_iter().collect()
}

fn require_layers(dataset: &[ActivationTrace], windows: &[Vec<u32>]) -> Result<()> {
    let needed: BTreeSet<u32> = windows.iter().flatten().cloned().collect();
    let deficient: Vec<String> = dataset
        .iter()
        .filter(|t| needed.iter().any(|&l| t.layer(l).is_none()))
        .map(|t| t.prompt_id.clone())
        .collect();
    if !deficient.is_empty() {
        let shown: Vec<&str> = deficient.iter().take(10).map(String::as_str).collect();
        return Err(Error::Window(format!(
            "{} trace(s) lack layers {:?}: {}{}",
            deficient.len(),
            needed,
            shown.join(", "),
            if deficient.len() > 10 { ", ..." } else { "" }
        )));
    }
    Ok(())
}

fn cache_dataset(dataset: &[ActivationTrace], layers: &[u32], config: &DiagConfig) -> Result<Vec<TraceCache>> {
    let labels = labels(dataset)?;
    dataset
        .par_iter()
        .zip(labels)
        .map(|(trace, label)| {
            let layers = layers
                .iter()
                .map(|&l| {
                    let record = trace.layer(l).expect("checked by require_layers");
                    let run = || -> Result<LayerCache> {
                        let graph = layer_graph(record, config)?;
                        let signal = match config.signal {
                            crate::diag::SignalSource::Scalar => crate::diag::scalar_signal(record),
                            crate::diag::SignalSource::HiddenMatrix => {
                                crate::diag::hidden_signal(record).ok_or_else(|| {
                                    Error::Config("hidden_matrix signal but layer has no hidden matrix".into())
                                })?
                            }
                        };
                        let coords = graph.laplacian.spectral_coordinates(&signal);
                        Ok(LayerCache {
                            layer: l,
                            powers: gft(&graph.spectrum, &coords)?,
                            fiedler: fiedler(&graph.spectrum)?,
                            eigenvalues: graph.spectrum.eigenvalues,
                        })
                    };
                    run().map_err(|e| {
                        log::warn!("sweep: trace '{}' failed at layer {l}", trace.prompt_id);
                        e.at_layer(l)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TraceCache { label, layers })
        })
        .collect()
}

fn class_split(values: &[f64], caches: &[TraceCache]) -> (Vec<f64>, Vec<f64>) {
    let mut supported = Vec::new();
    let mut contradicted = Vec::new();
    for (v, c) in values.iter().zip(caches) {
        if c.label {
            supported.push(*v);
        } else {
            contradicted.push(*v);
        }
    }
    (supported, contradicted)
}

/// Index of the largest |value| over `window` (ties to the smaller layer).
fn peak(per_layer: &[LayerContrast], window: &[u32], key: impl Fn(&LayerContrast) -> f64) -> u32 {
    let mut best: Option<(u32, f64)> = None;
    let mut layers: Vec<&LayerContrast> = per_layer.iter().filter(|c| window.contains(&c.layer)).collect();
    layers.sort_by_key(|c| c.layer);
    for c in layers {
        let v = key(c).abs();
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((c.layer, v));
        }
    }
    best.map(|b| b.0).unwrap_or(0)
}

fn build_cell(
    setting: &str,
    caches: &[TraceCache],
    all_layers: &[u32],
    window: &[u32],
    cutoff: &dyn CutoffRule,
    bootstrap: &BootstrapOptions,
) -> Result<SweepCell> {
    let mut window = window.to_vec();
    window.sort_unstable();
    window.dedup();
    let n = window.len() as f64;
    // per trace, per layer HFER under this cutoff
    let layer_hfer: Vec<Vec<(u32, f64)>> = caches
        .iter()
        .map(|c| {
            all_layers
                .iter()
                .map(|&l| {
                    let lc = c.layer(l);
                    Ok((l, hfer(&lc.powers, &lc.eigenvalues, cutoff).map_err(|e| e.at_layer(l))?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let window_mean = |rows: &[(u32, f64)]| -> f64 {
        window
            .iter()
            .map(|l| rows.iter().find(|r| r.0 == *l).expect("window layer cached").1)
            .sum::<f64>()
            / n
    };
    let per_trace_hfer: Vec<f64> = layer_hfer.iter().map(|rows| window_mean(rows)).collect();
    let per_trace_fiedler: Vec<f64> = caches
        .iter()
        .map(|c| window.iter().map(|&l| c.layer(l).fiedler).sum::<f64>() / n)
        .collect();

    let per_layer = all_layers
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let h: Vec<f64> = layer_hfer.iter().map(|rows| rows[k].1).collect();
            let f: Vec<f64> = caches.iter().map(|c| c.layer(l).fiedler).collect();
            let (hs, hc) = class_split(&h, caches);
            let (fs, fc) = class_split(&f, caches);
            LayerContrast {
                layer: l,
                hfer: mean(&hc) - mean(&hs),
                fiedler: mean(&fc) - mean(&fs),
            }
        })
        .collect::<Vec<_>>();

    let (sup, con) = class_split(&per_trace_hfer, caches);
    let opts = bootstrap.with_seed(cell_seed(bootstrap.seed, setting));
    Ok(SweepCell {
        setting: setting.to_string(),
        supported: bootstrap_ci(&sup, mean, &opts.with_seed(opts.seed ^ 1))?,
        contradicted: bootstrap_ci(&con, mean, &opts.with_seed(opts.seed ^ 2))?,
        contrast: bootstrap_two_sample(&con, &sup, mean_difference, &opts)?,
        peak_layer: peak(&per_layer, &window, |c| c.hfer),
        fiedler_peak_layer: peak(&per_layer, &window, |c| c.fiedler),
        per_layer,
        per_trace_hfer,
        per_trace_fiedler,
        window,
        deviation: None,
    })
}

fn safe_correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    correlation(x, y, CorrelationMethod::Pearson).ok()
}

fn agreement(cells: &[SweepCell], baseline: &SweepCell) -> Agreement {
    let n = cells.len() as f64;
    let base_sign = sign(baseline.contrast.estimate);
    let sign_rate = cells.iter().filter(|c| sign(c.contrast.estimate) == base_sign).count() as f64 / n;
    let peak_rate = cells.iter().filter(|c| c.peak_layer == baseline.peak_layer).count() as f64 / n;
    let fiedler_peak_rate = cells
        .iter()
        .filter(|c| c.fiedler_peak_layer == baseline.fiedler_peak_layer)
        .count() as f64
        / n;
    let mut pairs = 0usize;
    let mut agree = 0usize;
    for c in cells {
        for lc in &c.per_layer {
            if let Some(b) = baseline.per_layer.iter().find(|b| b.layer == lc.layer) {
                pairs += 1;
                if sign(lc.fiedler) == sign(b.fiedler) {
                    agree += 1;
                }
            }
        }
    }
    let min_corr = |f: &dyn Fn(&SweepCell) -> &[f64]| -> Option<f64> {
        cells
            .iter()
            .map(|c| safe_correlation(f(baseline), f(c)))
            .try_fold(1.0f64, |acc, r| r.map(|r| acc.min(r)))
    };
    Agreement {
        sign_agreement_rate: sign_rate,
        peak_layer_agreement_rate: peak_rate,
        fiedler_sign_agreement_rate: if pairs == 0 { 1.0 } else { agree as f64 / pairs as f64 },
        fiedler_peak_agreement_rate: fiedler_peak_rate,
        fiedler_correlation: min_corr(&|c| &c.per_trace_fiedler),
        hfer_correlation: min_corr(&|c| &c.per_trace_hfer),
    }
}

fn relative_deviation(value: f64, baseline: f64) -> f64 {
    if baseline.abs() < 1e-9 {
        (value - baseline).abs()
    } else {
        (value - baseline).abs() / baseline.abs()
    }
}

fn format_c(c: f64) -> String {
    format!("mass:{c}")
}

/// Early-window contrasts for each mass cutoff in `c_grid`, with deviations
/// from the c = 20 baseline.
pub fn cutoff_sweep(dataset: &[ActivationTrace], c_grid: &[f64], options: &SweepOptions) -> Result<SweepReport> {
    if c_grid.is_empty() {
        return Err(Error::Parameter("cutoff grid is empty".into()));
    }
    let window = options.config.window.clone();
    require_layers(dataset, std::slice::from_ref(&window))?;
    let layers = common_layers(dataset);
    let caches = cache_dataset(dataset, &layers, &options.config)?;
    let baseline_rule = MassFraction::new(crate::diag::DEFAULT_MASS_CUTOFF)?;
    let baseline_name = format_c(crate::diag::DEFAULT_MASS_CUTOFF);
    let baseline = build_cell(&baseline_name, &caches, &layers, &window, &baseline_rule, &options.bootstrap)?;
    let mut cells = Vec::with_capacity(c_grid.len());
    for &c in c_grid {
        let rule = MassFraction::new(c)?;
        let setting = format_c(c);
        let mut cell = if setting == baseline_name {
            baseline.clone()
        } else {
            build_cell(&setting, &caches, &layers, &window, &rule, &options.bootstrap)?
        };
        cell.deviation = Some(
            relative_deviation(cell.supported.estimate, baseline.supported.estimate)
                .max(relative_deviation(cell.contradicted.estimate, baseline.contradicted.estimate)),
        );
        cells.push(cell);
    }
    let agreement = agreement(&cells, &baseline);
    Ok(SweepReport {
        axis: SweepAxis::Cutoff,
        baseline: baseline_name,
        cells,
        agreement: Some(agreement),
    })
}

/// Early-window contrasts for each window, compared against `2:5`.
pub fn window_shift(dataset: &[ActivationTrace], windows: &[Vec<u32>], options: &SweepOptions) -> Result<SweepReport> {
    if windows.is_empty() || windows.iter().any(|w| w.is_empty()) {
        return Err(Error::Window("window list is empty or holds an empty window".into()));
    }
    let base_window = crate::diag::DEFAULT_WINDOW.to_vec();
    let mut all = windows.to_vec();
    all.push(base_window.clone());
    require_layers(dataset, &all)?;
    let layers = common_layers(dataset);
    let caches = cache_dataset(dataset, &layers, &options.config)?;
    let cutoff = options.config.cutoff.as_ref();
    let name = |w: &[u32]| format!("window:{}", crate::diag::format_window(w));
    let baseline_name = name(&base_window);
    let baseline = build_cell(&baseline_name, &caches, &layers, &base_window, cutoff, &options.bootstrap)?;
    let cells = windows
        .iter()
        .map(|w| build_cell(&name(w), &caches, &layers, w, cutoff, &options.bootstrap))
        .collect::<Result<Vec<_>>>()?;
    let agreement = agreement(&cells, &baseline);
    Ok(SweepReport {
        axis: SweepAxis::Window,
        baseline: baseline_name,
        cells,
        agreement: Some(agreement),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    /// `sym` (baseline) vs `rw`, both with the configured aggregation.
    pub laplacian: SweepReport,
    /// `mass_weighted` (baseline) vs `uniform`, both with the configured Laplacian.
    pub aggregation: SweepReport,
}

/// Contrasts under both Laplacian normalizations and both head aggregations.
pub fn variant_compare(dataset: &[ActivationTrace], options: &SweepOptions) -> Result<VariantReport> {
    let registry = StrategyRegistry::builtin();
    let window = options.config.window.clone();
    require_layers(dataset, std::slice::from_ref(&window))?;
    let layers = common_layers(dataset);
    let cutoff = Arc::clone(&options.config.cutoff);
    let run = |setting: &str, config: DiagConfig| -> Result<SweepCell> {
        let caches = cache_dataset(dataset, &layers, &config)?;
        build_cell(setting, &caches, &layers, &window, cutoff.as_ref(), &options.bootstrap)
    };
    let base = options.config.clone();
    let lap_cells = ["sym", "rw"]
        .iter()
        .map(|&name| {
            let config = base.clone().with_laplacian(registry.laplacian(name)?);
            run(&format!("laplacian:{name}"), config)
        })
        .collect::<Result<Vec<_>>>()?;
    let agg_cells = ["mass_weighted", "uniform"]
        .iter()
        .map(|&name| {
            let config = base.clone().with_aggregation(registry.aggregation(name)?);
            run(&format!("aggregation:{name}"), config)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = |axis, cells: Vec<SweepCell>| {
        let agreement = agreement(&cells, &cells[0]);
        SweepReport {
            axis,
            baseline: cells[0].setting.clone(),
            cells,
            agreement: Some(agreement),
        }
    };
    Ok(VariantReport {
        laplacian: report(SweepAxis::LaplacianVariant, lap_cells),
        aggregation: report(SweepAxis::Aggregation, agg_cells),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_dataset, DatasetSpec};

    fn small() -> Vec<ActivationTrace> {
        synth_dataset(6, &DatasetSpec::default()).unwrap()
    }

    fn quick() -> SweepOptions {
        SweepOptions {
            bootstrap: BootstrapOptions {
                n_resamples: 200,
                ..BootstrapOptions::default()
            },
            ..SweepOptions::default()
        }
    }

    #[test]
    fn singleton_grid_has_zero_deviation() {
        let r = cutoff_sweep(&small(), &[20.0], &quick()).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.cells[0].deviation, Some(0.0));
        assert!(r.cells[0].contrast.estimate < 0.0);
    }

    #[test]
    fn baseline_window_agrees_with_itself() {
        let r = window_shift(&small(), &[vec![2, 3, 4, 5]], &quick()).unwrap();
        let a = r.agreement.unwrap();
        assert_eq!(a.sign_agreement_rate, 1.0);
        assert_eq!(a.peak_layer_agreement_rate, 1.0);
    }

    #[test]
    fn missing_window_layers_are_reported() {
        let spec = DatasetSpec {
            n_layers: 4,
            ..DatasetSpec::default()
        };
        let ds = synth_dataset(2, &spec).unwrap();
        let err = window_shift(&ds, &[vec![3, 4, 5, 6]], &quick()).unwrap_err();
        assert!(matches!(err, Error::Window(ref m) if m.contains("supported-0000")), "{err}");
    }

    #[test]
    fn unlabeled_dataset_rejected() {
        let mut ds = small();
        ds[0].label = None;
        assert!(cutoff_sweep(&ds, &[20.0], &quick()).is_err());
    }

    #[test]
    fn peak_ties_go_to_smaller_layer() {
        let per = vec![
            LayerContrast { layer: 3, hfer: -0.5, fiedler: 0.0 },
            LayerContrast { layer: 2, hfer: 0.5, fiedler: 0.0 },
            LayerContrast { layer: 4, hfer: 0.1, fiedler: 0.0 },
        ];
        assert_eq!(peak(&per, &[2, 3, 4], |c| c.hfer), 2);
        assert_eq!(peak(&per, &[3, 4], |c| c.hfer), 3);
    }

    #[test]
    fn rows_cover_three_classes_per_cell() {
        let r = cutoff_sweep(&small(), &[10.0, 20.0], &quick()).unwrap();
        let rows = r.rows();
        assert_eq!(rows.len(), 6);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("axis,setting,class,mean,ci_lo,ci_hi,sign_agreement,peak_layer"));
    }
}
