//! Interchangeable pieces of the diagnostic pipeline, registered by name.
//!
//! Three strategy families are selectable at runtime:
//!
//! * [`HeadAggregation`] - convex per-head weights used to fold a layer's heads
//!   into one affinity (`uniform`, `mass` / `mass_weighted`).
//! * [`LaplacianNormalization`] - `sym` (I - D^-1/2 A D^-1/2) or `rw` (I - D^-1 A).
//! * [`CutoffRule`] - where the high-frequency band starts (`count:<kappa>`,
//!   `mass:<c percent>`).
//!
//! [`StrategyRegistry::builtin`] holds the stock implementations; callers may
//! register their own under new names.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use crate::graph::{normalized_laplacian, Affinity, Laplacian, LaplacianKind};
use crate::trace::LayerRecord;
use crate::{Error, Result};

pub trait HeadAggregation: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Non-negative weights, one per head, summing to one.
    fn head_weights(&self, layer: &LayerRecord) -> Result<Vec<f64>>;
}

pub trait LaplacianNormalization: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn normalize(&self, affinity: &Affinity) -> Result<Laplacian>;
}

pub trait CutoffRule: Debug + Send + Sync {
    /// Canonical `mode:value` form, e.g. `mass:20`.
    fn label(&self) -> String;

    /// Zero-based index of the first high-frequency mode for an ascending
    /// spectrum. Modes `start..T` form the high band.
    fn high_band_start(&self, eigenvalues: &[f64]) -> Result<usize>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Uniform;

impl HeadAggregation for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn head_weights(&self, layer: &LayerRecord) -> Result<Vec<f64>> {
        if layer.heads == 0 {
            return Err(Error::Degenerate("layer has no heads".into()));
        }
        Ok(vec![1.0 / layer.heads as f64; layer.heads])
    }
}

/// Weights proportional to each head's total attention mass.
#[derive(Debug, Clone, Copy, Default)]
pub struct MassWeighted;

impl HeadAggregation for MassWeighted {
    fn name(&self) -> &'static str {
        "mass_weighted"
    }

    fn head_weights(&self, layer: &LayerRecord) -> Result<Vec<f64>> {
        let masses: Vec<f64> = (0..layer.heads)
            .map(|h| layer.head(h).iter().map(|&v| f64::from(v)).sum())
            .collect();
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate(format!(
                "layer {}: total attention mass is zero",
                layer.layer_index
            )));
        }
        Ok(masses.into_iter().map(|m| m / total).collect())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Symmetric;

impl LaplacianNormalization for Symmetric {
    fn name(&self) -> &'static str {
        "sym"
    }

    fn normalize(&self, affinity: &Affinity) -> Result<Laplacian> {
        normalized_laplacian(affinity, LaplacianKind::Symmetric)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomWalk;

impl LaplacianNormalization for RandomWalk {
    fn name(&self) -> &'static str {
        "rw"
    }

    fn normalize(&self, affinity: &Affinity) -> Result<Laplacian> {
        normalized_laplacian(affinity, LaplacianKind::RandomWalk)
    }
}

/// High band = the top `K = floor(kappa * T)` modes.
#[derive(Debug, Clone, Copy)]
pub struct CountFraction {
    kappa: f64,
}

impl CountFraction {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::Config(format!("kappa must lie in (0, 1), got {kappa}")));
        }
        Ok(Self { kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl CutoffRule for CountFraction {
    fn label(&self) -> String {
        format!("count:{}", self.kappa)
    }

    fn high_band_start(&self, eigenvalues: &[f64]) -> Result<usize> {
        let t = eigenvalues.len();
        let k = (self.kappa * t as f64).floor() as usize;
        if k == 0 {
            return Err(Error::Cutoff(format!(
                "K = floor({} * {t}) = 0; increase kappa or T",
                self.kappa
            )));
        }
        Ok(t - k.min(t))
    }
}

/// High band = modes above the smallest index `j` whose cumulative ascending
/// eigenvalue mass reaches `(1 - c/100)` of the total.
#[derive(Debug, Clone, Copy)]
pub struct MassFraction {
    c_percent: f64,
}

impl MassFraction {
    pub fn new(c_percent: f64) -> Result<Self> {
        if !(c_percent > 0.0 && c_percent < 100.0) {
            return Err(Error::Config(format!(
                "mass cutoff must lie in (0, 100), got {c_percent}"
            )));
        }
        Ok(Self { c_percent })
    }

    pub fn c_percent(&self) -> f64 {
        self.c_percent
    }
}

impl CutoffRule for MassFraction {
    fn label(&self) -> String {
        format!("mass:{}", self.c_percent)
    }

    fn high_band_start(&self, eigenvalues: &[f64]) -> Result<usize> {
        let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
        if !(total > 0.0) {
            return Err(Error::Cutoff("spectrum has no positive mass".into()));
        }
        let target = (1.0 - self.c_percent / 100.0) * total;
        // Slack so that a cumulative sum landing on the target up to rounding
        // counts as reaching it (ties go to the smaller index).
        let slack = 1e-12 * total;
        let mut cum = 0.0;
        for (i, l) in eigenvalues.iter().enumerate() {
            cum += l.max(0.0);
            if cum >= target - slack {
                let start = i + 1;
                if start >= eigenvalues.len() {
                    break;
                }
                return Ok(start);
            }
        }
        Err(Error::Cutoff(format!(
            "mass cutoff {}% leaves an empty high band",
            self.c_percent
        )))
    }
}

/// Parsed `mode:value` cutoff description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffSpec {
    Count { kappa: f64 },
    Mass { c_percent: f64 },
}

impl CutoffSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let (mode, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("cutoff '{s}' is not of the form mode:value")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("cutoff value '{value}' is not a number")))?;
        match mode.trim() {
            "count" => Ok(CutoffSpec::Count { kappa: value }),
            "mass" => Ok(CutoffSpec::Mass { c_percent: value }),
            other => Err(Error::UnknownStrategy {
                kind: "cutoff",
                name: other.to_owned(),
                known: "count, mass".into(),
            }),
        }
    }

    pub fn mode(&self) -> &'static str {
        match self {
            CutoffSpec::Count { .. } => "count",
            CutoffSpec::Mass { .. } => "mass",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            CutoffSpec::Count { kappa } => kappa,
            CutoffSpec::Mass { c_percent } => c_percent,
        }
    }
}

impl std::fmt::Display for CutoffSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.mode(), self.value())
    }
}

type CutoffFactory = fn(f64) -> Result<Arc<dyn CutoffRule>>;

pub struct StrategyRegistry {
    aggregations: BTreeMap<String, Arc<dyn HeadAggregation>>,
    laplacians: BTreeMap<String, Arc<dyn LaplacianNormalization>>,
    cutoffs: BTreeMap<String, CutoffFactory>,
}

impl Debug for StrategyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StrategyRegistry")
            .field("aggregations", &self.aggregations.keys().collect::<Vec<_>>())
            .field("laplacians", &self.laplacians.keys().collect::<Vec<_>>())
            .field("cutoffs", &self.cutoffs.keys().collect::<Vec<_>>())
            .finish()
    }
}

fn known<V>(map: &BTreeMap<String, V>) -> String {
    map.keys().cloned().collect::<Vec<_>>().join(", ")
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            aggregations: BTreeMap::new(),
            laplacians: BTreeMap::new(),
            cutoffs: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        let mass: Arc<dyn HeadAggregation> = Arc::new(MassWeighted);
        reg.register_aggregation("uniform", Arc::new(Uniform));
        reg.register_aggregation("mass", mass.clone());
        reg.register_aggregation("mass_weighted", mass);
        reg.register_laplacian("sym", Arc::new(Symmetric));
        reg.register_laplacian("rw", Arc::new(RandomWalk));
        reg.register_cutoff("count", |v| Ok(Arc::new(CountFraction::new(v)?)));
        reg.register_cutoff("mass", |v| Ok(Arc::new(MassFraction::new(v)?)));
        reg
    }

    pub fn register_aggregation(&mut self, name: &str, strategy: Arc<dyn HeadAggregation>) {
        self.aggregations.insert(name.to_owned(), strategy);
    }

    pub fn register_laplacian(&mut self, name: &str, strategy: Arc<dyn LaplacianNormalization>) {
        self.laplacians.insert(name.to_owned(), strategy);
    }

    pub fn register_cutoff(&mut self, mode: &str, factory: CutoffFactory) {
        self.cutoffs.insert(mode.to_owned(), factory);
    }

    pub fn aggregation(&self, name: &str) -> Result<Arc<dyn HeadAggregation>> {
        self.aggregations
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "aggregation",
                name: name.to_owned(),
                known: known(&self.aggregations),
            })
    }

    pub fn laplacian(&self, name: &str) -> Result<Arc<dyn LaplacianNormalization>> {
        self.laplacians
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "laplacian",
                name: name.to_owned(),
                known: known(&self.laplacians),
            })
    }

    /// Builds a cutoff from its `mode:value` form.
    pub fn cutoff(&self, spec: &str) -> Result<Arc<dyn CutoffRule>> {
        let (mode, value) = spec
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("cutoff '{spec}' is not of the form mode:value")))?;
        let factory = self
            .cutoffs
            .get(mode.trim())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "cutoff",
                name: mode.trim().to_owned(),
                known: known(&self.cutoffs),
            })?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("cutoff value '{value}' is not a number")))?;
        factory(value)
    }

    pub fn aggregation_names(&self) -> Vec<&str> {
        self.aggregations.keys().map(String::as_str).collect()
    }

    pub fn laplacian_names(&self) -> Vec<&str> {
        self.laplacians.keys().map(String::as_str).collect()
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_cutoff_start() {
        let ev: Vec<f64> = (0..10).map(|i| i as f64 * 0.2).collect();
        assert_eq!(CountFraction::new(0.2).unwrap().high_band_start(&ev).unwrap(), 8);
        let short = [0.0, 1.0, 1.5, 2.0];
        assert!(matches!(
            CountFraction::new(0.2).unwrap().high_band_start(&short),
            Err(Error::Cutoff(_))
        ));
    }

    #[test]
    fn mass_cutoff_tie_goes_to_smaller_index() {
        // total 10, target 80% = 8 reached exactly at cumulative index 3 (1+2+2+3)
        let ev = [0.0, 1.0, 2.0, 2.0, 3.0, 2.0];
        let start = MassFraction::new(20.0).unwrap().high_band_start(&ev).unwrap();
        assert_eq!(start, 5);
        // 40% -> target 6, first reached at cumulative 8
        let start = MassFraction::new(40.0).unwrap().high_band_start(&ev).unwrap();
        assert_eq!(start, 5);
        let start = MassFraction::new(50.0).unwrap().high_band_start(&ev).unwrap();
        assert_eq!(start, 4);
    }

    #[test]
    fn mass_cutoff_empty_band_is_error() {
        let ev = [0.0, 0.0, 0.0, 1.0];
        assert!(MassFraction::new(20.0).unwrap().high_band_start(&ev).is_err());
        assert!(MassFraction::new(20.0).unwrap().high_band_start(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn invalid_parameters() {
        assert!(CountFraction::new(0.0).is_err());
        assert!(CountFraction::new(1.0).is_err());
        assert!(MassFraction::new(100.0).is_err());
        assert!(MassFraction::new(-1.0).is_err());
    }

    #[test]
    fn registry_lookup() {
        let reg = StrategyRegistry::builtin();
        assert_eq!(reg.aggregation("mass").unwrap().name(), "mass_weighted");
        assert_eq!(reg.laplacian("rw").unwrap().name(), "rw");
        assert_eq!(reg.cutoff("count:0.2").unwrap().label(), "count:0.2");
        assert_eq!(reg.cutoff("mass:20").unwrap().label(), "mass:20");
        let err = reg.laplacian("combinatorial").unwrap_err();
        assert!(err.to_string().contains("rw, sym"), "{err}");
        assert!(reg.cutoff("mass").is_err());
        assert!(reg.cutoff("energy:3").is_err());
        assert!(reg.cutoff("mass:abc").is_err());
    }

    #[test]
    fn cutoff_spec_parse() {
        assert_eq!(CutoffSpec::parse("count:0.2").unwrap(), CutoffSpec::Count { kappa: 0.2 });
        assert_eq!(CutoffSpec::parse("mass:20").unwrap().to_string(), "mass:20");
        assert!(CutoffSpec::parse("bogus").is_err());
    }
}
