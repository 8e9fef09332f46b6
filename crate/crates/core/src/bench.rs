//! Latency measurements for the diagnostic path.
//!
//! Three segments are timed per layer of a random head-diverse trace:
//! the full pipeline (aggregation through Fiedler value), the
//! eigendecomposition alone, and the post-spectral decision path (GFT, HFER,
//! SE and classification with the spectrum already in hand).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::calibrate::quantile;
use crate::diag::{diagnose_layer, gft, hfer, layer_graph, scalar_signal, spectral_entropy, DiagConfig};
use crate::gate::{classify, Thresholds};
use crate::graph::eig_spectrum;
use crate::synth::random_trace;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub t_grid: Vec<usize>,
    pub heads: usize,
    pub n_layers: usize,
    pub repeats: usize,
    /// Extra repetitions of the (fast) post-spectral path per layer sample.
    pub post_repeats: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            t_grid: vec![64, 128, 256, 512],
            heads: 8,
            n_layers: 4,
            repeats: 5,
            post_repeats: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub tokens: usize,
    pub samples: usize,
    pub full_p50_ms: f64,
    pub full_p95_ms: f64,
    pub eig_p50_ms: f64,
    pub eig_p95_ms: f64,
    pub post_p50_ms: f64,
    pub post_p95_ms: f64,
    /// All layers of one trace, full pipeline.
    pub trace_p50_ms: f64,
    pub trace_p95_ms: f64,
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn p50_p95(samples: &[f64]) -> Result<(f64, f64)> {
    Ok((quantile(samples, 0.5)?, quantile(samples, 0.95)?))
}

pub fn bench_latency(options: &BenchOptions, config: &DiagConfig) -> Result<Vec<LatencyRow>> {
    if options.t_grid.is_empty() || options.repeats == 0 || options.n_layers == 0 || options.heads == 0 {
        return Err(Error::Parameter(
            "bench needs a non-empty T grid and positive heads, layers and repeats".into(),
        ));
    }
    let thresholds = Thresholds::new(0.15, 0.30, "bench")?;
    let mut rows = Vec::with_capacity(options.t_grid.len());
    for &t in &options.t_grid {
        let trace = random_trace(options.seed ^ t as u64, t, options.heads, options.n_layers);
        let mut full = Vec::new();
        let mut eig = Vec::new();
        let mut post = Vec::new();
        let mut per_trace = Vec::new();
        // one untimed pass to warm caches and allocator
        diagnose_layer(&trace.layers[0], config)?;
        for _ in 0..options.repeats {
            let mut trace_ms = 0.0;
            for layer in &trace.layers {
                let start = Instant::now();
                std::hint::black_box(diagnose_layer(layer, config)?);
                let elapsed = ms(start);
                full.push(elapsed);
                trace_ms += elapsed;

                let graph = layer_graph(layer, config)?;
                let start = Instant::now();
                std::hint::black_box(eig_spectrum(&graph.laplacian)?);
                eig.push(ms(start));

                let signal = scalar_signal(layer);
                for _ in 0..options.post_repeats.max(1) {
                    let start = Instant::now();
                    let coords = graph.laplacian.spectral_coordinates(&signal);
                    let powers = gft(&graph.spectrum, &coords)?;
                    let h = hfer(&powers, &graph.spectrum.eigenvalues, config.cutoff.as_ref())?;
                    let se = spectral_entropy(&powers)?;
                    std::hint::black_box((classify(h, &thresholds)?, se));
                    post.push(ms(start));
                }
            }
            per_trace.push(trace_ms);
        }
        let (full_p50_ms, full_p95_ms) = p50_p95(&full)?;
        let (eig_p50_ms, eig_p95_ms) = p50_p95(&eig)?;
        let (post_p50_ms, post_p95_ms) = p50_p95(&post)?;
        let (trace_p50_ms, trace_p95_ms) = p50_p95(&per_trace)?;
        log::info!("bench T={t}: full p95 {full_p95_ms:.3} ms, post p95 {post_p95_ms:.4} ms");
        rows.push(LatencyRow {
            tokens: t,
            samples: full.len(),
            full_p50_ms,
            full_p95_ms,
            eig_p50_ms,
            eig_p95_ms,
            post_p50_ms,
            post_p95_ms,
            trace_p50_ms,
            trace_p95_ms,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_reports_positive_times() {
        let opts = BenchOptions {
            t_grid: vec![16, 32],
            heads: 2,
            n_layers: 2,
            repeats: 2,
            post_repeats: 2,
            seed: 1,
        };
        let rows = bench_latency(&opts, &DiagConfig::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].tokens, 16);
        for r in rows {
            assert!(r.full_p50_ms > 0.0 && r.eig_p50_ms > 0.0 && r.post_p50_ms > 0.0);
            assert!(r.full_p50_ms <= r.full_p95_ms);
            assert_eq!(r.samples, 4);
        }
    }

    #[test]
    fn empty_grid_rejected() {
        let opts = BenchOptions {
            t_grid: vec![],
            ..BenchOptions::default()
        };
        assert!(bench_latency(&opts, &DiagConfig::default()).is_err());
    }
}
