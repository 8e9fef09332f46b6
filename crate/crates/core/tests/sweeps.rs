use sgks::diag::{summarize, DiagConfig};
use sgks::sweeps::{cutoff_sweep, variant_compare, window_shift, SweepOptions, DEFAULT_C_GRID};
use sgks::synth::{random_trace, synth_dataset, DatasetSpec};
use sgks::trace::ActivationTrace;
use sgks::Error;

fn synthetic() -> Vec<ActivationTrace> {
    let spec = DatasetSpec {
        base_seed: 77,
        ..DatasetSpec::default()
    };
    synth_dataset(12, &spec).unwrap()
}

#[test]
fn baseline_cell_equals_direct_diagnostics() {
    let ds = synthetic();
    let report = cutoff_sweep(&ds, &DEFAULT_C_GRID, &SweepOptions::default()).unwrap();
    let base = report.baseline_cell();
    assert_eq!(base.setting, "mass:20");
    let direct: Vec<f64> = ds
        .iter()
        .map(|t| summarize(t, &DiagConfig::default()).unwrap().hfer_mean)
        .collect();
    assert_eq!(base.per_trace_hfer, direct);
    assert_eq!(base.deviation, Some(0.0));
    assert_eq!(report.cells.len(), DEFAULT_C_GRID.len());
}

#[test]
fn singleton_grid_has_one_cell_and_zero_deviation() {
    let report = cutoff_sweep(&synthetic(), &[20.0], &SweepOptions::default()).unwrap();
    assert_eq!(report.cells.len(), 1);
    assert_eq!(report.max_deviation(), Some(0.0));
}

#[test]
fn single_window_agrees_trivially() {
    let report = window_shift(&synthetic(), &[vec![2, 3, 4, 5]], &SweepOptions::default()).unwrap();
    assert_eq!(report.agreement.unwrap().sign_agreement_rate, 1.0);
}

#[test]
fn short_traces_fail_the_window_shift() {
    let spec = DatasetSpec {
        n_layers: 4,
        ..DatasetSpec::default()
    };
    let ds = synth_dataset(3, &spec).unwrap();
    let err = window_shift(&ds, &[vec![3, 4, 5, 6]], &SweepOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Window(_)), "{err}");
    assert!(err.to_string().contains("supported-0000"), "{err}");
}

#[test]
fn csv_output_is_reproducible() {
    let ds = synthetic();
    let render = || {
        let mut buf = Vec::new();
        cutoff_sweep(&ds, &[10.0, 20.0, 30.0], &SweepOptions::default())
            .unwrap()
            .write_csv(&mut buf)
            .unwrap();
        String::from_utf8(buf).unwrap()
    };
    let a = render();
    assert_eq!(a, render());
    assert!(a.starts_with("axis,setting,class,mean,ci_lo,ci_hi,sign_agreement,peak_layer"));
    assert_eq!(a.lines().count(), 1 + 3 * 3);
}

#[test]
fn variants_agree_on_head_diverse_random_traces() {
    // 200 random traces, labels alternating so both classes are present
    let ds: Vec<ActivationTrace> = (0..200u64)
        .map(|i| {
            let mut t = random_trace(20_000 + i, 14 + (i as usize % 7), 3, 6);
            t.label = Some(i % 2 == 0);
            t
        })
        .collect();
    let report = variant_compare(&ds, &SweepOptions::default()).unwrap();
    let lap = report.laplacian.agreement.unwrap();
    println!(
        "rw vs sym: fiedler sign {:.3}, fiedler peak {:.3}, fiedler corr {:?}; uniform vs mass: sign {:.3}",
        lap.fiedler_sign_agreement_rate,
        lap.fiedler_peak_agreement_rate,
        lap.fiedler_correlation,
        report.aggregation.agreement.as_ref().unwrap().sign_agreement_rate
    );
    assert!(lap.fiedler_sign_agreement_rate >= 0.9);
    assert!((lap.fiedler_correlation.unwrap() - 1.0).abs() < 1e-8);
    assert!(report.aggregation.agreement.unwrap().sign_agreement_rate >= 0.9);
}

#[test]
fn identical_heads_make_aggregations_coincide() {
    let report = variant_compare(&synthetic(), &SweepOptions::default()).unwrap();
    let agg = report.aggregation.agreement.unwrap();
    assert_eq!(agg.sign_agreement_rate, 1.0);
    assert_eq!(agg.fiedler_sign_agreement_rate, 1.0);
    let (a, b) = (&report.aggregation.cells[0], &report.aggregation.cells[1]);
    for (x, y) in a.per_trace_hfer.iter().zip(&b.per_trace_hfer) {
        assert!((x - y).abs() < 1e-12);
    }
}
