use sgks::bench::{bench_latency, BenchOptions};
use sgks::diag::DiagConfig;

#[test]
fn eigendecomposition_time_grows_with_tokens() {
    let opts = BenchOptions {
        t_grid: vec![32, 64, 128, 256],
        heads: 2,
        n_layers: 2,
        repeats: 3,
        post_repeats: 5,
        seed: 3,
    };
    let rows = bench_latency(&opts, &DiagConfig::default()).unwrap();
    assert_eq!(rows.iter().map(|r| r.tokens).collect::<Vec<_>>(), opts.t_grid);
    for w in rows.windows(2) {
        assert!(
            w[1].eig_p50_ms > w[0].eig_p50_ms,
            "T={} eig {:.3} ms vs T={} eig {:.3} ms",
            w[0].tokens,
            w[0].eig_p50_ms,
            w[1].tokens,
            w[1].eig_p50_ms
        );
    }
    // doubling T should more than double the cubic-cost segment at the top of the grid
    let (a, b) = (&rows[2], &rows[3]);
    assert!(b.eig_p50_ms > 2.0 * a.eig_p50_ms);
}
