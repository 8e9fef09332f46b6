//! Token graphs built from attention: affinity, normalized Laplacian, spectrum.
//!
//! All arithmetic is `f64` even though traces store `f32`.

use nalgebra::{DMatrix, DVector};

use crate::strategy::HeadAggregation;
use crate::trace::LayerRecord;
use crate::{Error, Result};

/// Self-loop weight given to isolated tokens so the degree matrix stays invertible.
pub const ZERO_DEGREE_SELF_LOOP: f64 = 1e-8;

/// Tolerance on `L_sym` symmetry accepted by [`eig_spectrum`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Head-aggregated, symmetrized token affinity.
#[derive(Debug, Clone)]
pub struct Affinity {
    pub matrix: DMatrix<f64>,
    pub scheme: &'static str,
    pub head_weights: Vec<f64>,
}

impl Affinity {
    pub fn tokens(&self) -> usize {
        self.matrix.nrows()
    }

    /// Wraps an explicit symmetric matrix (tests, hand-built graphs).
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Size(format!(
                "affinity is {} x {}, expected square",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self {
            matrix,
            scheme: "explicit",
            head_weights: vec![1.0],
        })
    }
}

/// Folds the heads of `layer` into `1/2 (M + M^T)` with `M = sum_h alpha_h A_h`.
pub fn aggregate_heads(layer: &LayerRecord, scheme: &dyn HeadAggregation) -> Result<Affinity> {
    layer.check_shape()?;
    if layer.attention.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Validation(format!(
            "layer {}: attention must be finite and non-negative",
            layer.layer_index
        )));
    }
    if layer.attention.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate(format!(
            "layer {}: attention tensor is all zeros",
            layer.layer_index
        )));
    }
    let weights = scheme.head_weights(layer)?;
    if weights.len() != layer.heads {
        return Err(Error::Size(format!(
            "{} returned {} weights for {} heads",
            scheme.name(),
            weights.len(),
            layer.heads
        )));
    }
    let t = layer.tokens;
    let mut mixed = vec![0.0f64; t * t];
    for (h, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (acc, &a) in mixed.iter_mut().zip(layer.head(h)) {
            *acc += w * f64::from(a);
        }
    }
    let mut matrix = DMatrix::<f64>::zeros(t, t);
    for i in 0..t {
        matrix[(i, i)] = mixed[i * t + i];
        for j in 0..i {
            let v = 0.5 * (mixed[i * t + j] + mixed[j * t + i]);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    Ok(Affinity {
        matrix,
        scheme: scheme.name(),
        head_weights: weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    /// `I - D^{-1/2} A D^{-1/2}`
    Symmetric,
    /// `I - D^{-1} A`
    RandomWalk,
}

#[derive(Debug, Clone)]
pub struct Laplacian {
    pub matrix: DMatrix<f64>,
    pub kind: LaplacianKind,
    pub degrees: Vec<f64>,
}

impl Laplacian {
    pub fn tokens(&self) -> usize {
        self.matrix.nrows()
    }

    /// Signal coordinates in which the symmetric eigenbasis is orthonormal.
    ///
    /// For `rw` the eigenvectors are orthonormal under the degree-weighted
    /// inner product, so the signal is scaled by `D^{1/2}`; `sym` is the identity.
    pub fn spectral_coordinates(&self, signal: &DMatrix<f64>) -> DMatrix<f64> {
        match self.kind {
            LaplacianKind::Symmetric => signal.clone(),
            LaplacianKind::RandomWalk => {
                let mut out = signal.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= self.degrees[i].sqrt();
                }
                out
            }
        }
    }

    /// `Tr(X^T L X)` for `sym`, `Tr(X^T D L_rw X)` for `rw`.
    pub fn quadratic_form(&self, signal: &DMatrix<f64>) -> Result<f64> {
        if signal.nrows() != self.tokens() {
            return Err(Error::Size(format!(
                "signal has {} rows, Laplacian is {} x {}",
                signal.nrows(),
                self.tokens(),
                self.tokens()
            )));
        }
        let lx = &self.matrix * signal;
        let mut total = 0.0;
        for c in 0..signal.ncols() {
            for i in 0..signal.nrows() {
                let w = match self.kind {
                    LaplacianKind::Symmetric => 1.0,
                    LaplacianKind::RandomWalk => self.degrees[i],
                };
                total += signal[(i, c)] * w * lx[(i, c)];
            }
        }
        Ok(total)
    }
}

/// Builds the normalized Laplacian of `affinity`.
///
/// Isolated tokens receive a self-loop of [`ZERO_DEGREE_SELF_LOOP`] first.
pub fn normalized_laplacian(affinity: &Affinity, kind: LaplacianKind) -> Result<Laplacian> {
    let a = &affinity.matrix;
    if !a.is_square() {
        return Err(Error::Size(format!(
            "affinity is {} x {}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    if let Some(v) = a.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Validation(format!(
            "affinity entries must be finite and non-negative, found {v}"
        )));
    }
    let t = a.nrows();
    let mut a = a.clone();
    let mut degrees: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
    for (i, d) in degrees.iter_mut().enumerate() {
        if *d <= 0.0 {
            a[(i, i)] += ZERO_DEGREE_SELF_LOOP;
            *d = ZERO_DEGREE_SELF_LOOP;
        }
    }
    let mut matrix = DMatrix::<f64>::identity(t, t);
    match kind {
        LaplacianKind::Symmetric => {
            let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
            for i in 0..t {
                for j in 0..=i {
                    let v = a[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
                    matrix[(i, j)] -= v;
                    if i != j {
                        matrix[(j, i)] -= v;
                    }
                }
            }
        }
        LaplacianKind::RandomWalk => {
            for i in 0..t {
                for j in 0..t {
                    matrix[(i, j)] -= a[(i, j)] / degrees[i];
                }
            }
        }
    }
    Ok(Laplacian {
        matrix,
        kind,
        degrees,
    })
}

/// Ascending eigenvalues with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn tokens(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, k: usize) -> DVector<f64> {
        self.eigenvectors.column(k).into_owned()
    }

    /// Sorts an arbitrary eigendecomposition into ascending order.
    pub fn from_unsorted(eigenvalues: &[f64], eigenvectors: &DMatrix<f64>) -> Self {
        let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eigenvalues[i].total_cmp(&eigenvalues[j]));
        let vals = order.iter().map(|&i| eigenvalues[i]).collect();
        let vecs = DMatrix::from_fn(eigenvectors.nrows(), order.len(), |r, c| {
            eigenvectors[(r, order[c])]
        });
        Spectrum {
            eigenvalues: vals,
            eigenvectors: vecs,
        }
    }
}

/// Full eigendecomposition of a normalized Laplacian.
///
/// `rw` spectra go through the similarity `D^{1/2} L_rw D^{-1/2} = L_sym`, so
/// the returned eigenvectors are always the orthonormal `L_sym` basis (see
/// [`Laplacian::spectral_coordinates`]).
pub fn eig_spectrum(laplacian: &Laplacian) -> Result<Spectrum> {
    let t = laplacian.tokens();
    let sym = match laplacian.kind {
        LaplacianKind::Symmetric => laplacian.matrix.clone(),
        LaplacianKind::RandomWalk => {
            let s: Vec<f64> = laplacian.degrees.iter().map(|d| d.sqrt()).collect();
            let mut m = DMatrix::from_fn(t, t, |i, j| s[i] * laplacian.matrix[(i, j)] / s[j]);
            // Symmetrize away the rounding left by the similarity transform.
            for i in 0..t {
                for j in 0..i {
                    let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            m
        }
    };
    let mut asym = 0.0f64;
    for i in 0..t {
        for j in 0..i {
            asym = asym.max((sym[(i, j)] - sym[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::Validation(format!(
            "Laplacian is not symmetric: max |L_ij - L_ji| = {asym:e}"
        )));
    }
    let frob = sym.norm();
    let eig = sym
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 1000 * t.max(1))
        .ok_or_else(|| {
            let max_abs = sym.amax();
            Error::Numerical(format!(
                "symmetric eigensolver did not converge (T = {t}, ||L||_F = {frob:e}, max |L_ij| = {max_abs:e})"
            ))
        })?;
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "eigensolver produced non-finite eigenvalues (T = {t}, ||L||_F = {frob:e})"
        )));
    }
    Ok(Spectrum::from_unsorted(&vals, &eig.eigenvectors))
}

/// Second-smallest eigenvalue (algebraic connectivity).
pub fn fiedler(spectrum: &Spectrum) -> Result<f64> {
    spectrum
        .eigenvalues
        .get(1)
        .copied()
        .ok_or_else(|| Error::Size(format!("Fiedler value needs T >= 2, got {}", spectrum.tokens())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{MassWeighted, Uniform};

    fn layer(t: usize, heads: Vec<Vec<f32>>) -> LayerRecord {
        let h = heads.len();
        LayerRecord {
            layer_index: 0,
            tokens: t,
            heads: h,
            attention: heads.into_iter().flatten().collect(),
            signal: vec![1.0; t],
            hidden: None,
        }
    }

    #[test]
    fn single_head_symmetrized() {
        let l = layer(2, vec![vec![1.0, 0.0, 0.5, 0.5]]);
        let a = aggregate_heads(&l, &Uniform).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 0.5]);
        assert_eq!(a.matrix, expected);
    }

    #[test]
    fn identical_heads_same_under_both_schemes() {
        let head = vec![0.7, 0.3, 0.2, 0.8];
        let l = layer(2, vec![head.clone(), head]);
        let u = aggregate_heads(&l, &Uniform).unwrap();
        let m = aggregate_heads(&l, &MassWeighted).unwrap();
        assert_eq!(u.matrix, m.matrix);
        assert_eq!(m.head_weights, vec![0.5, 0.5]);
    }

    #[test]
    fn mass_weights_follow_head_mass() {
        // T = 4; head 0 has three softmax rows and a padded zero row (mass 3),
        // head 1 has one softmax row (mass 1).
        let mut h0 = vec![0.25f32; 16];
        h0[12..16].fill(0.0);
        let mut h1 = vec![0.0f32; 16];
        h1[0..4].copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
        let l = layer(4, vec![h0.clone(), h1.clone()]);
        // direct double-loop oracle
        let mass = |h: &[f32]| {
            let mut s = 0.0f64;
            for i in 0..4 {
                for j in 0..4 {
                    s += f64::from(h[i * 4 + j]);
                }
            }
            s
        };
        let (s0, s1) = (mass(&h0), mass(&h1));
        let a = aggregate_heads(&l, &MassWeighted).unwrap();
        assert!((a.head_weights[0] - s0 / (s0 + s1)).abs() < 1e-12);
        assert!((a.head_weights[0] - 0.75).abs() < 1e-7);
        assert!((a.head_weights[1] - 0.25).abs() < 1e-7);
    }

    #[test]
    fn all_zero_attention_is_degenerate() {
        let l = layer(2, vec![vec![0.0; 4]]);
        assert!(matches!(aggregate_heads(&l, &Uniform), Err(Error::Degenerate(_))));
    }

    #[test]
    fn two_token_uniform_laplacian() {
        let a = Affinity::from_matrix(DMatrix::from_element(2, 2, 0.5)).unwrap();
        let l = normalized_laplacian(&a, LaplacianKind::Symmetric).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((l.matrix - expected).amax() < 1e-15);
        let s = eig_spectrum(&normalized_laplacian(&a, LaplacianKind::Symmetric).unwrap()).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-12);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert!((fiedler(&s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_degree_gets_self_loop() {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        let a = Affinity::from_matrix(m).unwrap();
        let l = normalized_laplacian(&a, LaplacianKind::Symmetric).unwrap();
        assert_eq!(l.degrees[2], ZERO_DEGREE_SELF_LOOP);
        assert!(l.matrix.iter().all(|v| v.is_finite()));
        let s = eig_spectrum(&l).unwrap();
        // isolated node with its own loop contributes a zero eigenvalue
        assert!(s.eigenvalues[1].abs() < 1e-9);
    }

    #[test]
    fn negative_affinity_rejected() {
        let a = Affinity::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0])).unwrap();
        assert!(matches!(
            normalized_laplacian(&a, LaplacianKind::Symmetric),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn asymmetric_rejected_by_eig() {
        let lap = Laplacian {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.7, 1.0]),
            kind: LaplacianKind::Symmetric,
            degrees: vec![1.0, 1.0],
        };
        assert!(matches!(eig_spectrum(&lap), Err(Error::Validation(_))));
    }

    #[test]
    fn complete_graph_fiedler() {
        let mut m = DMatrix::from_element(4, 4, 1.0);
        m.fill_diagonal(0.0);
        let a = Affinity::from_matrix(m).unwrap();
        let l = normalized_laplacian(&a, LaplacianKind::Symmetric).unwrap();
        let s = eig_spectrum(&l).unwrap();
        assert!((fiedler(&s).unwrap() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fiedler_needs_two_tokens() {
        let s = Spectrum {
            eigenvalues: vec![0.0],
            eigenvectors: DMatrix::identity(1, 1),
        };
        assert!(matches!(fiedler(&s), Err(Error::Size(_))));
    }
}
