//! Evaluation metrics: mixture-kernel MMD², Gaussian Fréchet distance and the
//! selection summaries (estimated input dimension, zero proportion, effective depth).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{shape, Error, Result};
use crate::nets::GeneratorModel;
use crate::numcore::{gemm_acc, Affine, DenseMatrix, DenseVector, Trans};

/// Gaussian kernel mixture `k(x, y) = Σ_j exp(−‖x − y‖² / (2σ_j))`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMix {
    bandwidths: Vec<f64>,
}

impl Default for KernelMix {
    fn default() -> Self {
        Self {
            bandwidths: vec![1.0, 5.0, 10.0],
        }
    }
}

impl KernelMix {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Contract(format!(
                "kernel bandwidths must be a nonempty list of positive values, got {bandwidths:?}"
            )));
        }
        Ok(Self { bandwidths })
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// Kernel value at squared distance `d2`.
    #[inline]
    pub fn at_sq_dist(&self, d2: f64) -> f64 {
        self.bandwidths.iter().map(|s| (-d2 / (2.0 * s)).exp()).sum()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.at_sq_dist(d2)
    }
}

const CHUNK: usize = 256;

fn sq_norms(x: &DenseMatrix) -> Vec<f64> {
    x.row_iter().map(|r| r.iter().map(|v| v * v).sum()).collect()
}

/// `(1/(N M)) Σ_i Σ_j k(x_i, y_j)`.
fn kernel_mean(x: &DenseMatrix, xn: &[f64], y: &DenseMatrix, yn: &[f64], k: &KernelMix) -> f64 {
    let mut total = 0.0;
    let mut start = 0;
    while start < x.rows() {
        let end = (start + CHUNK).min(x.rows());
        let idx: Vec<usize> = (start..end).collect();
        let block = x.select_rows(&idx);
        let mut gram = DenseMatrix::zeros(end - start, y.rows());
        gemm_acc(1.0, &block, Trans::No, y, Trans::Yes, &mut gram);
        for (bi, i) in (start..end).enumerate() {
            let row = gram.row(bi);
            let mut s = 0.0;
            for (j, &g) in row.iter().enumerate() {
                let d2 = (xn[i] + yn[j] - 2.0 * g).max(0.0);
                s += k.at_sq_dist(d2);
            }
            total += s;
        }
        start = end;
    }
    total / (x.rows() as f64 * y.rows() as f64)
}

fn check_samples(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Contract("MMD needs nonempty sample sets".into()));
    }
    if a.cols() != b.cols() {
        return Err(shape(
            "mmd_squared",
            format!("samples of dimension {} and {}", a.cols(), b.cols()),
        ));
    }
    Ok(())
}

/// Biased (V-statistic) squared MMD between the empirical measures of `a` and `b`.
pub fn mmd_squared(a: &DenseMatrix, b: &DenseMatrix, k: &KernelMix) -> Result<f64> {
    check_samples(a, b)?;
    let (an, bn) = (sq_norms(a), sq_norms(b));
    let kaa = kernel_mean(a, &an, a, &an, k);
    let kbb = kernel_mean(b, &bn, b, &bn, k);
    let kab = kernel_mean(a, &an, b, &bn, k);
    Ok(kaa + kbb - 2.0 * kab)
}

/// A fixed reference sample with its self-similarity term cached, for scoring
/// many candidate samples against the same target.
#[derive(Clone, Debug)]
pub struct MmdReference {
    samples: DenseMatrix,
    norms: Vec<f64>,
    self_term: f64,
    kernel: KernelMix,
}

impl MmdReference {
    pub fn new(samples: DenseMatrix, kernel: KernelMix) -> Result<Self> {
        check_samples(&samples, &samples)?;
        let norms = sq_norms(&samples);
        let self_term = kernel_mean(&samples, &norms, &samples, &norms, &kernel);
        Ok(Self {
            samples,
            norms,
            self_term,
            kernel,
        })
    }

    pub fn samples(&self) -> &DenseMatrix {
        &self.samples
    }

    /// `MMD²(candidate, reference)`; same value as [`mmd_squared`]`(candidate, reference)`.
    pub fn mmd_squared(&self, candidate: &DenseMatrix) -> Result<f64> {
        check_samples(candidate, &self.samples)?;
        let cn = sq_norms(candidate);
        let kcc = kernel_mean(candidate, &cn, candidate, &cn, &self.kernel);
        let kcr = kernel_mean(candidate, &cn, &self.samples, &self.norms, &self.kernel);
        Ok(kcc + self.self_term - 2.0 * kcr)
    }
}

/// Sample mean and sample covariance (divisor `N − 1`) of the rows of `features`.
pub fn estimate_moments(features: &DenseMatrix) -> Result<(DenseVector, DenseMatrix)> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::Contract(format!("moments need at least 2 samples, got {n}")));
    }
    let d = features.cols();
    let mut mean = vec![0.0; d];
    for r in features.row_iter() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DenseMatrix::from_fn(n, d, |i, j| features.get(i, j) - mean[j]);
    let mut cov = DenseMatrix::zeros(d, d);
    gemm_acc(1.0 / (n as f64 - 1.0), &centered, Trans::Yes, &centered, Trans::No, &mut cov);
    Ok((DenseVector::from_raw(mean), cov))
}

/// Negative eigenvalues beyond this are rejected as not PSD.
pub const PSD_TOLERANCE: f64 = 1e-8;

fn to_nalgebra(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn check_symmetric(m: &DenseMatrix, name: &str) -> Result<()> {
    if m.rows() != m.cols() {
        return Err(shape("frechet_gaussian", format!("{name} is not square")));
    }
    let scale = m.max_abs().max(1.0);
    for i in 0..m.rows() {
        for j in 0..i {
            if (m.get(i, j) - m.get(j, i)).abs() > 1e-10 * scale {
                return Err(Error::Contract(format!("{name} is not symmetric")));
            }
        }
    }
    Ok(())
}

fn checked_eigenvalues(eig: &SymmetricEigen<f64, nalgebra::Dyn>, name: &str) -> Result<Vec<f64>> {
    eig.eigenvalues
        .iter()
        .map(|&l| {
            if l < -PSD_TOLERANCE {
                Err(Error::Contract(format!(
                    "{name} is not positive semidefinite (eigenvalue {l})"
                )))
            } else {
                Ok(l.max(0.0))
            }
        })
        .collect()
}

/// Fréchet distance between `N(m1, C1)` and `N(m2, C2)`:
/// `‖m1 − m2‖² + Tr(C1 + C2 − 2 (C1 C2)^{1/2})`.
///
/// The trace of the square root is taken through the symmetric form
/// `C1^{1/2} C2 C1^{1/2}`.
pub fn frechet_gaussian(
    m1: &DenseVector,
    c1: &DenseMatrix,
    m2: &DenseVector,
    c2: &DenseMatrix,
) -> Result<f64> {
    let d = m1.len();
    if m2.len() != d || c1.shape() != (d, d) || c2.shape() != (d, d) {
        return Err(shape(
            "frechet_gaussian",
            format!(
                "means of length {} and {}, covariances {:?} and {:?}",
                d,
                m2.len(),
                c1.shape(),
                c2.shape()
            ),
        ));
    }
    check_symmetric(c1, "C1")?;
    check_symmetric(c2, "C2")?;
    let mean_term: f64 = m1
        .as_slice()
        .iter()
        .zip(m2.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    let eig1 = SymmetricEigen::new(to_nalgebra(c1));
    let l1 = checked_eigenvalues(&eig1, "C1")?;
    let sqrt_l1 = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(d, l1.iter().map(|l| l.sqrt())));
    let s1 = &eig1.eigenvectors * sqrt_l1 * eig1.eigenvectors.transpose();
    let inner = &s1 * to_nalgebra(c2) * &s1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let lm = checked_eigenvalues(&eig, "C1^{1/2} C2 C1^{1/2}")?;
    // C2 is checked by its own spectrum as well
    checked_eigenvalues(&SymmetricEigen::new(to_nalgebra(c2)), "C2")?;

    let trace_sqrt: f64 = lm.iter().map(|l| l.sqrt()).sum();
    let tr1: f64 = (0..d).map(|i| c1.get(i, i)).sum();
    let tr2: f64 = (0..d).map(|i| c2.get(i, i)).sum();
    Ok(mean_term + tr1 + tr2 - 2.0 * trace_sqrt)
}

/// Number of nonzero rows of `B`.
pub fn estimated_dim(b: &DenseMatrix) -> usize {
    b.row_iter().filter(|r| r.iter().any(|&v| v != 0.0)).count()
}

/// Fraction of exactly-zero entries among all weights and biases (θ only).
pub fn prop_zero(layers: &[Affine]) -> f64 {
    let mut total = 0usize;
    let mut zeros = 0usize;
    for l in layers {
        for &v in l.weight.as_slice().iter().chain(l.bias.as_slice()) {
            total += 1;
            if v == 0.0 {
                zeros += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        zeros as f64 / total as f64
    }
}

/// Whether hidden layer `layer` is within `eps` (sup norm) of the identity map.
pub fn is_collapsed(layer: &Affine, eps: f64) -> bool {
    if layer.in_dim() != layer.out_dim() {
        return false;
    }
    let n = layer.in_dim();
    for i in 0..n {
        for (j, &a) in layer.weight.row(i).iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            if (a - target).abs() > eps {
                return false;
            }
        }
    }
    layer.bias.as_slice().iter().all(|c| c.abs() <= eps)
}

/// Layer count `L + 1` minus the hidden layers collapsed to `(I, 0)` within `eps`.
pub fn effective_depth(g: &GeneratorModel, eps: f64) -> usize {
    let depth = g.depth();
    let collapsed = (1..depth).filter(|&l| is_collapsed(&g.layers[l], eps)).count();
    depth + 1 - collapsed
}

/// Summary metrics of one trained generator.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mmd2: f64,
    /// `mmd2 × 10⁴`, the scale used in result tables.
    pub mmd_scaled: f64,
    pub dim: usize,
    pub prop0: f64,
    pub effective_depth: usize,
}

/// Column names used when a report is written as CSV.
pub const REPORT_COLUMNS: [&str; 4] = ["mmd_x1e4", "dim", "prop0_pct", "eff_depth"];

impl MetricsReport {
    pub fn new(mmd2: f64, g: &GeneratorModel, depth_eps: f64) -> Self {
        Self {
            mmd2,
            mmd_scaled: mmd2 * 1e4,
            dim: estimated_dim(&g.input_map),
            prop0: prop_zero(&g.layers),
            effective_depth: effective_depth(g, depth_eps),
        }
    }

    /// Values in [`REPORT_COLUMNS`] order; Prop.0 as a percentage.
    pub fn csv_fields(&self) -> [String; 4] {
        [
            format!("{:?}", self.mmd_scaled),
            self.dim.to_string(),
            format!("{:?}", self.prop0 * 100.0),
            self.effective_depth.to_string(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_generator, InitSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn mmd_identical_sets_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(37, 5, &mut rng);
        assert_eq!(mmd_squared(&a, &a.clone(), &KernelMix::default()).unwrap(), 0.0);
    }

    #[test]
    fn mmd_two_points_hand_value() {
        let a = DenseMatrix::from_rows(&[[0.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[[1.0]]).unwrap();
        let v = mmd_squared(&a, &b, &KernelMix::default()).unwrap();
        let expected = 6.0 - 2.0 * ((-0.5f64).exp() + (-0.1f64).exp() + (-0.05f64).exp());
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn mmd_rejects_empty_and_mismatched() {
        let k = KernelMix::default();
        assert!(mmd_squared(&DenseMatrix::zeros(0, 2), &DenseMatrix::zeros(2, 2), &k).is_err());
        assert!(mmd_squared(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(2, 2), &k).is_err());
        assert!(KernelMix::new(vec![]).is_err());
        assert!(KernelMix::new(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn kernel_self_similarity_is_component_count() {
        let k = KernelMix::default();
        assert_eq!(k.eval(&[1.0, -3.0], &[1.0, -3.0]), 3.0);
    }

    #[test]
    fn reference_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(40, 4, &mut rng);
        let b = random(30, 4, &mut rng);
        let r = MmdReference::new(b.clone(), KernelMix::default()).unwrap();
        let direct = mmd_squared(&a, &b, &KernelMix::default()).unwrap();
        assert!((r.mmd_squared(&a).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn frechet_examples() {
        let m = DenseVector::new(vec![0.5, -1.0]).unwrap();
        let c = DenseMatrix::from_rows(&[[2.0, 0.3], [0.3, 1.0]]).unwrap();
        assert!(frechet_gaussian(&m, &c, &m, &c).unwrap().abs() < 1e-12);

        let one = DenseMatrix::from_rows(&[[1.0]]).unwrap();
        let v = frechet_gaussian(
            &DenseVector::new(vec![0.0]).unwrap(),
            &one,
            &DenseVector::new(vec![1.0]).unwrap(),
            &one,
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn frechet_rejects_non_psd() {
        let m = DenseVector::zeros(2);
        let bad = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, -0.5]]).unwrap();
        let ok = DenseMatrix::identity(2);
        assert!(matches!(frechet_gaussian(&m, &bad, &m, &ok), Err(Error::Contract(_))));
        assert!(matches!(frechet_gaussian(&m, &ok, &m, &bad), Err(Error::Contract(_))));
        // tiny negative eigenvalues are clamped
        let almost = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, -1e-12]]).unwrap();
        assert!(frechet_gaussian(&m, &almost, &m, &ok).is_ok());
    }

    #[test]
    fn moments_examples() {
        let constant = DenseMatrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        let (mean, cov) = estimate_moments(&constant).unwrap();
        assert_eq!(mean.as_slice(), &[1.0, 2.0]);
        assert!(cov.max_abs() == 0.0);

        let two = DenseMatrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let (mean, cov) = estimate_moments(&two).unwrap();
        assert_eq!(mean.as_slice(), &[1.0]);
        assert_eq!(cov.as_slice(), &[2.0]);

        assert!(estimate_moments(&DenseMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn moments_match_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(25, 4, &mut rng);
        let (mean, cov) = estimate_moments(&x).unwrap();
        for j in 0..4 {
            let m: f64 = (0..25).map(|i| x.get(i, j)).sum::<f64>() / 25.0;
            assert!((mean[j] - m).abs() < 1e-12);
            for k in 0..4 {
                let mk: f64 = (0..25).map(|i| x.get(i, k)).sum::<f64>() / 25.0;
                let c: f64 = (0..25).map(|i| (x.get(i, j) - m) * (x.get(i, k) - mk)).sum::<f64>() / 24.0;
                assert!((cov.get(j, k) - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dim_and_prop_zero() {
        assert_eq!(estimated_dim(&DenseMatrix::zeros(5, 5)), 0);
        let b = DenseMatrix::from_fn(50, 50, |i, j| if i < 10 { (i + j + 1) as f64 } else { 0.0 });
        assert_eq!(estimated_dim(&b), 10);

        let zero = vec![Affine::new(DenseMatrix::zeros(2, 3), DenseVector::zeros(2)).unwrap()];
        assert_eq!(prop_zero(&zero), 1.0);
        let mixed = vec![Affine::new(
            DenseMatrix::from_rows(&[[0.0, 1.0, 2.0, 0.0], [3.0, 0.0, 4.0, 5.0]]).unwrap(),
            DenseVector::new(vec![0.0, 6.0]).unwrap(),
        )
        .unwrap()];
        assert!((prop_zero(&mixed) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn effective_depth_examples() {
        let mut g = init_generator(3, 4, 4, 2, &InitSpec::default().with_seed(1)).unwrap();
        assert_eq!(effective_depth(&g, 0.01), 5);
        g.layers[2].weight = DenseMatrix::identity(4);
        g.layers[2].bias = DenseVector::zeros(4);
        assert_eq!(effective_depth(&g, 0.01), 4);
        for l in 1..4 {
            g.layers[l].weight = DenseMatrix::identity(4);
            g.layers[l].bias = DenseVector::zeros(4);
        }
        assert_eq!(effective_depth(&g, 0.01), 2);
    }
}
