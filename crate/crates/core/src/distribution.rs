//! The Gaussian mutation distribution `N(x, AᵀA)`.
//!
//! The covariance is parameterized by an upper-triangular factor `A` with a
//! strictly positive diagonal, so `C = AᵀA` is always positive definite.
//! Parameters are flattened into a vector `θ = [x, a₁, …, a_d]` where group
//! `k ≥ 1` holds row `k` of `A` from the diagonal rightwards
//! (see [`ThetaLayout`]).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, EnesError, Result};

/// Smallest value a diagonal entry of `A` may take after an update.
pub const DIAG_FLOOR: f64 = 1e-30;

/// Index map between the flat parameter vector and `(x, A)`.
///
/// Group 0 is the mean (length `d`). Group `k` for `1 ≤ k ≤ d` is
/// `[a_{k,k}, …, a_{k,d}]` and has length `d + 1 − k`. Rows and columns of
/// `A` are 0-based in this API, so group `k` holds row `k − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    dim: usize,
}

impl ThetaLayout {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total length `d + d(d+1)/2`.
    pub fn len(&self) -> usize {
        self.dim + self.dim * (self.dim + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// Number of groups, `d + 1`.
    pub fn groups(&self) -> usize {
        self.dim + 1
    }

    pub fn group_len(&self, k: usize) -> usize {
        assert!(k <= self.dim, "group {k} out of range for dim {}", self.dim);
        if k == 0 {
            self.dim
        } else {
            self.dim + 1 - k
        }
    }

    pub fn group_offset(&self, k: usize) -> usize {
        assert!(k <= self.dim, "group {k} out of range for dim {}", self.dim);
        if k == 0 {
            return 0;
        }
        // d + Σ_{l=1}^{k-1} (d + 1 − l)
        let before = k - 1;
        self.dim + before * (self.dim + 1) - before * (before + 1) / 2
    }

    pub fn group_range(&self, k: usize) -> std::ops::Range<usize> {
        let start = self.group_offset(k);
        start..start + self.group_len(k)
    }

    /// Flat position of `a_{row,col}` (0-based, `row ≤ col`).
    pub fn entry_index(&self, row: usize, col: usize) -> usize {
        assert!(row <= col && col < self.dim, "({row}, {col}) is not an upper-triangular entry");
        self.group_offset(row + 1) + (col - row)
    }

    /// Inverse of [`entry_index`](Self::entry_index): the `(row, col)` of the
    /// factor entry stored at flat position `m`, or `None` if `m` is a mean
    /// coordinate or out of range.
    pub fn entry_at(&self, m: usize) -> Option<(usize, usize)> {
        if m < self.dim || m >= self.len() {
            return None;
        }
        let row = (0..self.dim)
            .find(|&row| self.group_range(row + 1).contains(&m))
            .expect("m is a factor position");
        Some((row, row + m - self.group_offset(row + 1)))
    }
}

/// Result of applying a parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub dist: SearchDistribution,
    /// Set when a diagonal entry of `A` had to be clamped to [`DIAG_FLOOR`].
    pub clamped: bool,
}

/// Gaussian with mean `x` and covariance `AᵀA`, `A` upper triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchDistribution {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl SearchDistribution {
    /// Builds a distribution, checking that `chol` is square, upper
    /// triangular with an exactly zero lower triangle, and has a positive
    /// finite diagonal.
    pub fn new(mean: DVector<f64>, chol: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(EnesError::InvalidArgument("dimension must be positive".into()));
        }
        if chol.nrows() != d || chol.ncols() != d {
            return Err(EnesError::InvalidArgument(format!(
                "factor is {}x{}, expected {d}x{d}",
                chol.nrows(),
                chol.ncols()
            )));
        }
        for j in 0..d {
            for i in (j + 1)..d {
                if chol[(i, j)] != 0.0 {
                    return Err(EnesError::InvalidArgument(format!(
                        "factor is not upper triangular: entry ({i}, {j}) is {}",
                        chol[(i, j)]
                    )));
                }
            }
        }
        check_diagonal(&chol)?;
        if mean.iter().chain(chol.iter()).any(|v| !v.is_finite()) {
            return Err(EnesError::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self { mean, chol })
    }

    /// `N(mean, I)`.
    pub fn isotropic(mean: DVector<f64>) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// The upper-triangular factor `A`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout::new(self.dim())
    }

    /// `C = AᵀA`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.tr_mul(&self.chol)
    }

    /// Maps a standard-normal vector `s` to `z = x + Aᵀs`.
    pub fn sample(&self, s: &[f64]) -> Result<DVector<f64>> {
        check_len(self.dim(), s.len())?;
        let s = DVector::from_column_slice(s);
        Ok(&self.mean + self.chol.tr_mul(&s))
    }

    /// Draws `d` standard normals from `rng` and maps them through
    /// [`sample`](Self::sample).
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let s = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.mean + self.chol.tr_mul(&s)
    }

    /// `e = A⁻ᵀ(z − x)` by forward substitution.
    pub(crate) fn whiten(&self, z: &[f64]) -> Result<DVector<f64>> {
        check_len(self.dim(), z.len())?;
        let y = DVector::from_column_slice(z) - &self.mean;
        Ok(self
            .chol
            .tr_solve_upper_triangular(&y)
            .expect("factor diagonal is positive"))
    }

    /// `ln p(z | θ)`.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        let e = self.whiten(z)?;
        let log_det: f64 = self.chol.diagonal().iter().map(|a| a.ln()).sum();
        Ok(-0.5 * self.dim() as f64 * (2.0 * PI).ln() - log_det - 0.5 * e.norm_squared())
    }

    /// Whitened offset `e = A⁻ᵀ(z − x)` and precision-weighted offset
    /// `m = C⁻¹(z − x) = A⁻¹e`. Every gradient group is built from these two
    /// vectors: group 0 is `m`, group `k` is `e_k · m_{k:d} − a_{k,k}⁻¹ e₁`.
    pub(crate) fn score_parts(&self, z: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let e = self.whiten(z)?;
        let m = self
            .chol
            .solve_upper_triangular(&e)
            .expect("factor diagonal is positive");
        Ok((e, m))
    }

    /// Gradient of `ln p(z | θ)` with respect to the flat parameter vector.
    pub fn log_density_gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        let (e, m) = self.score_parts(z)?;
        let layout = self.layout();
        let mut g = DVector::zeros(layout.len());
        g.rows_mut(0, self.dim()).copy_from(&m);
        for k in 1..=self.dim() {
            let out = layout.group_range(k);
            write_group_gradient(&self.chol, &e, &m, k, g.as_mut_slice()[out].as_mut());
        }
        Ok(g)
    }

    /// Flattens `(x, A)` into `θ`.
    pub fn to_theta(&self) -> DVector<f64> {
        let layout = self.layout();
        let d = self.dim();
        let mut theta = DVector::zeros(layout.len());
        theta.rows_mut(0, d).copy_from(&self.mean);
        for row in 0..d {
            for col in row..d {
                theta[layout.entry_index(row, col)] = self.chol[(row, col)];
            }
        }
        theta
    }

    /// Rebuilds a distribution from a flat `θ` of dimension `dim`.
    pub fn from_theta(dim: usize, theta: &[f64]) -> Result<Self> {
        let layout = ThetaLayout::new(dim);
        check_len(layout.len(), theta.len())?;
        let mean = DVector::from_column_slice(&theta[..dim]);
        let mut chol = DMatrix::zeros(dim, dim);
        for row in 0..dim {
            for col in row..dim {
                chol[(row, col)] = theta[layout.entry_index(row, col)];
            }
        }
        Self::new(mean, chol)
    }

    /// Returns `θ + delta`. Diagonal entries of `A` that would fall to or
    /// below [`DIAG_FLOOR`] are clamped and flagged.
    pub fn apply_update(&self, delta: &[f64]) -> Result<UpdateOutcome> {
        let layout = self.layout();
        check_len(layout.len(), delta.len())?;
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(EnesError::InvalidArgument("non-finite update".into()));
        }
        let d = self.dim();
        let mut mean = self.mean.clone();
        for (x, dx) in mean.iter_mut().zip(&delta[..d]) {
            *x += dx;
        }
        let mut chol = self.chol.clone();
        let mut clamped = false;
        for row in 0..d {
            for col in row..d {
                chol[(row, col)] += delta[layout.entry_index(row, col)];
            }
            if chol[(row, row)] <= DIAG_FLOOR {
                chol[(row, row)] = DIAG_FLOOR;
                clamped = true;
            }
        }
        Ok(UpdateOutcome { dist: Self { mean, chol }, clamped })
    }
}

/// Writes `g^k` (1-based group `k`) into `out` given the whitened offset `e`
/// and precision-weighted offset `m`.
pub(crate) fn write_group_gradient(chol: &DMatrix<f64>, e: &DVector<f64>, m: &DVector<f64>, k: usize, out: &mut [f64]) {
    let row = k - 1;
    let ek = e[row];
    for (slot, mj) in out.iter_mut().zip(m.iter().skip(row)) {
        *slot = ek * mj;
    }
    out[0] -= chol[(row, row)].recip();
}

pub(crate) fn check_diagonal(chol: &DMatrix<f64>) -> Result<()> {
    for (index, &value) in chol.diagonal().iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(EnesError::SingularFactor { index, value });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_dist;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(mean: &[f64], chol_rows: &[&[f64]]) -> SearchDistribution {
        let d = mean.len();
        let chol = DMatrix::from_fn(d, d, |i, j| chol_rows[i][j]);
        SearchDistribution::new(DVector::from_column_slice(mean), chol).unwrap()
    }

    #[test]
    fn layout_offsets_cover_theta() {
        for d in 1..=9 {
            let layout = ThetaLayout::new(d);
            let mut next = 0;
            for k in 0..=d {
                assert_eq!(layout.group_offset(k), next);
                next += layout.group_len(k);
            }
            assert_eq!(next, layout.len());
            assert_eq!(layout.len(), d + d * (d + 1) / 2);
            for m in d..layout.len() {
                let (row, col) = layout.entry_at(m).unwrap();
                assert_eq!(layout.entry_index(row, col), m);
            }
            assert_eq!(layout.entry_at(0), None);
        }
    }

    #[test]
    fn sample_examples() {
        let d = SearchDistribution::isotropic(DVector::zeros(2)).unwrap();
        assert_eq!(d.sample(&[1.0, -1.0]).unwrap().as_slice(), &[1.0, -1.0]);
        let d = dist(&[2.0], &[&[3.0]]);
        assert_eq!(d.sample(&[1.0]).unwrap()[0], 5.0);
        assert!(matches!(d.sample(&[1.0, 2.0]), Err(EnesError::DimensionMismatch { .. })));
    }

    #[test]
    fn sample_covariance_matches_factor() {
        let d = dist(&[0.0, 0.0], &[&[1.0, 1.0], &[0.0, 1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut cov = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let z = d.draw(&mut rng);
            cov += &z * z.transpose();
        }
        cov /= n as f64;
        let expected = [[1.0, 1.0], [1.0, 2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((cov[(i, j)] - expected[i][j]).abs() < 0.05, "{cov}");
            }
        }
    }

    #[test]
    fn log_density_examples() {
        let d = dist(&[0.0], &[&[1.0]]);
        assert!((d.log_density(&[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let d = dist(&[0.0], &[&[2.0]]);
        let expected = -0.5 * (2.0 * PI).ln() - 2f64.ln() - 0.5;
        assert!((d.log_density(&[2.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 2.112_086).abs() < 1e-6);
    }

    #[test]
    fn density_integrates_to_one() {
        // Composite Simpson over ±12σ.
        let d = dist(&[0.3], &[&[1.7]]);
        let (lo, hi, steps) = (0.3 - 12.0 * 1.7, 0.3 + 12.0 * 1.7, 20_000);
        let h = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for i in 0..=steps {
            let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * d.log_density(&[lo + i as f64 * h]).unwrap().exp();
        }
        assert!((total * h / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_examples() {
        let d = SearchDistribution::isotropic(DVector::zeros(3)).unwrap();
        let g = d.log_density_gradient(&[0.4, -1.2, 2.0]).unwrap();
        assert_eq!(&g.as_slice()[..3], &[0.4, -1.2, 2.0]);

        let d = dist(&[0.0], &[&[1.0]]);
        for t in [-2.0, 0.5, 1.0, 3.0] {
            let g = d.log_density_gradient(&[t]).unwrap();
            assert!((g[0] - t).abs() < 1e-15);
            assert!((g[1] - (t * t - 1.0)).abs() < 1e-15);
        }
        assert_eq!(d.log_density_gradient(&[1.0]).unwrap()[1], 0.0);
    }

    fn finite_difference_gradient(d: &SearchDistribution, z: &[f64], h: f64) -> DVector<f64> {
        let theta = d.to_theta();
        DVector::from_fn(theta.len(), |m, _| {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[m] += h;
            minus[m] -= h;
            let fp = SearchDistribution::from_theta(d.dim(), plus.as_slice()).unwrap().log_density(z).unwrap();
            let fm = SearchDistribution::from_theta(d.dim(), minus.as_slice()).unwrap().log_density(z).unwrap();
            (fp - fm) / (2.0 * h)
        })
    }

    #[test]
    fn gradient_matches_finite_differences_d4() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = random_dist(&mut rng, 4);
        let z = d.draw(&mut rng);
        let g = d.log_density_gradient(z.as_slice()).unwrap();
        let fd = finite_difference_gradient(&d, z.as_slice(), 1e-6);
        assert!((g - fd).amax() < 1e-6);
    }

    #[test]
    fn update_examples() {
        let d = dist(&[0.0, 1.0], &[&[1.0, 0.2], &[0.0, 1.5]]);
        let same = d.apply_update(&[0.0; 5]).unwrap();
        assert_eq!(same.dist, d);
        assert!(!same.clamped);

        let d1 = dist(&[0.0], &[&[1.0]]);
        let up = d1.apply_update(&[0.5, 0.1]).unwrap().dist;
        assert_eq!(up.mean()[0], 0.5);
        assert!((up.chol()[(0, 0)] - 1.1).abs() < 1e-15);

        let layout = d.layout();
        let mut delta = vec![0.0; 5];
        delta[layout.entry_index(0, 1)] = 0.25;
        let up = d.apply_update(&delta).unwrap().dist;
        let diff = up.chol() - d.chol();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(diff[(i, j)] != 0.0, (i, j) == (0, 1));
            }
        }
        assert_eq!(up.chol()[(1, 0)], 0.0);
    }

    #[test]
    fn update_clamps_collapsed_diagonal() {
        let d = dist(&[0.0], &[&[1.0]]);
        let out = d.apply_update(&[0.0, -3.0]).unwrap();
        assert!(out.clamped);
        assert_eq!(out.dist.chol()[(0, 0)], DIAG_FLOOR);
    }

    #[test]
    fn rejects_invalid_factors() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.1, 1.0]);
        assert!(SearchDistribution::new(DVector::zeros(2), bad).is_err());
        let zero = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            SearchDistribution::new(DVector::zeros(2), zero),
            Err(EnesError::SingularFactor { index: 1, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn theta_round_trip(seed in any::<u64>(), d in 1usize..7) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist = random_dist(&mut rng, d);
                let back = SearchDistribution::from_theta(d, dist.to_theta().as_slice()).unwrap();
                prop_assert_eq!(back, dist);
            }

            #[test]
            fn update_keeps_lower_triangle_zero(seed in any::<u64>(), d in 1usize..7) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist = random_dist(&mut rng, d);
                let delta: Vec<f64> = (0..dist.layout().len()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let out = dist.apply_update(&delta).unwrap().dist;
                for j in 0..d {
                    for i in (j + 1)..d {
                        prop_assert_eq!(out.chol()[(i, j)].to_bits(), 0u64);
                    }
                    prop_assert!(out.chol()[(j, j)] >= DIAG_FLOOR);
                }
            }
        }
    }
}
