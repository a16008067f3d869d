//! Regularized Gram matrix of variance-weighted feature differences, with a
//! continuously maintained inverse.
//!
//! V = lambda*I + sum_i dphi_i dphi_i^T / zeta_i^2. The inverse is updated
//! with the Sherman–Morrison rank-one formula and re-derived from a direct
//! Cholesky solve every [`REFRESH_INTERVAL`] updates so floating-point drift
//! cannot accumulate over long runs.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// How many rank-one updates are applied between direct refreshes of the
/// maintained inverse.
pub const REFRESH_INTERVAL: u64 = 256;

#[derive(Clone, Debug)]
pub struct GramState {
    lambda: f64,
    v: Array2<f64>,
    vinv: Array2<f64>,
    updates: u64,
}

impl GramState {
    /// Fresh state: V = lambda*I, V^-1 = I/lambda. Requires lambda > 0 so V
    /// stays symmetric positive definite forever.
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("gram dimension must be >= 1".into()));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "ridge weight must be a positive real, got {lambda}"
            )));
        }
        Ok(GramState {
            lambda,
            v: Array2::eye(dim) * lambda,
            vinv: Array2::eye(dim) / lambda,
            updates: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of rank-one updates applied so far (zero-vector updates count:
    /// this is a per-observation counter that also drives the refresh cadence).
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.v.view()
    }

    pub fn inverse(&self) -> ArrayView2<'_, f64> {
        self.vinv.view()
    }

    /// Add one observation: V += dphi dphi^T / zeta^2, with the inverse kept
    /// in lockstep via Sherman–Morrison. A zero dphi leaves both matrices
    /// untouched.
    pub fn rank_one_update(&mut self, dphi: ArrayView1<'_, f64>, zeta: f64) -> Result<()> {
        if dphi.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "update vector has length {}, gram dimension is {}",
                dphi.len(),
                self.dim()
            )));
        }
        if !(zeta.is_finite() && zeta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "variance clamp must be a positive real, got {zeta}"
            )));
        }
        if dphi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "update vector contains a non-finite entry".into(),
            ));
        }
        self.updates += 1;
        if dphi.iter().all(|v| *v == 0.0) {
            return Ok(());
        }
        let w = 1.0 / (zeta * zeta);
        // u = V^-1 dphi; denom = 1 + w dphi^T u  (>= 1 since V^-1 is SPD)
        let u: Array1<f64> = self.vinv.dot(&dphi);
        let denom = 1.0 + w * dphi.dot(&u);
        if !(denom.is_finite() && denom > 0.0) {
            return Err(Error::NumericalFailure(format!(
                "rank-one denominator degenerated to {denom}"
            )));
        }
        let scale = w / denom;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                self.vinv[[i, j]] -= scale * u[i] * u[j];
                self.v[[i, j]] += w * dphi[i] * dphi[j];
            }
        }
        if self.updates % REFRESH_INTERVAL == 0 {
            self.refresh()?;
        }
        Ok(())
    }

    /// Re-derive the maintained inverse from V by a direct SPD solve.
    pub fn refresh(&mut self) -> Result<()> {
        self.vinv = spd_inverse(&self.v)?;
        Ok(())
    }

    /// Confidence width ||v||_{V^-1} = sqrt(max(0, v^T V^-1 v)); the clamp
    /// guards against tiny negative round-off.
    pub fn confidence_width(&self, v: ArrayView1<'_, f64>) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "width vector has length {}, gram dimension is {}",
                v.len(),
                self.dim()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "width vector contains a non-finite entry".into(),
            ));
        }
        let q = v.dot(&self.vinv.dot(&v));
        Ok(q.max(0.0).sqrt())
    }

    /// Build a state directly from a batch of (dphi, zeta) records, with the
    /// inverse computed by a fresh Cholesky solve rather than incrementally.
    pub fn rebuild<'a, I>(dim: usize, lambda: f64, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ArrayView1<'a, f64>, f64)>,
    {
        let mut state = GramState::new(dim, lambda)?;
        for (dphi, zeta) in records {
            if dphi.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "record vector has length {}, gram dimension is {}",
                    dphi.len(),
                    dim
                )));
            }
            if !(zeta.is_finite() && zeta > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "variance clamp must be a positive real, got {zeta}"
                )));
            }
            let w = 1.0 / (zeta * zeta);
            for i in 0..dim {
                for j in 0..dim {
                    state.v[[i, j]] += w * dphi[i] * dphi[j];
                }
            }
            state.updates += 1;
        }
        state.refresh()?;
        Ok(state)
    }
}

// ---------------------------------------------------------------------------
// direct SPD routines (Cholesky), shared with the convex refit solver
// ---------------------------------------------------------------------------

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub(crate) fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch("cholesky needs a square matrix".into()));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::NumericalFailure(format!(
                        "matrix is not positive definite (pivot {s} at {i})"
                    )));
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve A x = b for SPD A via Cholesky.
pub(crate) fn spd_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let l = cholesky(a)?;
    Ok(chol_solve_factored(&l, b))
}

fn chol_solve_factored(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let t = l[[i, k]] * y[k];
            y[i] -= t;
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let t = l[[k, i]] * y[k];
            y[i] -= t;
        }
        y[i] /= l[[i, i]];
    }
    y
}

/// Inverse of an SPD matrix via Cholesky, symmetrized on output.
pub(crate) fn spd_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let l = cholesky(a)?;
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = Array1::<f64>::zeros(n);
    for c in 0..n {
        e.fill(0.0);
        e[c] = 1.0;
        let col = chol_solve_factored(&l, &e);
        inv.column_mut(c).assign(&col);
    }
    // enforce exact symmetry so downstream quadratic forms are well behaved
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = s;
            inv[[j, i]] = s;
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn max_abs_diff(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn new_state_is_scaled_identity() {
        let g = GramState::new(3, 2.0).unwrap();
        assert_eq!(g.matrix()[[0, 0]], 2.0);
        assert_eq!(g.matrix()[[0, 1]], 0.0);
        assert_eq!(g.inverse()[[1, 1]], 0.5);
        assert_eq!(g.updates(), 0);
    }

    #[test]
    fn rejects_bad_lambda_and_dim() {
        assert!(GramState::new(0, 1.0).is_err());
        assert!(GramState::new(2, 0.0).is_err());
        assert!(GramState::new(2, -1.0).is_err());
        assert!(GramState::new(2, f64::NAN).is_err());
    }

    #[test]
    fn frozen_one_dimensional_update() {
        let mut g = GramState::new(1, 1.0).unwrap();
        g.rank_one_update(array![2.0].view(), 1.0).unwrap();
        assert_eq!(g.matrix()[[0, 0]], 5.0);
        assert!((g.inverse()[[0, 0]] - 0.2).abs() < 1e-15);
        let w = g.confidence_width(array![1.0].view()).unwrap();
        assert!((w - 0.4472135954999579).abs() < 1e-12); // 1/sqrt(5)
    }

    #[test]
    fn zeta_scales_the_weight() {
        let mut g = GramState::new(1, 1.0).unwrap();
        g.rank_one_update(array![2.0].view(), 0.5).unwrap();
        // weight 1/0.25 = 4 -> V = 1 + 16
        assert_eq!(g.matrix()[[0, 0]], 17.0);
    }

    #[test]
    fn zero_vector_update_changes_nothing_but_counts() {
        let mut g = GramState::new(2, 1.0).unwrap();
        let before = g.matrix().to_owned();
        g.rank_one_update(array![0.0, 0.0].view(), 1.0).unwrap();
        assert_eq!(g.matrix(), before.view());
        assert_eq!(g.inverse(), Array2::eye(2).view());
        assert_eq!(g.updates(), 1);
    }

    #[test]
    fn invalid_updates_are_rejected() {
        let mut g = GramState::new(2, 1.0).unwrap();
        assert!(g.rank_one_update(array![1.0].view(), 1.0).is_err());
        assert!(g.rank_one_update(array![1.0, 0.0].view(), 0.0).is_err());
        assert!(g.rank_one_update(array![1.0, 0.0].view(), -1.0).is_err());
        assert!(g
            .rank_one_update(array![f64::NAN, 0.0].view(), 1.0)
            .is_err());
        assert!(g.confidence_width(array![1.0].view()).is_err());
    }

    #[test]
    fn maintained_inverse_tracks_direct_solve() {
        let mut rng = crate::rng::derive_stream(42, &["gram-test"]);
        let dim = 6;
        let mut g = GramState::new(dim, 0.7).unwrap();
        let mut records: Vec<(Array1<f64>, f64)> = Vec::new();
        for _ in 0..600 {
            let dphi =
                Array1::from_iter((0..dim).map(|_| crate::rng::uniform_sym(&mut rng) * 3.0));
            let zeta = 0.1 + rng.random::<f64>();
            g.rank_one_update(dphi.view(), zeta).unwrap();
            records.push((dphi, zeta));
        }
        let rebuilt =
            GramState::rebuild(dim, 0.7, records.iter().map(|(d, z)| (d.view(), *z))).unwrap();
        assert!(max_abs_diff(&g.inverse(), &rebuilt.inverse()) < 1e-8);
        assert!(max_abs_diff(&g.matrix(), &rebuilt.matrix()) < 1e-6);
        // V * V^-1 stays close to the identity
        let prod = g.matrix().dot(&g.inverse());
        let eye = Array2::eye(dim);
        assert!(max_abs_diff(&prod.view(), &eye.view()) < 1e-8);
    }

    #[test]
    fn cholesky_round_trip() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let l = cholesky(&a).unwrap();
        let back = l.dot(&l.t());
        assert!(max_abs_diff(&back.view(), &a.view()) < 1e-12);
        let b = array![1.0, 2.0, 3.0];
        let x = spd_solve(&a, &b).unwrap();
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        assert!(cholesky(&array![[1.0, 2.0], [2.0, 1.0]]).is_err()); // indefinite
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn width_never_increases_under_updates(
            seed in 0u64..1000,
            n_updates in 1usize..40,
        ) {
            let mut rng = crate::rng::derive_stream(seed, &["gram-prop"]);
            let dim = 4;
            let mut g = GramState::new(dim, 1.0).unwrap();
            let probe = Array1::from_iter((0..dim).map(|_| crate::rng::uniform_sym(&mut rng)));
            let mut last = g.confidence_width(probe.view()).unwrap();
            for _ in 0..n_updates {
                let dphi = Array1::from_iter((0..dim).map(|_| crate::rng::uniform_sym(&mut rng)));
                g.rank_one_update(dphi.view(), 0.5 + rng.random::<f64>()).unwrap();
                let now = g.confidence_width(probe.view()).unwrap();
                prop_assert!(now <= last + 1e-10);
                last = now;
            }
        }

        #[test]
        fn width_is_homogeneous(
            seed in 0u64..1000,
            scale in 0.0f64..50.0,
        ) {
            let mut rng = crate::rng::derive_stream(seed, &["gram-homog"]);
            let dim = 3;
            let mut g = GramState::new(dim, 0.5).unwrap();
            for _ in 0..5 {
                let dphi = Array1::from_iter((0..dim).map(|_| crate::rng::uniform_sym(&mut rng)));
                g.rank_one_update(dphi.view(), 1.0).unwrap();
            }
            let v = Array1::from_iter((0..dim).map(|_| crate::rng::uniform_sym(&mut rng)));
            let w1 = g.confidence_width(v.view()).unwrap();
            let scaled = v.mapv(|x| x * scale);
            let w2 = g.confidence_width(scaled.view()).unwrap();
            prop_assert!((w2 - scale * w1).abs() < 1e-9 * (1.0 + scale));
        }
    }
}
