//! Weighted least squares for one node's incoming weights.
//!
//! Each regressor keeps two regularized Gram matrices over the parent
//! support: `V = I + sum w x x^T` and `Vt = I + sum w^2 x x^T`, both with a
//! Cholesky factor maintained by rank-one updates. Confidence sets are
//! ellipsoids in the metric `M = V Vt^{-1} V`. With all weights equal to one
//! `V = Vt` and `M = V`, which is the plain ridge estimator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Observational,
    Interventional,
}

impl Variant {
    pub fn of(intervened: bool) -> Self {
        if intervened {
            Variant::Interventional
        } else {
            Variant::Observational
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeRegressor {
    node: usize,
    variant: Variant,
    gram: DMatrix<f64>,
    gram_tilde: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    chol_tilde: Cholesky<f64, Dyn>,
    moment: DVector<f64>,
    estimate: DVector<f64>,
    count: usize,
}

impl NodeRegressor {
    /// Fresh regressor: zero estimate, `V = Vt = I`.
    pub fn new(node: usize, variant: Variant, dim: usize) -> Self {
        let eye = DMatrix::identity(dim, dim);
        let chol = Cholesky::new(eye.clone()).expect("identity is positive definite");
        Self {
            node,
            variant,
            gram: eye.clone(),
            gram_tilde: eye,
            chol_tilde: chol.clone(),
            chol,
            moment: DVector::zeros(dim),
            estimate: DVector::zeros(dim),
            count: 0,
        }
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.estimate.len()
    }

    pub fn estimate(&self) -> &[f64] {
        self.estimate.as_slice()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_tilde(&self) -> &DMatrix<f64> {
        &self.gram_tilde
    }

    /// Number of absorbed rounds.
    pub fn count(&self) -> usize {
        self.count
    }

    /// `||x||_{Vt^{-1}}`, the weighted exploration bonus.
    pub fn exploration_bonus(&self, x_pa: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x_pa);
        self.chol_tilde
            .l_dirty()
            .solve_lower_triangular(&x)
            .expect("Cholesky factor has a positive diagonal")
            .norm()
    }

    /// Absorbs one weighted sample `(x_pa, x_i - nu_i)`.
    pub fn update(&mut self, w: f64, x_pa: &[f64], x_i: f64, nu_i: f64) {
        debug_assert_eq!(x_pa.len(), self.dim());
        let x = DVector::from_column_slice(x_pa);
        self.gram.ger(w, &x, &x, 1.0);
        self.gram_tilde.ger(w * w, &x, &x, 1.0);
        self.chol.rank_one_update(&x, w);
        self.chol_tilde.rank_one_update(&x, w * w);
        self.moment.axpy(w * (x_i - nu_i), &x, 1.0);
        self.estimate = self.chol.solve(&self.moment);
        self.count += 1;
    }

    /// `||theta - b_hat||_M` with `M = V Vt^{-1} V`, evaluated as
    /// `||L_t^{-1} V (theta - b_hat)||` where `Vt = L_t L_t^T`.
    pub fn ellipsoid_norm(&self, theta: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(theta) - &self.estimate;
        let y = &self.gram * diff;
        self.chol_tilde
            .l_dirty()
            .solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
            .norm()
    }

    /// Membership in the confidence set: unit ball and ellipsoid of radius `beta`.
    pub fn contains(&self, theta: &[f64], beta: f64) -> bool {
        crate::sem::norm(theta) <= 1.0 && self.ellipsoid_norm(theta) <= beta
    }

    /// Dense `M = V Vt^{-1} V` (symmetrized).
    pub fn confidence_metric(&self) -> DMatrix<f64> {
        let vt_inv_v = self.chol_tilde.solve(&self.gram);
        let m = &self.gram * vt_inv_v;
        (&m + m.transpose()) * 0.5
    }

    /// Smallest eigenvalue of `M` on the parent support, floored at one.
    pub fn effective_min_eig(&self) -> f64 {
        if self.dim() == 0 {
            return 1.0;
        }
        let eig = SymmetricEigen::new(self.confidence_metric());
        eig.eigenvalues.min().max(1.0)
    }
}

/// Sample weight `min{1/C, 1/(C ||x||_{Vt^{-1}})}`, with `Vt` taken from the
/// regressor before the current round is absorbed.
pub fn weight(x_pa: &[f64], prev: &NodeRegressor, c: f64) -> f64 {
    let bonus = prev.exploration_bonus(x_pa);
    if bonus == 0.0 {
        1.0 / c
    } else {
        (1.0 / c).min(1.0 / (c * bonus))
    }
}

/// Parameters of the concentration radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceSpec {
    pub delta: f64,
    pub c_budget: f64,
    pub m_x: f64,
    pub d: usize,
}

impl ConfidenceSpec {
    pub fn new(delta: f64, c_budget: f64, m_x: f64, d: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config("delta", format!("must lie in (0, 1), got {delta}")));
        }
        if !(c_budget >= 1.0) {
            return Err(Error::config("C", format!("must be >= 1 here, got {c_budget}")));
        }
        Ok(Self {
            delta,
            c_budget,
            m_x,
            d,
        })
    }

    /// `beta_t = sqrt(2 log(1/delta) + d log(1 + m^2 t / (d C^2))) + 1 + m`.
    pub fn beta(&self, t: usize) -> f64 {
        let m = self.m_x;
        let log_term = if self.d == 0 {
            0.0
        } else {
            let d = self.d as f64;
            d * (m * m * t as f64 / (d * self.c_budget * self.c_budget)).ln_1p()
        };
        (2.0 * (1.0 / self.delta).ln() + log_term).sqrt() + 1.0 + m
    }
}
