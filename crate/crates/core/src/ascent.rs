//! Projected gradient ascent of `<f(Theta), nu>` over per-column sets
//! `{theta : ||theta - c||_M <= r, ||theta|| <= 1}`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::estimation::NodeRegressor;
use crate::sem::{norm, Dag, MAX_NODES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentParams {
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for AscentParams {
    fn default() -> Self {
        Self {
            restarts: 2,
            steps: 20,
            step_size: 0.5,
        }
    }
}

const TOL: f64 = 1e-12;
const DYKSTRA_SWEEPS: usize = 20;

/// Ellipsoid `||theta - center||_M <= radius` intersected with the unit ball.
/// The center may lie outside the ball; `anchor` is a point of the
/// intersection used for starts and feasibility pulls.
#[derive(Debug, Clone)]
pub struct ColumnSet {
    center: Vec<f64>,
    /// Eigenvectors of `M`, row-major: `q[r * k + c]` is entry `(r, c)`.
    q: Vec<f64>,
    lam: Vec<f64>,
    radius: f64,
    anchor: Vec<f64>,
    /// No feasible point was found; the set collapses to `anchor`.
    empty: bool,
}

impl ColumnSet {
    pub fn from_regressor(reg: &NodeRegressor, radius: f64) -> Self {
        Self::new(reg.estimate().to_vec(), reg.confidence_metric(), radius)
    }

    pub fn new(center: Vec<f64>, metric: DMatrix<f64>, radius: f64) -> Self {
        let k = center.len();
        assert!(k <= MAX_NODES);
        let eig = SymmetricEigen::new(metric);
        let mut q = vec![0.0; k * k];
        for r in 0..k {
            for c in 0..k {
                q[r * k + c] = eig.eigenvectors[(r, c)];
            }
        }
        let mut set = Self {
            anchor: center.clone(),
            center,
            lam: eig.eigenvalues.iter().map(|&l| l.max(TOL)).collect(),
            q,
            radius: radius.max(0.0),
            empty: false,
        };
        let mut a = set.center.clone();
        Self::project_ball(&mut a);
        if !set.contains(&a) {
            set.alternate(&mut a);
            set.empty = !set.contains(&a);
        }
        set.anchor = a;
        set
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    /// True when the ellipsoid misses the unit ball.
    pub fn is_empty(&self) -> bool {
        self.empty
    }

    /// `u = Q^T (x - center)`.
    fn rotate(&self, x: &[f64], u: &mut [f64]) {
        let k = self.dim();
        u[..k].iter_mut().for_each(|v| *v = 0.0);
        for r in 0..k {
            let v = x[r] - self.center[r];
            let row = &self.q[r * k..(r + 1) * k];
            for c in 0..k {
                u[c] += row[c] * v;
            }
        }
    }

    pub fn metric_norm(&self, x: &[f64]) -> f64 {
        let mut u = [0.0; MAX_NODES];
        self.rotate(x, &mut u);
        u.iter().zip(&self.lam).map(|(u, l)| l * u * u).sum::<f64>().sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        norm(x) <= 1.0 + 1e-9 && self.metric_norm(x) <= self.radius * (1.0 + 1e-9) + 1e-12
    }

    fn project_ellipsoid(&self, x: &mut [f64]) {
        if self.radius == 0.0 {
            x.copy_from_slice(&self.center);
            return;
        }
        let k = self.dim();
        let mut u = [0.0; MAX_NODES];
        self.rotate(x, &mut u);
        let u = &mut u[..k];
        let r2 = self.radius * self.radius;
        let phi = |mu: f64| -> (f64, f64) {
            let mut val = 0.0;
            let mut der = 0.0;
            for (uk, &lk) in u.iter().zip(&self.lam) {
                let den = 1.0 + mu * lk;
                val += lk * uk * uk / (den * den);
                der -= 2.0 * lk * lk * uk * uk / (den * den * den);
            }
            (val - r2, der)
        };
        if phi(0.0).0 <= 0.0 {
            return;
        }
        // phi is convex and decreasing, so Newton from the left is monotone.
        let mut mu = 0.0;
        for _ in 0..100 {
            let (val, der) = phi(mu);
            if val <= r2 * TOL || der == 0.0 {
                break;
            }
            mu -= val / der;
        }
        for (uk, lk) in u.iter_mut().zip(&self.lam) {
            *uk /= 1.0 + mu * lk;
        }
        for r in 0..k {
            let row = &self.q[r * k..(r + 1) * k];
            x[r] = self.center[r] + row.iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn project_ball(x: &mut [f64]) {
        let s = norm(x);
        if s > 1.0 {
            x.iter_mut().for_each(|v| *v /= s);
        }
    }

    /// Euclidean projection onto the intersection (Dykstra's alternating scheme).
    pub fn project(&self, x: &mut [f64]) {
        if self.empty {
            x.copy_from_slice(&self.anchor);
            return;
        }
        let k = x.len();
        let mut y = [0.0; MAX_NODES];
        let y = &mut y[..k];
        y.copy_from_slice(x);
        self.project_ellipsoid(y);
        if norm(y) <= 1.0 {
            x.copy_from_slice(y);
            return;
        }
        y.copy_from_slice(x);
        Self::project_ball(y);
        if self.metric_norm(y) <= self.radius {
            x.copy_from_slice(y);
            return;
        }
        // Both constraints bind: a few Dykstra sweeps, then a feasibility pull.
        self.alternate(x);
        self.make_feasible(x);
    }

    fn alternate(&self, x: &mut [f64]) {
        let k = x.len();
        let mut y = [0.0; MAX_NODES];
        let y = &mut y[..k];
        let mut p = [0.0; MAX_NODES];
        let mut q = [0.0; MAX_NODES];
        let mut cur = [0.0; MAX_NODES];
        let mut z = [0.0; MAX_NODES];
        cur[..k].copy_from_slice(x);
        for _ in 0..DYKSTRA_SWEEPS {
            for j in 0..k {
                y[j] = cur[j] + p[j];
            }
            self.project_ellipsoid(y);
            for j in 0..k {
                p[j] += cur[j] - y[j];
                z[j] = y[j] + q[j];
            }
            Self::project_ball(&mut z[..k]);
            let mut moved = 0.0;
            for j in 0..k {
                q[j] += y[j] - z[j];
                moved += (z[j] - cur[j]).powi(2);
                cur[j] = z[j];
            }
            if moved.sqrt() < 1e-10 {
                break;
            }
        }
        x.copy_from_slice(&cur[..k]);
    }

    /// Pulls `x` toward the anchor until it lies in both sets.
    pub fn make_feasible(&self, x: &mut [f64]) {
        if self.empty {
            x.copy_from_slice(&self.anchor);
            return;
        }
        let k = self.dim();
        let mut s: f64 = 1.0;
        if self.metric_norm(x) > self.radius {
            // ||a - c + s v||_M^2 <= r^2 in the eigenbasis.
            let (mut ua, mut ux) = ([0.0; MAX_NODES], [0.0; MAX_NODES]);
            self.rotate(&self.anchor, &mut ua);
            self.rotate(x, &mut ux);
            let (mut aa, mut bb, mut cc) = (0.0, 0.0, 0.0);
            for j in 0..k {
                let v = ux[j] - ua[j];
                aa += self.lam[j] * v * v;
                bb += self.lam[j] * v * ua[j];
                cc += self.lam[j] * ua[j] * ua[j];
            }
            let r2 = self.radius * self.radius;
            let disc = (bb * bb - aa * (cc - r2)).max(0.0);
            s = s.min(((-bb + disc.sqrt()) / aa).max(0.0));
        }
        if norm(x) > 1.0 {
            let (mut vv, mut cv, mut cc) = (0.0, 0.0, 0.0);
            for (xk, ak) in x.iter().zip(&self.anchor) {
                let v = xk - ak;
                vv += v * v;
                cv += v * ak;
                cc += ak * ak;
            }
            let disc = (cv * cv - vv * (cc - 1.0)).max(0.0);
            s = s.min(((-cv + disc.sqrt()) / vv).max(0.0));
        }
        if s < 1.0 {
            let s = s * (1.0 - 1e-12);
            for (xk, ak) in x.iter_mut().zip(&self.anchor) {
                *xk = ak + s * (*xk - ak);
            }
        }
    }
}
/// `E[X]` under columns `theta` (roots contribute their mean only).
fn forward(dag: &Dag, theta: &[Vec<f64>], nu: &[f64], m: &mut [f64]) -> f64 {
    m.copy_from_slice(nu);
    for j in 0..dag.n_nodes() {
        let s: f64 = dag.parents(j).iter().zip(&theta[j]).map(|(&p, w)| w * m[p]).sum();
        m[j] += s;
    }
    m[m.len() - 1]
}

/// Path sums from each node into the reward node.
fn backward(dag: &Dag, theta: &[Vec<f64>], g: &mut [f64]) {
    let n = dag.n_nodes();
    g.iter_mut().for_each(|v| *v = 0.0);
    g[n - 1] = 1.0;
    for j in (0..n).rev() {
        for (&p, w) in dag.parents(j).iter().zip(&theta[j]) {
            g[p] += w * g[j];
        }
    }
}

/// Best value of `<f(Theta), nu>` found over `params.restarts` ascent runs.
/// The first run starts from the anchors; `draw` yields `(standard normal,
/// uniform)` pairs for the random starts.
pub fn maximize<F>(
    dag: &Dag,
    nu: &[f64],
    sets: &[Option<&ColumnSet>],
    params: &AscentParams,
    mut draw: F,
) -> f64
where
    F: FnMut() -> (f64, f64),
{
    let n = dag.n_nodes();
    let mut m = vec![0.0; n];
    let mut g = vec![0.0; n];
    let anchors: Vec<Vec<f64>> = sets
        .iter()
        .map(|s| s.map_or_else(Vec::new, |s| s.anchor.clone()))
        .collect();
    let mut best = forward(dag, &anchors, nu, &mut m);
    let mut theta = anchors.clone();
    for restart in 0..params.restarts.max(1) {
        for (col, c) in theta.iter_mut().zip(&anchors) {
            col.copy_from_slice(c);
        }
        if restart > 0 {
            for (col, set) in theta.iter_mut().zip(sets) {
                let Some(set) = set else { continue };
                let k = set.dim();
                col.copy_from_slice(&set.center);
                let z: Vec<f64> = (0..k).map(|_| draw().0).collect();
                let zn = norm(&z).max(TOL);
                let scale = set.radius * draw().1.powf(1.0 / k as f64) / zn;
                for (r, c) in col.iter_mut().enumerate() {
                    let row = &set.q[r * k..(r + 1) * k];
                    *c += (0..k).map(|j| row[j] * z[j] * scale / set.lam[j].sqrt()).sum::<f64>();
                }
                set.make_feasible(col);
            }
            best = best.max(forward(dag, &theta, nu, &mut m));
        }
        for _ in 0..params.steps {
            forward(dag, &theta, nu, &mut m);
            backward(dag, &theta, &mut g);
            for j in 0..n {
                let Some(set) = sets[j] else { continue };
                for (k, &p) in dag.parents(j).iter().enumerate() {
                    theta[j][k] += params.step_size * g[j] * m[p];
                }
                set.project(&mut theta[j]);
            }
            best = best.max(forward(dag, &theta, nu, &mut m));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(center: Vec<f64>, diag: Vec<f64>, r: f64) -> ColumnSet {
        ColumnSet::new(center, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)), r)
    }

    #[test]
    fn projection_inside_is_identity() {
        let s = set(vec![0.1, 0.0], vec![1.0, 4.0], 0.3);
        let mut x = vec![0.2, 0.05];
        s.project(&mut x);
        assert_eq!(x, vec![0.2, 0.05]);
    }

    #[test]
    fn ball_circle_projection() {
        // M = I, center 0, radius 2: the ball is the binding set.
        let s = set(vec![0.0, 0.0], vec![1.0, 1.0], 2.0);
        let mut x = vec![3.0, 4.0];
        s.project(&mut x);
        assert!((x[0] - 0.6).abs() < 1e-9 && (x[1] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn axis_ellipsoid_projection() {
        let s = set(vec![0.0], vec![4.0], 1.0);
        let mut x = vec![3.0];
        s.project(&mut x);
        assert!((x[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn chain_maximum_is_vertex_product() {
        // Chain 0 -> 1 -> 2 with M = I and radius 1 around 0: each weight is
        // free in [-1, 1], so the optimum is nu_0 + nu_1 + nu_2.
        let dag = Dag::chain(3).unwrap();
        let s = set(vec![0.0], vec![1.0], 1.0);
        let sets = vec![None, Some(&s), Some(&s)];
        let v = maximize(&dag, &[1.0, 0.5, 0.2], &sets, &AscentParams::default(), || (0.3, 0.5));
        assert!((v - 1.7).abs() < 1e-9, "{v}");
    }

    #[test]
    fn center_outside_ball_gets_feasible_anchor() {
        let s = set(vec![1.5, 0.0], vec![1.0, 1.0], 1.0);
        assert!(!s.is_empty());
        assert!(s.contains(s.anchor()));
        assert!((s.anchor()[0] - 1.0).abs() < 1e-9);
        let mut x = vec![-3.0, 2.0];
        s.project(&mut x);
        assert!(s.contains(&x));
    }

    #[test]
    fn ellipsoid_missing_ball_is_empty() {
        let s = set(vec![3.0], vec![1.0], 0.5);
        assert!(s.is_empty());
        let mut x = vec![0.0];
        s.project(&mut x);
        assert_eq!(x, s.anchor());
    }

    proptest! {
        #[test]
        fn anchor_lies_in_nonempty_sets(
            c in prop::collection::vec(-2.0f64..2.0, 3),
            diag in prop::collection::vec(0.5f64..50.0, 3),
            r in 0.0f64..3.0,
        ) {
            let s = set(c, diag, r);
            prop_assert!(s.is_empty() || s.contains(s.anchor()));
        }

        #[test]
        fn projection_is_feasible_and_no_farther_than_center(
            c in prop::collection::vec(-0.5f64..0.5, 2),
            diag in prop::collection::vec(0.5f64..50.0, 2),
            r in 0.0f64..3.0,
            x in prop::collection::vec(-5.0f64..5.0, 2),
        ) {
            let s = set(c.clone(), diag, r);
            let mut y = x.clone();
            s.project(&mut y);
            prop_assert!(s.contains(&y));
            let dist = |a: &[f64]| a.iter().zip(&x).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
            prop_assert!(dist(&y) <= dist(&c) + 1e-9);
        }
    }
}
