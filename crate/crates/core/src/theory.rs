//! Bound evaluators, brute-force oracles and the lower-bound instance.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sem::{norm, Dag, NoiseSpec, SemInstance, WeightMatrix};

/// Graph and scale parameters for the order-level regret curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub d: usize,
    pub l: usize,
    pub n: usize,
    pub m_x: f64,
    /// Scale standing in for the hidden constants.
    pub c0: f64,
}

/// `c0 (2m + d^{L-1/2} (sqrt(NT) + NC) log(1+T))`.
pub fn upper_bound_curve(t: f64, c: f64, p: &BoundParams) -> f64 {
    let d = p.d as f64;
    let n = p.n as f64;
    let lead = d.powf(p.l as f64 - 0.5) * ((n * t).sqrt() + n * c) * t.ln_1p();
    p.c0 * (2.0 * p.m_x + lead)
}

/// `c0 d^{L/2-2} max(sqrt(T), d^2 C)`.
pub fn lower_bound_curve(t: f64, c: f64, p: &BoundParams) -> f64 {
    let d = p.d as f64;
    p.c0 * d.powf(p.l as f64 / 2.0 - 2.0) * t.sqrt().max(d * d * c)
}

/// `f(A)` by explicit enumeration of every directed path ending at the
/// reward node: entry `j` sums the edge-weight products over paths from `j`.
/// Exponential in the worst case, so limited to 12 nodes.
pub fn f_paths(weights: &WeightMatrix) -> Result<Vec<f64>> {
    let dag = weights.dag();
    let n = dag.n_nodes();
    if n > 12 {
        return Err(Error::EnumerationTooLarge(n));
    }
    let mut children: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for child in 0..n {
        for (&p, &w) in dag.parents(child).iter().zip(weights.column(child)) {
            children[p].push((child, w));
        }
    }
    fn walk(node: usize, target: usize, product: f64, children: &[Vec<(usize, f64)>]) -> f64 {
        let mut total = if node == target { product } else { 0.0 };
        for &(c, w) in &children[node] {
            total += walk(c, target, product * w, children);
        }
        total
    }
    let target = dag.reward_node();
    Ok((0..n).map(|j| walk(j, target, 1.0, &children)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompoundingReport {
    /// `||[A^l - B^l]_N||` for `l = 1..=L`.
    pub lhs: Vec<f64>,
    /// `d^{(l-1)/2} (beta+1)^l max_i lambda_min(M_i)^{-1/2}`.
    pub rhs: Vec<f64>,
    pub holds: bool,
}

/// Evaluates both sides of the compounding-error bound with dense powers.
///
/// `metrics[i]` is the support block of `M_i` (`|Pa(i)| x |Pa(i)|`); the
/// identity outside the support is implied. Preconditions are checked and
/// reported as errors, never as a failed bound.
pub fn lemma3_check(
    a: &WeightMatrix,
    b: &WeightMatrix,
    metrics: &[DMatrix<f64>],
    beta: f64,
) -> Result<CompoundingReport> {
    let dag = b.dag();
    if a.dag() != dag {
        return Err(Error::Precondition("A and B_a must share the same support".into()));
    }
    let n = dag.n_nodes();
    if n > 32 {
        return Err(Error::Precondition(format!("dense check limited to 32 nodes, got {n}")));
    }
    if metrics.len() != n {
        return Err(Error::Precondition(format!("expected {n} metrics, got {}", metrics.len())));
    }
    let tol = 1e-9;
    let mut max_inv_sqrt: f64 = 0.0;
    for i in 0..n {
        let k = dag.parents(i).len();
        if k == 0 {
            continue;
        }
        let m = &metrics[i];
        if m.nrows() != k || m.ncols() != k {
            return Err(Error::Precondition(format!("metric {i} must be {k}x{k}")));
        }
        let lam = SymmetricEigen::new(m.clone()).eigenvalues.min();
        if lam < 1.0 - tol {
            return Err(Error::Precondition(format!("M_{i} is not >= I (min eig {lam})")));
        }
        if norm(b.column(i)) > 1.0 + tol {
            return Err(Error::Precondition(format!("column {i} of B_a exceeds the unit ball")));
        }
        let delta = nalgebra::DVector::from_iterator(
            k,
            a.column(i).iter().zip(b.column(i)).map(|(x, y)| x - y),
        );
        let dn = (delta.transpose() * m * &delta)[(0, 0)].max(0.0).sqrt();
        if dn > beta * (1.0 + tol) + tol {
            return Err(Error::Precondition(format!(
                "||[A - B_a]_{i}||_M = {dn} exceeds beta = {beta}"
            )));
        }
        max_inv_sqrt = max_inv_sqrt.max(lam.powf(-0.5));
    }
    let da = a.to_dense();
    let db = b.to_dense();
    let l_max = dag.longest_path();
    let d = dag.max_in_degree() as f64;
    let r = dag.reward_node();
    let mut pa = da.clone();
    let mut pb = db.clone();
    let mut lhs = Vec::with_capacity(l_max);
    let mut rhs = Vec::with_capacity(l_max);
    for l in 1..=l_max {
        if l > 1 {
            pa = &pa * &da;
            pb = &pb * &db;
        }
        lhs.push((pa.column(r) - pb.column(r)).norm());
        rhs.push(d.powf((l as f64 - 1.0) / 2.0) * (beta + 1.0).powi(l as i32) * max_inv_sqrt);
    }
    let holds = lhs.iter().zip(&rhs).all(|(x, y)| x <= y);
    Ok(CompoundingReport { lhs, rhs, holds })
}

/// Hierarchical lower-bound instance: `L` layers of `d` nodes, fully
/// connected between consecutive layers, then the reward node. Every edge
/// weight is `sqrt(1/d)` except the reward node's observational column,
/// which is zero. The first layer has noise mean 1, every other node 0.
/// Gaussian noise is truncated at three standard deviations.
pub fn theorem2_instance(d: usize, l: usize) -> Result<SemInstance> {
    if d == 0 || l == 0 {
        return Err(Error::Precondition("theorem2 instance needs d >= 1 and L >= 1".into()));
    }
    let dag = Arc::new(Dag::layered(&vec![d; l])?);
    let n = dag.n_nodes();
    let w = (1.0 / d as f64).sqrt();
    let int: Vec<Vec<f64>> = (0..n).map(|i| vec![w; dag.parents(i).len()]).collect();
    let mut obs = int.clone();
    obs[n - 1].iter_mut().for_each(|v| *v = 0.0);
    let noise = (0..n)
        .map(|i| NoiseSpec::TruncatedGaussian {
            mean: if i < d { 1.0 } else { 0.0 },
            sd: 1.0,
            clip: 3.0,
        })
        .collect();
    SemInstance::new(
        WeightMatrix::new(dag.clone(), obs)?,
        WeightMatrix::new(dag, int)?,
        noise,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::Intervention;

    fn params(d: usize, l: usize) -> BoundParams {
        BoundParams {
            d,
            l,
            n: l * d + 1,
            m_x: 1.0,
            c0: 1.0,
        }
    }

    #[test]
    fn upper_curve_sqrt_t_scaling() {
        let p = BoundParams { m_x: 0.0, ..params(2, 2) };
        let a = upper_bound_curve(1e4, 0.0, &p) / (1e4f64).ln_1p();
        let b = upper_bound_curve(4e4, 0.0, &p) / (4e4f64).ln_1p();
        assert!((b / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn upper_curve_degree_ratio() {
        let p3 = BoundParams { m_x: 0.0, n: 7, ..params(3, 2) };
        let p1 = BoundParams { m_x: 0.0, n: 7, ..params(1, 2) };
        let r = upper_bound_curve(1e4, 10.0, &p3) / upper_bound_curve(1e4, 10.0, &p1);
        assert!((r - 3f64.powf(1.5)).abs() < 1e-9);
    }

    #[test]
    fn upper_curve_linear_in_c() {
        let p = params(3, 2);
        let t = 1e4;
        let s1 = upper_bound_curve(t, 20.0, &p) - upper_bound_curve(t, 10.0, &p);
        let s2 = upper_bound_curve(t, 30.0, &p) - upper_bound_curve(t, 20.0, &p);
        assert!((s1 - s2).abs() < 1e-6 * s1);
        let expected = 3f64.powf(1.5) * p.n as f64 * 10.0 * t.ln_1p();
        assert!((s1 - expected).abs() < 1e-6 * expected);
    }

    #[test]
    fn lower_curve_branches() {
        let p = params(2, 2);
        let t = 1e4;
        assert!((lower_bound_curve(t, 0.0, &p) - 2f64.powf(-1.0) * 100.0).abs() < 1e-12);
        let crossover = t.sqrt() / 4.0;
        assert!((lower_bound_curve(t, crossover, &p) - lower_bound_curve(t, 0.0, &p)).abs() < 1e-9);
        let big = lower_bound_curve(t, 2.0 * crossover, &p);
        assert!((big - 2.0 * lower_bound_curve(t, 0.0, &p)).abs() < 1e-9);
    }

    #[test]
    fn f_paths_examples() {
        let dag = Arc::new(Dag::chain(3).unwrap());
        assert_eq!(f_paths(&WeightMatrix::zeros(dag.clone())).unwrap(), vec![0.0, 0.0, 1.0]);
        let w = WeightMatrix::new(dag, vec![vec![], vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(f_paths(&w).unwrap(), vec![0.25, 0.5, 1.0]);
    }

    #[test]
    fn f_paths_refuses_large_graphs() {
        let dag = Arc::new(Dag::chain(13).unwrap());
        assert!(matches!(
            f_paths(&WeightMatrix::zeros(dag)),
            Err(Error::EnumerationTooLarge(13))
        ));
    }

    #[test]
    fn compounding_check_trivial_cases() {
        let dag = Arc::new(Dag::chain(2).unwrap());
        let b = WeightMatrix::new(dag.clone(), vec![vec![], vec![0.5]]).unwrap();
        let metrics = vec![DMatrix::zeros(0, 0), DMatrix::identity(1, 1)];
        let rep = lemma3_check(&b, &b, &metrics, 0.7).unwrap();
        assert_eq!(rep.lhs, vec![0.0]);
        assert!(rep.holds);

        let beta = 0.3;
        let a = WeightMatrix::new(dag, vec![vec![], vec![0.5 + beta]]).unwrap();
        let rep = lemma3_check(&a, &b, &metrics, beta).unwrap();
        assert!((rep.lhs[0] - beta).abs() < 1e-15);
        assert!((rep.rhs[0] - (beta + 1.0)).abs() < 1e-15);
        assert!(rep.holds);
    }

    #[test]
    fn compounding_check_reports_precondition() {
        let dag = Arc::new(Dag::chain(2).unwrap());
        let b = WeightMatrix::new(dag.clone(), vec![vec![], vec![0.5]]).unwrap();
        let a = WeightMatrix::new(dag, vec![vec![], vec![1.5]]).unwrap();
        let metrics = vec![DMatrix::zeros(0, 0), DMatrix::identity(1, 1)];
        assert!(matches!(lemma3_check(&a, &b, &metrics, 0.5), Err(Error::Precondition(_))));
    }

    fn gap(d: usize, l: usize) -> f64 {
        let sem = theorem2_instance(d, l).unwrap();
        let r = sem.dag().reward_node();
        sem.expected_reward(Intervention::from_nodes([r])) - sem.expected_reward(Intervention::EMPTY)
    }

    #[test]
    fn lower_bound_instance_gaps() {
        assert!((gap(1, 1) - 1.0).abs() < 1e-12);
        assert!((gap(3, 2) - 3.0).abs() < 1e-12);
        for d in 1..=6 {
            for l in 1..=3 {
                let expected = (d as f64).powf(l as f64 / 2.0);
                assert!((gap(d, l) - expected).abs() < 1e-9, "d={d} L={l}");
            }
        }
    }

    #[test]
    fn lower_bound_instance_columns_unit_norm() {
        let sem = theorem2_instance(3, 2).unwrap();
        for i in 3..7 {
            assert!((norm(sem.b_int().column(i)) - 1.0).abs() < 1e-12);
        }
        assert_eq!(sem.dag().max_in_degree(), 3);
        assert_eq!(sem.dag().longest_path(), 2);
    }

    #[test]
    fn upper_dominates_lower_at_matched_constants() {
        for d in 1..=5 {
            for l in 1..=4 {
                let p = params(d, l);
                for t in [1.0, 10.0, 1e3, 4e4] {
                    for c in [1.0, 15.0, 200.0, 2000.0] {
                        assert!(upper_bound_curve(t, c, &p) >= lower_bound_curve(t, c, &p));
                    }
                }
            }
        }
    }
}
