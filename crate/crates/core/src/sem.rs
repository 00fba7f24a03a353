//! Linear structural equation models over a known DAG.
//!
//! Nodes are indexed `0..n` in a topological order: every parent index is
//! strictly smaller than its child, so the edge-weight matrix is strictly
//! upper triangular. The last node is the reward node. Weight matrices are
//! stored column-sparse: column `i` holds one weight per entry of
//! `parents(i)`, in the same order.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Largest graph an [`Intervention`] bit set can address.
pub const MAX_NODES: usize = 64;

const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    parents: Vec<Vec<usize>>,
    max_in_degree: usize,
    longest_path: usize,
    n_edges: usize,
}

impl Dag {
    /// Validates parent ordering and caches the in-degree and path length.
    pub fn new(parents: Vec<Vec<usize>>) -> Result<Self> {
        let n = parents.len();
        if n == 0 || n > MAX_NODES {
            return Err(Error::NodeCount {
                got: n,
                max: MAX_NODES,
            });
        }
        let mut depth = vec![0usize; n];
        let mut n_edges = 0;
        for (child, pa) in parents.iter().enumerate() {
            for (k, &parent) in pa.iter().enumerate() {
                if parent >= child {
                    return Err(Error::ParentOrder { parent, child });
                }
                if pa[..k].contains(&parent) {
                    return Err(Error::DuplicateParent { parent, child });
                }
                depth[child] = depth[child].max(depth[parent] + 1);
            }
            n_edges += pa.len();
        }
        let max_in_degree = parents.iter().map(Vec::len).max().unwrap_or(0);
        let longest_path = depth.iter().copied().max().unwrap_or(0);
        Ok(Self {
            parents,
            max_in_degree,
            longest_path,
            n_edges,
        })
    }

    /// `0 -> 1 -> ... -> n-1`.
    pub fn chain(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| if i == 0 { vec![] } else { vec![i - 1] }).collect())
    }

    /// Fully connected consecutive layers followed by a single reward node
    /// whose parents are the whole last layer.
    pub fn layered(widths: &[usize]) -> Result<Self> {
        let mut parents = Vec::new();
        let mut prev: Vec<usize> = Vec::new();
        for &w in widths {
            let start = parents.len();
            for _ in 0..w {
                parents.push(prev.clone());
            }
            prev = (start..start + w).collect();
        }
        parents.push(prev);
        Self::new(parents)
    }

    pub fn n_nodes(&self) -> usize {
        self.parents.len()
    }

    pub fn reward_node(&self) -> usize {
        self.parents.len() - 1
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    /// `d`: the largest parent-set size.
    pub fn max_in_degree(&self) -> usize {
        self.max_in_degree
    }

    /// `L`: the number of edges on the longest directed path.
    pub fn longest_path(&self) -> usize {
        self.longest_path
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Nodes that carry an estimable column.
    pub fn nodes_with_parents(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_nodes()).filter(move |&i| !self.parents[i].is_empty())
    }
}

/// A set of intervened nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Intervention(u64);

impl Intervention {
    pub const EMPTY: Intervention = Intervention(0);

    pub fn from_bits(bits: u64) -> Self {
        Intervention(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn full(n_nodes: usize) -> Self {
        if n_nodes >= 64 {
            Intervention(u64::MAX)
        } else {
            Intervention((1u64 << n_nodes) - 1)
        }
    }

    pub fn from_nodes<I: IntoIterator<Item = usize>>(nodes: I) -> Self {
        Intervention(nodes.into_iter().fold(0u64, |acc, i| acc | (1u64 << i)))
    }

    pub fn contains(self, node: usize) -> bool {
        self.0 >> node & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn nodes(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&i| self.contains(i))
    }

    /// All `2^n` subsets in increasing bit order.
    pub fn enumerate_all(n_nodes: usize) -> Vec<Intervention> {
        assert!(n_nodes < 64);
        (0..1u64 << n_nodes).map(Intervention).collect()
    }

    /// The empty set followed by every singleton.
    pub fn enumerate_atomic(n_nodes: usize) -> Vec<Intervention> {
        std::iter::once(Intervention::EMPTY)
            .chain((0..n_nodes).map(|i| Intervention(1 << i)))
            .collect()
    }
}

/// Displays 1-based node labels, e.g. `{2,3,4}`.
impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.nodes().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

/// Strictly upper-triangular weights stored on the parent support.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    dag: Arc<Dag>,
    columns: Vec<Vec<f64>>,
}

impl WeightMatrix {
    pub fn new(dag: Arc<Dag>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() != dag.n_nodes() {
            return Err(Error::ColumnShape {
                node: columns.len(),
                expected: dag.n_nodes(),
                got: columns.len(),
            });
        }
        for (i, col) in columns.iter().enumerate() {
            if col.len() != dag.parents(i).len() {
                return Err(Error::ColumnShape {
                    node: i,
                    expected: dag.parents(i).len(),
                    got: col.len(),
                });
            }
        }
        Ok(Self { dag, columns })
    }

    pub fn zeros(dag: Arc<Dag>) -> Self {
        let columns = (0..dag.n_nodes())
            .map(|i| vec![0.0; dag.parents(i).len()])
            .collect();
        Self { dag, columns }
    }

    pub fn dag(&self) -> &Arc<Dag> {
        &self.dag
    }

    pub fn column(&self, node: usize) -> &[f64] {
        &self.columns[node]
    }

    pub fn column_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.columns[node]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Dense `n x n` form with entry `(parent, child)`.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dag.n_nodes();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for child in 0..n {
            for (&p, &w) in self.dag.parents(child).iter().zip(&self.columns[child]) {
                m[(p, child)] = w;
            }
        }
        m
    }

    /// `f(A) = sum_{l=0..L} [A^l]_N`, the reward-node column of every
    /// power, accumulated by repeated sparse products `c <- A c`.
    pub fn reward_map(&self) -> Vec<f64> {
        reward_map_columns(&self.dag, |i| &self.columns[i])
    }

    /// `<f(A), nu>`: the mean of the reward node when noise has mean `nu`.
    pub fn expected_reward(&self, nu: &[f64]) -> f64 {
        dot(&self.reward_map(), nu)
    }
}

/// Column-of-power recursion shared by every caller that assembles a
/// weight matrix from borrowed columns.
pub(crate) fn reward_map_columns<'a, F>(dag: &Dag, column: F) -> Vec<f64>
where
    F: Fn(usize) -> &'a [f64],
{
    let n = dag.n_nodes();
    let mut f = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut next = vec![0.0; n];
    c[dag.reward_node()] = 1.0;
    f[dag.reward_node()] = 1.0;
    for _ in 0..dag.longest_path() {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut any = false;
        for k in 0..n {
            if c[k] == 0.0 {
                continue;
            }
            for (&j, &w) in dag.parents(k).iter().zip(column(k)) {
                next[j] += w * c[k];
                any = true;
            }
        }
        std::mem::swap(&mut c, &mut next);
        if !any {
            break;
        }
        for (fj, cj) in f.iter_mut().zip(&c) {
            *fj += cj;
        }
    }
    f
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Bounded exogenous noise for one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    /// `mean + u`, `u ~ U[-half_width, half_width]`.
    Uniform { mean: f64, half_width: f64 },
    /// Gaussian truncated symmetrically at `clip` standard deviations.
    TruncatedGaussian { mean: f64, sd: f64, clip: f64 },
}

impl NoiseSpec {
    pub fn mean(&self) -> f64 {
        match *self {
            NoiseSpec::Uniform { mean, .. } | NoiseSpec::TruncatedGaussian { mean, .. } => mean,
        }
    }

    /// Largest attainable `|eps|`.
    pub fn magnitude_bound(&self) -> f64 {
        match *self {
            NoiseSpec::Uniform { mean, half_width } => mean.abs() + half_width,
            NoiseSpec::TruncatedGaussian { mean, sd, clip } => mean.abs() + clip * sd,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Uniform { mean, half_width } => {
                if half_width == 0.0 {
                    mean
                } else {
                    mean + rng.random_range(-half_width..=half_width)
                }
            }
            NoiseSpec::TruncatedGaussian { mean, sd, clip } => loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= clip {
                    break mean + sd * z;
                }
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub eps: Vec<f64>,
}

/// Draws `X = W^T X + eps` in index order.
pub fn sample<R: Rng + ?Sized>(weights: &WeightMatrix, noise: &[NoiseSpec], rng: &mut R) -> Sample {
    let eps: Vec<f64> = noise.iter().map(|n| n.draw(rng)).collect();
    let x = propagate(weights, &eps);
    Sample { x, eps }
}

/// Solves the triangular system for a fixed noise realization.
pub fn propagate(weights: &WeightMatrix, eps: &[f64]) -> Vec<f64> {
    let dag = weights.dag();
    let mut x = vec![0.0; dag.n_nodes()];
    for i in 0..dag.n_nodes() {
        let lin: f64 = dag
            .parents(i)
            .iter()
            .zip(weights.column(i))
            .map(|(&p, &w)| w * x[p])
            .sum();
        x[i] = lin + eps[i];
    }
    x
}

/// Observational and interventional weights over one DAG, plus noise.
#[derive(Debug, Clone)]
pub struct SemInstance {
    dag: Arc<Dag>,
    b_obs: WeightMatrix,
    b_int: WeightMatrix,
    noise: Vec<NoiseSpec>,
    nu: Vec<f64>,
    m_eps: f64,
    m_x: f64,
}

impl SemInstance {
    pub fn new(b_obs: WeightMatrix, b_int: WeightMatrix, noise: Vec<NoiseSpec>) -> Result<Self> {
        let dag = b_obs.dag().clone();
        if b_int.dag() != &dag {
            return Err(Error::Precondition(
                "observational and interventional weights use different graphs".into(),
            ));
        }
        if noise.len() != dag.n_nodes() {
            return Err(Error::NoiseShape {
                expected: dag.n_nodes(),
                got: noise.len(),
            });
        }
        for w in [&b_obs, &b_int] {
            for (node, col) in w.columns().iter().enumerate() {
                let nrm = norm(col);
                if nrm > 1.0 + NORM_SLACK {
                    return Err(Error::ColumnNorm { node, norm: nrm });
                }
            }
        }
        let nu: Vec<f64> = noise.iter().map(NoiseSpec::mean).collect();
        let eps_bound: Vec<f64> = noise.iter().map(NoiseSpec::magnitude_bound).collect();
        let m_eps = norm(&eps_bound);
        let m_x = sample_norm_bound(&dag, &eps_bound);
        Ok(Self {
            dag,
            b_obs,
            b_int,
            noise,
            nu,
            m_eps,
            m_x,
        })
    }

    pub fn dag(&self) -> &Arc<Dag> {
        &self.dag
    }

    pub fn n_nodes(&self) -> usize {
        self.dag.n_nodes()
    }

    pub fn b_obs(&self) -> &WeightMatrix {
        &self.b_obs
    }

    pub fn b_int(&self) -> &WeightMatrix {
        &self.b_int
    }

    pub fn noise(&self) -> &[NoiseSpec] {
        &self.noise
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn m_eps(&self) -> f64 {
        self.m_eps
    }

    /// Bound on `||X||` valid for every arm and every deviated model whose
    /// columns stay in the unit ball.
    pub fn m_x(&self) -> f64 {
        self.m_x
    }

    /// Column `i` of `B_a`: interventional if `i` is in `a`.
    pub fn compose_weights(&self, a: Intervention) -> WeightMatrix {
        let columns = (0..self.n_nodes())
            .map(|i| {
                if a.contains(i) {
                    self.b_int.column(i).to_vec()
                } else {
                    self.b_obs.column(i).to_vec()
                }
            })
            .collect();
        WeightMatrix {
            dag: self.dag.clone(),
            columns,
        }
    }

    /// Nominal `mu_a`.
    pub fn expected_reward(&self, a: Intervention) -> f64 {
        let b = &self.b_obs;
        let bs = &self.b_int;
        let f = reward_map_columns(&self.dag, |i| {
            if a.contains(i) {
                bs.column(i)
            } else {
                b.column(i)
            }
        });
        dot(&f, &self.nu)
    }

    /// Draws one sample and checks it against `m_x`.
    pub fn sample<R: Rng + ?Sized>(&self, weights: &WeightMatrix, rng: &mut R) -> Result<Sample> {
        let s = sample(weights, &self.noise, rng);
        let nrm = norm(&s.x);
        if nrm > self.m_x * (1.0 + 1e-9) {
            return Err(Error::SampleBound {
                norm: nrm,
                bound: self.m_x,
            });
        }
        Ok(s)
    }

    /// Arm with the largest nominal mean. Ties go to the smallest bit set.
    /// Returns the position in `arms`, the arm and its mean.
    pub fn best_arm(&self, arms: &[Intervention]) -> (usize, Intervention, f64) {
        assert!(!arms.is_empty(), "best_arm needs at least one arm");
        let mut best = (0, arms[0], self.expected_reward(arms[0]));
        for (k, &a) in arms.iter().enumerate().skip(1) {
            let mu = self.expected_reward(a);
            if mu > best.2 || (mu == best.2 && a < best.1) {
                best = (k, a, mu);
            }
        }
        best
    }
}

/// Per-node magnitude propagation: `|X_i| <= ||xbar_pa(i)|| + |eps_i|max`
/// whenever column `i` has norm at most one.
fn sample_norm_bound(dag: &Dag, eps_bound: &[f64]) -> f64 {
    let mut xbar = vec![0.0; dag.n_nodes()];
    for i in 0..dag.n_nodes() {
        let pa: f64 = dag.parents(i).iter().map(|&p| xbar[p] * xbar[p]).sum();
        xbar[i] = pa.sqrt() + eps_bound[i];
    }
    norm(&xbar)
}
