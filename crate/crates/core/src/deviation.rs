//! Adversarial deviation schedules and their budget accounting.
//!
//! A schedule maps a round `t` (1-based) to a set of per-node column
//! shifts. A shift is a rule applied to whatever column is active under the
//! played arm, so the deviation `D_a(t) - B_a` is charged per node as the
//! largest norm it can take over both the observational and interventional
//! column.
//!
//! The unified budget `C` is `m_c * C_DF` under the frequency measure and
//! `C_AD` under the aggregate measure.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sem::{norm, SemInstance, WeightMatrix};

const BUDGET_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    None,
    /// Deviation frequency: rounds with a nonzero shift, each capped at `m_c`.
    Df,
    /// Aggregate deviation: summed shift norms.
    Ad,
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::None => "none",
            Measure::Df => "df",
            Measure::Ad => "ad",
        })
    }
}

impl FromStr for Measure {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Measure::None),
            "df" => Ok(Measure::Df),
            "ad" => Ok(Measure::Ad),
            _ => Err(format!("unknown measure `{s}` (expected df|ad|none)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    None,
    EarlyFlip,
    Zeroing,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::None => "none",
            ScheduleKind::EarlyFlip => "early_flip",
            ScheduleKind::Zeroing => "zeroing",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(ScheduleKind::None),
            "early_flip" => Ok(ScheduleKind::EarlyFlip),
            "zeroing" => Ok(ScheduleKind::Zeroing),
            _ => Err(format!(
                "unknown schedule `{s}` (expected early_flip|zeroing|none)"
            )),
        }
    }
}

/// Rule applied to the active column of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColumnShift {
    /// `delta = -2 col`, rescaled so that `||delta|| <= cap`.
    Flip { cap: f64 },
    /// `delta = -col`.
    Zero,
}

impl ColumnShift {
    fn scale(&self, col_norm: f64) -> f64 {
        match *self {
            ColumnShift::Flip { cap } => {
                if col_norm == 0.0 {
                    0.0
                } else {
                    2.0f64.min(cap / col_norm)
                }
            }
            ColumnShift::Zero => 1.0,
        }
    }

    /// The deviation column for a given active column.
    pub fn delta(&self, col: &[f64]) -> Vec<f64> {
        let s = self.scale(norm(col));
        col.iter().map(|v| -s * v).collect()
    }

    fn apply(&self, col: &mut [f64]) {
        let s = self.scale(norm(col));
        col.iter_mut().for_each(|v| *v *= 1.0 - s);
    }

    /// `max_a ||delta||` given the largest active-column norm.
    fn charge(&self, max_col_norm: f64) -> f64 {
        match *self {
            ColumnShift::Flip { cap } => (2.0 * max_col_norm).min(cap),
            ColumnShift::Zero => max_col_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationSchedule {
    kind: ScheduleKind,
    measure: Measure,
    budget: f64,
    m_c: f64,
    /// `rounds[t - 1]` lists the shifted nodes at round `t`.
    rounds: Vec<Vec<(usize, ColumnShift)>>,
    /// Per node, the larger of the observational and interventional norms.
    max_col_norm: Vec<f64>,
}

/// Per-node accounting of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeBudget {
    /// Rounds with a nonzero deviation.
    pub count: usize,
    /// Summed deviation norms.
    pub aggregate: f64,
    /// Largest single-round deviation norm.
    pub peak: f64,
}

impl DeviationSchedule {
    /// Schedule without any deviation.
    pub fn none(sem: &SemInstance) -> Self {
        Self {
            kind: ScheduleKind::None,
            measure: Measure::None,
            budget: 0.0,
            m_c: 0.0,
            rounds: Vec::new(),
            max_col_norm: max_col_norms(sem),
        }
    }

    /// Sign flips of the targeted nodes' active columns during the first
    /// rounds. Under `Df` the flip lasts `floor(C / m_c)` rounds; under
    /// `Ad` it lasts `ceil(C / m_c)` rounds with the last round trimmed so
    /// the aggregate never exceeds `C`.
    pub fn early_flip(
        sem: &SemInstance,
        measure: Measure,
        c: f64,
        m_c: f64,
        targets: &[usize],
        horizon: usize,
    ) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Schedule(format!("budget must be >= 0, got {c}")));
        }
        if !(m_c > 0.0) {
            return Err(Error::Schedule(format!("m_c must be > 0, got {m_c}")));
        }
        let max_col_norm = max_col_norms(sem);
        let mut schedule = Self {
            kind: ScheduleKind::EarlyFlip,
            measure,
            budget: c,
            m_c,
            rounds: Vec::new(),
            max_col_norm,
        };
        let targets: Vec<usize> = targets
            .iter()
            .copied()
            .filter(|&i| !sem.dag().parents(i).is_empty())
            .collect();
        if c == 0.0 || targets.is_empty() || measure == Measure::None {
            return Ok(schedule);
        }
        let k = match measure {
            Measure::Df => (c / m_c + BUDGET_SLACK).floor() as usize,
            Measure::Ad => (c / m_c - BUDGET_SLACK).ceil() as usize,
            Measure::None => unreachable!(),
        };
        if k > horizon {
            return Err(Error::BudgetInfeasible { rounds: k, horizon });
        }
        let mut remaining = vec![c; sem.n_nodes()];
        for _ in 0..k {
            let mut round = Vec::with_capacity(targets.len());
            for &i in &targets {
                let cap = match measure {
                    Measure::Df => m_c,
                    _ => m_c.min(remaining[i]),
                };
                if cap <= 0.0 {
                    continue;
                }
                let shift = ColumnShift::Flip { cap };
                remaining[i] -= shift.charge(schedule.max_col_norm[i]);
                round.push((i, shift));
            }
            schedule.rounds.push(round);
        }
        Ok(schedule)
    }

    /// Zeroes the reward node's active column for the first rounds:
    /// `floor(C)` rounds under `Ad`, `floor(C / m_c)` under `Df`.
    pub fn zeroing(
        sem: &SemInstance,
        measure: Measure,
        c: f64,
        m_c: f64,
        horizon: usize,
    ) -> Result<Self> {
        let reward = sem.dag().reward_node();
        if sem.dag().parents(reward).is_empty() {
            return Err(Error::Schedule("reward node has no parents".into()));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Schedule(format!("budget must be >= 0, got {c}")));
        }
        let max_col_norm = max_col_norms(sem);
        let k = match measure {
            Measure::None => 0,
            Measure::Ad => (c + BUDGET_SLACK).floor() as usize,
            Measure::Df => {
                if !(m_c > 0.0) {
                    return Err(Error::Schedule(format!("m_c must be > 0, got {m_c}")));
                }
                if max_col_norm[reward] > m_c + BUDGET_SLACK {
                    return Err(Error::Schedule(format!(
                        "zeroing needs m_c >= {} under df",
                        max_col_norm[reward]
                    )));
                }
                (c / m_c + BUDGET_SLACK).floor() as usize
            }
        };
        if k > horizon {
            return Err(Error::BudgetInfeasible { rounds: k, horizon });
        }
        Ok(Self {
            kind: ScheduleKind::Zeroing,
            measure,
            budget: c,
            m_c,
            rounds: vec![vec![(reward, ColumnShift::Zero)]; k],
            max_col_norm,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    /// The unified budget `C`.
    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn m_c(&self) -> f64 {
        self.m_c
    }

    /// Last round with any deviation (0 if none).
    pub fn last_round(&self) -> usize {
        self.rounds.len()
    }

    /// Shifts active at round `t`.
    pub fn shifts(&self, t: usize) -> &[(usize, ColumnShift)] {
        assert!(t >= 1, "rounds are 1-based");
        self.rounds.get(t - 1).map_or(&[], Vec::as_slice)
    }

    pub fn is_active(&self, t: usize) -> bool {
        !self.shifts(t).is_empty()
    }

    /// `D = nominal + delta(t)`. Supports are unchanged.
    pub fn apply(&self, t: usize, nominal: &WeightMatrix) -> WeightMatrix {
        let mut d = nominal.clone();
        self.apply_in_place(t, &mut d);
        d
    }

    pub fn apply_in_place(&self, t: usize, weights: &mut WeightMatrix) {
        for &(i, shift) in self.shifts(t) {
            shift.apply(weights.column_mut(i));
        }
    }

    /// Realized count and aggregate per node.
    pub fn realized_budget(&self) -> Vec<NodeBudget> {
        let mut out = vec![NodeBudget::default(); self.max_col_norm.len()];
        for round in &self.rounds {
            for &(i, shift) in round {
                let charge = shift.charge(self.max_col_norm[i]);
                if charge > 0.0 {
                    out[i].count += 1;
                    out[i].aggregate += charge;
                    out[i].peak = out[i].peak.max(charge);
                }
            }
        }
        out
    }

    /// Checks the realized budget against the declared measure.
    pub fn check_budget(&self) -> Result<Vec<NodeBudget>> {
        let report = self.realized_budget();
        for (node, b) in report.iter().enumerate() {
            match self.measure {
                Measure::None => {
                    if b.count > 0 {
                        return Err(Error::BudgetViolation {
                            node,
                            detail: format!("{} deviation rounds under measure none", b.count),
                        });
                    }
                }
                Measure::Df => {
                    let c_df = (self.budget / self.m_c + BUDGET_SLACK).floor() as usize;
                    if b.count > c_df {
                        return Err(Error::BudgetViolation {
                            node,
                            detail: format!("{} deviation rounds > C_DF = {c_df}", b.count),
                        });
                    }
                    if b.peak > self.m_c + BUDGET_SLACK {
                        return Err(Error::BudgetViolation {
                            node,
                            detail: format!("deviation norm {} > m_c = {}", b.peak, self.m_c),
                        });
                    }
                }
                Measure::Ad => {
                    if b.aggregate > self.budget + BUDGET_SLACK {
                        return Err(Error::BudgetViolation {
                            node,
                            detail: format!(
                                "aggregate deviation {} > C_AD = {}",
                                b.aggregate, self.budget
                            ),
                        });
                    }
                }
            }
        }
        Ok(report)
    }

    #[cfg(test)]
    pub(crate) fn push_round(&mut self, round: Vec<(usize, ColumnShift)>) {
        self.rounds.push(round);
    }
}

fn max_col_norms(sem: &SemInstance) -> Vec<f64> {
    (0..sem.n_nodes())
        .map(|i| norm(sem.b_obs().column(i)).max(norm(sem.b_int().column(i))))
        .collect()
}
