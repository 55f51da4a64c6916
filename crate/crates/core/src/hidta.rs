//! Hierarchical directed transfer aggregation.
//!
//! Transferability `τ_{a←b}` is the scalar projection of `θ'_b − θ_a` onto
//! client `a`'s own update direction `θ'_a − θ_a`. It is computed between
//! task models (per-task means of client parameters), extrapolated to client
//! pairs via each client's distance from its task model, and then used as a
//! directed, clamped weight for parameter averaging.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::encoder::ParamVector;
use crate::tasks::TaskLevel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HidtaError {
    #[error("parameter vectors have different shapes")]
    ShapeMismatch,
    #[error("task {0} has no clients")]
    EmptyTask(TaskLevel),
}

const DEGENERATE: f64 = 1e-12;

fn check_len(a: &[f64], b: &[f64]) -> Result<(), HidtaError> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(HidtaError::ShapeMismatch)
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `τ_{a←b} = (θ'_a − θ_a)·(θ'_b − θ_a) / ‖θ'_a − θ_a‖`, or 0 when `a` did not move.
pub fn transferability(
    theta_a: &[f64],
    theta_a_next: &[f64],
    theta_b_next: &[f64],
) -> Result<f64, HidtaError> {
    check_len(theta_a, theta_a_next)?;
    check_len(theta_a, theta_b_next)?;
    let mut dot = 0.0;
    let mut norm2 = 0.0;
    for ((a, an), bn) in theta_a.iter().zip(theta_a_next).zip(theta_b_next) {
        let u = an - a;
        dot += u * (bn - a);
        norm2 += u * u;
    }
    let norm = norm2.sqrt();
    if norm < DEGENERATE {
        return Ok(0.0);
    }
    Ok(dot / norm)
}

/// Fused view of all clients solving one task level.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub level: TaskLevel,
    pub theta: Vec<f64>,
    pub theta_next: Vec<f64>,
}

fn mean_of<'a>(vs: impl ExactSizeIterator<Item = &'a [f64]>) -> Result<Vec<f64>, HidtaError> {
    let n = vs.len() as f64;
    let mut out: Option<Vec<f64>> = None;
    for v in vs {
        match out.as_mut() {
            None => out = Some(v.to_vec()),
            Some(acc) => {
                check_len(acc, v)?;
                acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
            }
        }
    }
    let mut out = out.unwrap_or_default();
    out.iter_mut().for_each(|a| *a /= n);
    Ok(out)
}

/// Client parameters before (`θ`) and after (`θ'`) local training.
pub type ClientPair<'a> = (&'a [f64], &'a [f64]);

/// Per-task arithmetic means of `θ` and `θ'`.
pub fn build_task_models(
    groups: &BTreeMap<TaskLevel, Vec<ClientPair<'_>>>,
) -> Result<Vec<TaskModel>, HidtaError> {
    groups
        .iter()
        .map(|(&level, members)| {
            if members.is_empty() {
                return Err(HidtaError::EmptyTask(level));
            }
            Ok(TaskModel {
                level,
                theta: mean_of(members.iter().map(|m| m.0))?,
                theta_next: mean_of(members.iter().map(|m| m.1))?,
            })
        })
        .collect()
}

/// Normalization `σ` applied to client-to-task distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceNorm {
    Sigmoid,
    Relu,
}

impl DistanceNorm {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            DistanceNorm::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            DistanceNorm::Relu => x.max(0.0),
        }
    }
}

/// Client-level transferability extrapolated from task-level `τ_{p_a←p_b}`.
pub fn hierarchical_tau(
    theta_a: &[f64],
    task_a: &TaskModel,
    theta_b: &[f64],
    task_b: &TaskModel,
    tau_task: f64,
    norm: DistanceNorm,
) -> Result<f64, HidtaError> {
    check_len(theta_a, &task_a.theta)?;
    check_len(theta_b, &task_b.theta)?;
    let fa = 1.0 - norm.apply(l2(theta_a, &task_a.theta));
    let fb = 1.0 - norm.apply(l2(theta_b, &task_b.theta));
    Ok(fa * fb * tau_task)
}

/// Directed transferabilities, `get(i, j) = τ_{i←j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    n: usize,
    values: Vec<f64>,
}

impl TransferMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f(i, j));
            }
        }
        TransferMatrix { n, values }
    }

    pub fn constant(n: usize, v: f64) -> Self {
        TransferMatrix::from_fn(n, |_, _| v)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Normalized, clamped aggregation weights of row `i`; `None` for a no-op row.
    pub fn row_weights(&self, i: usize) -> Option<Vec<f64>> {
        let row: Vec<f64> = (0..self.n).map(|j| self.get(i, j).max(0.0)).collect();
        let sum: f64 = row.iter().sum();
        (sum >= DEGENERATE).then(|| row.into_iter().map(|w| w / sum).collect())
    }
}

/// Options for [`compute_transfer_matrix`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HidtaOptions {
    pub norm: DistanceNorm,
    /// Use client-level transferability directly for same-task pairs.
    pub direct_intra_task: bool,
}

impl Default for HidtaOptions {
    fn default() -> Self {
        HidtaOptions {
            norm: DistanceNorm::Sigmoid,
            direct_intra_task: false,
        }
    }
}

/// Task models, task-level transferabilities, then client-level extrapolation.
pub fn compute_transfer_matrix(
    levels: &[TaskLevel],
    theta: &[&[f64]],
    theta_next: &[&[f64]],
    opts: HidtaOptions,
) -> Result<TransferMatrix, HidtaError> {
    let n = levels.len();
    if theta.len() != n || theta_next.len() != n {
        return Err(HidtaError::ShapeMismatch);
    }
    let mut groups: BTreeMap<TaskLevel, Vec<ClientPair<'_>>> = BTreeMap::new();
    for i in 0..n {
        groups
            .entry(levels[i])
            .or_default()
            .push((theta[i], theta_next[i]));
    }
    let models = build_task_models(&groups)?;
    let find = |l: TaskLevel| {
        models
            .iter()
            .find(|m| m.level == l)
            .expect("every level has a model")
    };
    let mut task_tau = BTreeMap::new();
    for a in &models {
        for b in &models {
            task_tau.insert(
                (a.level, b.level),
                transferability(&a.theta, &a.theta_next, &b.theta_next)?,
            );
        }
    }
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let tau = if opts.direct_intra_task && levels[i] == levels[j] {
                transferability(theta[i], theta_next[i], theta_next[j])?
            } else {
                hierarchical_tau(
                    theta[i],
                    find(levels[i]),
                    theta[j],
                    find(levels[j]),
                    task_tau[&(levels[i], levels[j])],
                    opts.norm,
                )?
            };
            values.push(tau);
        }
    }
    Ok(TransferMatrix { n, values })
}

/// `θ_i ← Σ_j w_ij θ_j` with `w_ij ∝ max(τ_{i←j}, 0)`; no-op rows keep `θ_i`.
pub fn aggregate(
    params: &[ParamVector],
    tau: &TransferMatrix,
) -> Result<Vec<ParamVector>, HidtaError> {
    if tau.len() != params.len() {
        return Err(HidtaError::ShapeMismatch);
    }
    let Some(first) = params.first() else {
        return Ok(Vec::new());
    };
    if params
        .iter()
        .any(|p| p.layout != first.layout || p.len() != first.len())
    {
        return Err(HidtaError::ShapeMismatch);
    }
    Ok((0..params.len())
        .map(|i| match tau.row_weights(i) {
            None => params[i].clone(),
            Some(w) => weighted_sum(params, &w),
        })
        .collect())
}

pub(crate) fn weighted_sum(params: &[ParamVector], weights: &[f64]) -> ParamVector {
    let mut out = ParamVector::zeros(params[0].layout);
    for (p, &w) in params.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        out.values
            .iter_mut()
            .zip(&p.values)
            .for_each(|(o, x)| *o += w * x);
    }
    out
}
