//! Synthetic strongly convex federated task.
//!
//! Client `i` holds `F_i(w) = 1/2 (w - b_i)^T Q_i (w - b_i)` with
//! `mu I <= Q_i <= L I`. The global optimum of the weighted sum solves
//! `(sum m_i Q_i) w = sum m_i Q_i b_i`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::derive_rng;

/// A client's local loss.
pub trait LocalObjective: Send + Sync {
    fn gradient(&self, w: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientTask {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub weight: f64,
}

impl ClientTask {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let d = DVector::from_column_slice(w) - &self.b;
        0.5 * d.dot(&(&self.q * &d))
    }

    pub fn local_gradient(&self, w: &[f64]) -> Vec<f64> {
        let d = DVector::from_column_slice(w) - &self.b;
        (&self.q * d).as_slice().to_vec()
    }
}

impl LocalObjective for ClientTask {
    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.local_gradient(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum HeterogeneityProfile {
    /// `b_i = b_bar + spread * N(0, I)`.
    Iid { spread: f64 },
    /// Fast clients center on `+b_bar`, slow ones (ids `>= first_slow`) on
    /// `-b_bar`.
    TwoPopulation { spread: f64, first_slow: u32 },
    /// `b_i` is a Dirichlet mixture of `classes` random centres.
    DirichletLike { classes: usize, concentration: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub dim: usize,
    pub mu: f64,
    pub l: f64,
    /// Norm of the shared centre `b_bar`.
    pub offset: f64,
    pub profile: HeterogeneityProfile,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec { dim: 32, mu: 0.5, l: 2.0, offset: 1.0, profile: HeterogeneityProfile::Iid { spread: 0.5 } }
    }
}

#[derive(Debug, Clone)]
pub struct TaskSet {
    pub tasks: Vec<ClientTask>,
    pub w_star: Vec<f64>,
    pub mu: f64,
    pub l: f64,
}

fn random_orthogonal<R: Rng>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn gaussian_vec<R: Rng>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn make_tasks(n_c: u32, spec: &TaskSpec, seed: u64) -> TaskSet {
    assert!(spec.mu > 0.0 && spec.l >= spec.mu, "need 0 < mu <= L");
    let dim = spec.dim;
    let mut shared = derive_rng(seed, "task/shared", &[]);
    let direction = gaussian_vec(dim, &mut shared).normalize();
    let b_bar = &direction * spec.offset;
    let centres: Vec<DVector<f64>> = match &spec.profile {
        HeterogeneityProfile::DirichletLike { classes, .. } => {
            (0..*classes).map(|_| gaussian_vec(dim, &mut shared).normalize() * spec.offset).collect()
        }
        _ => Vec::new(),
    };

    let tasks = (1..=n_c)
        .map(|id| {
            let mut rng = derive_rng(seed, "task/client", &[id as u64]);
            let r = random_orthogonal(dim, &mut rng);
            let eig = DVector::from_fn(dim, |i, _| match i {
                0 => spec.mu,
                1 => spec.l,
                _ => rng.gen_range(spec.mu..=spec.l),
            });
            let q = &r * DMatrix::from_diagonal(&eig) * r.transpose();
            let q = (&q + q.transpose()) * 0.5;
            let b = match &spec.profile {
                HeterogeneityProfile::Iid { spread } => &b_bar + gaussian_vec(dim, &mut rng) * *spread,
                HeterogeneityProfile::TwoPopulation { spread, first_slow } => {
                    let sign = if id >= *first_slow { -1.0 } else { 1.0 };
                    &b_bar * sign + gaussian_vec(dim, &mut rng) * *spread
                }
                HeterogeneityProfile::DirichletLike { classes, concentration } => {
                    let p = Dirichlet::new(&vec![*concentration; *classes]).expect("valid concentration");
                    let p: Vec<f64> = p.sample(&mut rng);
                    centres.iter().zip(p).fold(DVector::zeros(dim), |acc, (c, w)| acc + c * w)
                }
            };
            ClientTask { q, b, weight: 1.0 }
        })
        .collect::<Vec<_>>();
    let w_star = solve_optimum(&tasks);
    TaskSet { tasks, w_star, mu: spec.mu, l: spec.l }
}

/// Solves `(sum m_i Q_i) w = sum m_i Q_i b_i`.
pub fn solve_optimum(tasks: &[ClientTask]) -> Vec<f64> {
    let dim = tasks[0].dim();
    let mut lhs = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for t in tasks {
        lhs += &t.q * t.weight;
        rhs += &t.q * &t.b * t.weight;
    }
    lhs.cholesky().expect("sum of positive definite matrices").solve(&rhs).as_slice().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub distance: f64,
}

impl TaskSet {
    pub fn dim(&self) -> usize {
        self.w_star.len()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let m: f64 = self.tasks.iter().map(|t| t.weight).sum();
        self.tasks.iter().map(|t| t.weight * t.objective(w)).sum::<f64>() / m
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let m: f64 = self.tasks.iter().map(|t| t.weight).sum();
        let mut g = vec![0.0; self.dim()];
        for t in &self.tasks {
            for (acc, v) in g.iter_mut().zip(t.local_gradient(w)) {
                *acc += t.weight * v / m;
            }
        }
        g
    }

    pub fn evaluate(&self, w: &[f64]) -> Evaluation {
        let distance = w.iter().zip(&self.w_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        Evaluation { objective: self.objective(w), distance }
    }

    pub fn suggest_step_size(&self) -> StepSchedule {
        StepSchedule::Constant { gamma: 1.0 / self.l }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant { gamma: f64 },
    /// `1 / (mu (round + t0))`.
    Decay { mu: f64, t0: f64 },
}

impl StepSchedule {
    pub fn gamma(&self, round: u64) -> f64 {
        match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::Decay { mu, t0 } => 1.0 / (mu * (round as f64 + t0)),
        }
    }
}
