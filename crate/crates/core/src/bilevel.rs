//! Bi-level adaptation: task weights learned from implicit hypergradients
//! (BLO) and rotation scalars learned on held-out data to steer RCGrad
//! (BLORC).
//!
//! The hypergradient uses a truncated Neumann series for the inverse
//! Hessian. With `p = q = ∇L_val` and `M` steps of `p ← p − β·Hp; q ← q + p`,
//! `q ≈ H⁻¹∇L_val / β`, so [`neumann_hypergrad`] returns the analytic
//! hypergradient divided by `β`. The outer learning rate absorbs the scale.

use serde::{Deserialize, Serialize};

use crate::autodiff::{hvp, FlatGrad, Objective};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tasks::DatasetSplit;
use crate::training::{train, Method, TrainConfig, TrainData, TrainOutcome};

/// Weight of each auxiliary loss in `L_t + Σ wᵢ L_{a,i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskWeights(Vec<f64>);

impl TaskWeights {
    /// `1/k` for every task.
    pub fn uniform(k: usize) -> Self {
        TaskWeights(vec![1.0 / k.max(1) as f64; k])
    }

    pub fn from_vec(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::usage(format!("task weights must be finite: {w:?}")));
        }
        Ok(TaskWeights(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `w ← clamp(w − lr·hypergrad)`: to `[0, w_max]`, or only to
    /// `[−w_max, w_max]` when `nonnegative` is off.
    pub fn descend(&mut self, hypergrad: &[f64], lr: f64, w_max: f64, nonnegative: bool) -> Result<()> {
        if hypergrad.len() != self.0.len() {
            return Err(Error::shape(
                "task-weights",
                format!("{} hypergradient entries for {} weights", hypergrad.len(), self.0.len()),
            ));
        }
        let lo = if nonnegative { 0.0 } else { -w_max };
        for (w, g) in self.0.iter_mut().zip(hypergrad) {
            *w = (*w - lr * g).clamp(lo, w_max);
        }
        if self.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: "task-weights" });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiLevelConfig {
    /// Neumann steps `M`.
    pub neumann_steps: usize,
    /// Neumann step size `β`.
    pub neumann_lr: f64,
    /// Inner steps between outer updates `r`.
    pub outer_every: usize,
    /// Outer learning rate `η_w`.
    pub outer_lr: f64,
    pub w_max: f64,
    /// Keep task weights nonnegative.
    pub nonnegative_weights: bool,
    /// Abort when `‖p‖` grows past this multiple of its initial norm.
    pub growth_limit: f64,
    /// Estimate the spectral radius of `I − βH` before each series and
    /// refuse to run when it is at least 1.
    pub spectral_check: bool,
}

impl Default for BiLevelConfig {
    fn default() -> Self {
        BiLevelConfig {
            neumann_steps: 3,
            neumann_lr: 0.001,
            outer_every: 10,
            outer_lr: 0.001,
            w_max: 10.0,
            nonnegative_weights: true,
            growth_limit: 1e4,
            spectral_check: false,
        }
    }
}

impl BiLevelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("bilevel: {what}")));
        if !(self.neumann_lr > 0.0 && self.neumann_lr.is_finite()) {
            return bad("neumann_lr must be positive");
        }
        if self.outer_every == 0 {
            return bad("outer_every must be at least 1");
        }
        if !(self.outer_lr > 0.0 && self.outer_lr.is_finite()) {
            return bad("outer_lr must be positive");
        }
        if !(self.w_max > 0.0) {
            return bad("w_max must be positive");
        }
        if !(self.growth_limit > 1.0) {
            return bad("growth_limit must exceed 1");
        }
        Ok(())
    }
}

/// Rows of `∇_w∇_θ L_total`: row i is `∇_θ L_{a,i}(θ)`.
pub fn mixed_partial_rows(theta: &[f64], aux: &[&dyn Objective]) -> Result<Vec<FlatGrad>> {
    aux.iter().map(|f| f.gradient(theta)).collect()
}

/// `q = Σ_{j=0..M} (I − βH)ʲ v` by repeated Hessian-vector products.
///
/// Fails with [`Error::Divergent`] on non-finite iterates or when `‖p_j‖`
/// exceeds `growth_limit·‖v‖`.
pub fn neumann_series(
    total: &dyn Objective,
    theta: &[f64],
    v: &[f64],
    beta: f64,
    steps: usize,
    growth_limit: f64,
) -> Result<FlatGrad> {
    let mut p = FlatGrad::from(v.to_vec());
    let mut q = p.clone();
    let base = p.norm();
    for j in 1..=steps {
        let hp = hvp(total, theta, &p)?;
        p.add_scaled(-beta, &hp);
        let growth = if base > 0.0 { p.norm() / base } else { 0.0 };
        if !growth.is_finite() || growth > growth_limit {
            return Err(Error::Divergent { step: j, growth });
        }
        q.add_scaled(1.0, &p);
    }
    Ok(q)
}

/// Power-iteration estimate of the spectral radius of `I − βH` at `theta`.
pub fn neumann_contraction(total: &dyn Objective, theta: &[f64], beta: f64, iters: usize) -> Result<f64> {
    let n = theta.len();
    if n == 0 {
        return Ok(0.0);
    }
    // fixed, non-symmetric start so the estimate is reproducible
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7).sin()).collect();
    let nv = crate::autodiff::norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut rho = 0.0;
    for _ in 0..iters.max(1) {
        let hv = hvp(total, theta, &v)?;
        let bv: Vec<f64> = v.iter().zip(hv.iter()).map(|(x, h)| x - beta * h).collect();
        rho = crate::autodiff::norm(&bv);
        if !rho.is_finite() {
            return Err(Error::NonFinite { op: "neumann-contraction" });
        }
        if rho == 0.0 {
            break;
        }
        v = bv.into_iter().map(|x| x / rho).collect();
    }
    Ok(rho)
}

/// Errors with [`Error::Divergent`] if `I − βH` is not a contraction.
pub fn check_neumann_step(total: &dyn Objective, theta: &[f64], beta: f64) -> Result<f64> {
    let rho = neumann_contraction(total, theta, beta, 100)?;
    if rho >= 1.0 {
        return Err(Error::Divergent { step: 0, growth: rho });
    }
    Ok(rho)
}

/// Hypergradient of the validation loss with respect to the task weights.
///
/// Component i is `−q · ∇_θ L_{a,i}(θ)` with `q` from [`neumann_series`]
/// started at `∇_θ L_val(θ)`.
pub fn neumann_hypergrad(
    theta: &[f64],
    total: &dyn Objective,
    val: &dyn Objective,
    aux: &[&dyn Objective],
    cfg: &BiLevelConfig,
) -> Result<Vec<f64>> {
    let val_grad = val.gradient(theta)?;
    let rows = mixed_partial_rows(theta, aux)?;
    neumann_hypergrad_from(theta, total, &val_grad, &rows, cfg)
}

/// [`neumann_hypergrad`] with the validation gradient and mixed-partial rows
/// already computed.
pub fn neumann_hypergrad_from(
    theta: &[f64],
    total: &dyn Objective,
    val_grad: &[f64],
    rows: &[FlatGrad],
    cfg: &BiLevelConfig,
) -> Result<Vec<f64>> {
    if val_grad.len() != theta.len() || rows.iter().any(|r| r.len() != theta.len()) {
        return Err(Error::shape("neumann-hypergrad", "gradients must match the parameter length"));
    }
    if cfg.spectral_check {
        check_neumann_step(total, theta, cfg.neumann_lr)?;
    }
    let q = neumann_series(total, theta, val_grad, cfg.neumann_lr, cfg.neumann_steps, cfg.growth_limit)?;
    Ok(rows.iter().map(|r| -q.dot(r)).collect())
}

fn split_data(split: &DatasetSplit) -> Result<TrainData<'_>> {
    if split.train.is_empty() || split.aux_heldout.is_empty() {
        return Err(Error::usage("bi-level training needs nonempty train and held-out splits"));
    }
    Ok(TrainData::from(split))
}

/// Task-weighted training with implicit hypergradient updates of `w`.
pub fn blo_train(model: Model, split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        method: Method::Blo,
        ..cfg.clone()
    };
    train(model, split_data(split)?, &cfg, None)
}

/// RCGrad with rotation scalars updated on held-out data every `r` steps.
pub fn blorc_train(model: Model, split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        method: Method::Blorc,
        ..cfg.clone()
    };
    train(model, split_data(split)?, &cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::quadratic::{quadratic_oracle_hypergrad, QuadraticBilevelProblem, QuadraticForm};
    use nalgebra::{DMatrix, DVector};

    fn scalar_form(a: f64, b: f64) -> QuadraticForm {
        QuadraticForm::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, b)).unwrap()
    }

    #[test]
    fn uniform_weights() {
        assert_eq!(TaskWeights::uniform(4).as_slice(), &[0.25; 4]);
        assert!(TaskWeights::uniform(0).is_empty());
    }

    #[test]
    fn descend_clamps() {
        let mut w = TaskWeights::from_vec(vec![0.5, 9.5]).unwrap();
        w.descend(&[10.0, -10.0], 0.1, 10.0, true).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 10.0]);
        let mut w = TaskWeights::from_vec(vec![0.5]).unwrap();
        w.descend(&[10.0], 0.1, 10.0, false).unwrap();
        assert_eq!(w.as_slice(), &[-0.5]);
    }

    #[test]
    fn half_norm_row_is_theta() {
        let f = QuadraticForm::new(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let rows = mixed_partial_rows(&[1.0, -2.0, 0.5], &[&f]).unwrap();
        assert_eq!(rows[0].as_slice(), &[1.0, -2.0, 0.5]);
        let constant = QuadraticForm::zero(3);
        assert!(mixed_partial_rows(&[1.0, 2.0, 3.0], &[&constant]).unwrap()[0].is_zero());
    }

    #[test]
    fn zero_steps_is_gradient_alignment() {
        // total = ½θ², val = ½(θ−1)², aux = ½θ²  at θ = 3: ∇val = 2, row = 3
        let total = scalar_form(1.0, 0.0);
        let val = scalar_form(1.0, 1.0);
        let aux = scalar_form(1.0, 0.0);
        let cfg = BiLevelConfig {
            neumann_steps: 0,
            ..Default::default()
        };
        let h = neumann_hypergrad(&[3.0], &total, &val, &[&aux], &cfg).unwrap();
        assert_eq!(h, vec![-6.0]);
    }

    #[test]
    fn zero_validation_gradient_gives_zero() {
        let total = scalar_form(2.0, 0.0);
        let val = scalar_form(1.0, 3.0);
        let aux = scalar_form(1.0, 1.0);
        let h = neumann_hypergrad(&[3.0], &total, &val, &[&aux], &BiLevelConfig::default()).unwrap();
        assert_eq!(h, vec![0.0]);
    }

    #[test]
    fn scalar_series_matches_geometric_sum() {
        // H = 2, β = 0.1: q = Σ_{j≤5} 0.8ʲ
        let total = scalar_form(2.0, 0.0);
        let q = neumann_series(&total, &[0.3], &[1.0], 0.1, 5, 1e4).unwrap();
        let expected: f64 = (0..=5).map(|j| 0.8f64.powi(j)).sum();
        assert!((q[0] - expected).abs() < 1e-8, "{} vs {expected}", q[0]);
    }

    #[test]
    fn one_dimensional_oracle_agreement() {
        let p = QuadraticBilevelProblem::new(scalar_form(1.0, 0.0), vec![scalar_form(1.0, 1.0)], scalar_form(1.0, 1.0))
            .unwrap();
        let w = [1.0];
        let theta = p.best_response(&w).unwrap();
        let total = p.inner(&w).unwrap();
        let beta = 0.1 / 2.0;
        let cfg = BiLevelConfig {
            neumann_steps: 400,
            neumann_lr: beta,
            ..Default::default()
        };
        let h = neumann_hypergrad(theta.as_slice(), &total, &p.validation, &[&p.tasks[0]], &cfg).unwrap();
        let oracle = quadratic_oracle_hypergrad(&p, &w).unwrap();
        assert!((beta * h[0] - oracle[0]).abs() < 1e-6, "{} vs {}", beta * h[0], oracle[0]);
    }

    #[test]
    fn oversized_beta_is_flagged() {
        let total = scalar_form(2.0, 0.0);
        assert!(matches!(
            neumann_series(&total, &[0.0], &[1.0], 3.0, 50, 1e4),
            Err(Error::Divergent { .. })
        ));
        assert!(check_neumann_step(&total, &[0.0], 1.01).is_err());
        assert!(check_neumann_step(&total, &[0.0], 0.99).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(BiLevelConfig::default().validate().is_ok());
        let bad = BiLevelConfig {
            outer_every: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
