//! Analytically solvable bi-level problem used to check hypergradients.
//!
//! Inner loss `½θᵀAθ − bᵀθ + Σ wᵢ(½θᵀAᵢθ − bᵢᵀθ)`, outer loss `½θᵀA_vθ − b_vᵀθ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::autodiff::{FlatGrad, Objective};
use crate::error::{Error, Result};

/// `½θᵀAθ − bᵀθ`
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QuadraticForm {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(Error::shape(
                "quadratic",
                format!("A is {}x{}, b has {}", a.nrows(), a.ncols(), b.len()),
            ));
        }
        Ok(QuadraticForm { a, b })
    }

    pub fn zero(dim: usize) -> Self {
        QuadraticForm {
            a: DMatrix::zeros(dim, dim),
            b: DVector::zeros(dim),
        }
    }
}

impl Objective for QuadraticForm {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        let t = DVector::from_column_slice(theta);
        Ok(0.5 * t.dot(&(&self.a * &t)) - self.b.dot(&t))
    }

    fn gradient(&self, theta: &[f64]) -> Result<FlatGrad> {
        let t = DVector::from_column_slice(theta);
        Ok(FlatGrad::from((&self.a * &t - &self.b).as_slice().to_vec()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticBilevelProblem {
    pub target: QuadraticForm,
    pub tasks: Vec<QuadraticForm>,
    pub validation: QuadraticForm,
}

impl QuadraticBilevelProblem {
    pub fn new(target: QuadraticForm, tasks: Vec<QuadraticForm>, validation: QuadraticForm) -> Result<Self> {
        let d = target.dim();
        if tasks.iter().any(|t| t.dim() != d) || validation.dim() != d {
            return Err(Error::shape("quadratic-bilevel", "all forms must share one dimension"));
        }
        Ok(QuadraticBilevelProblem {
            target,
            tasks,
            validation,
        })
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Random instance whose SPD matrices all have spectra in `eig_range`.
    pub fn random(rng: &mut impl Rng, dim: usize, k: usize, eig_range: (f64, f64)) -> Self {
        let form = |rng: &mut dyn rand::RngCore| QuadraticForm {
            a: random_spd(rng, dim, eig_range),
            b: DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0)),
        };
        let target = form(rng);
        let tasks = (0..k).map(|_| form(rng)).collect();
        let validation = form(rng);
        QuadraticBilevelProblem {
            target,
            tasks,
            validation,
        }
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.tasks.len() {
            return Err(Error::usage(format!("{} weights for {} tasks", w.len(), self.tasks.len())));
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::usage(format!("weights must be finite and nonnegative: {w:?}")));
        }
        Ok(())
    }

    /// The weighted inner loss as a single quadratic form.
    pub fn inner(&self, w: &[f64]) -> Result<QuadraticForm> {
        self.check_weights(w)?;
        let mut a = self.target.a.clone();
        let mut b = self.target.b.clone();
        for (wi, t) in w.iter().zip(&self.tasks) {
            a += &t.a * *wi;
            b += &t.b * *wi;
        }
        Ok(QuadraticForm { a, b })
    }

    /// `θ*(w)`, refusing near-singular inner Hessians.
    pub fn best_response(&self, w: &[f64]) -> Result<DVector<f64>> {
        let inner = self.inner(w)?;
        let eig = inner.a.clone().symmetric_eigen();
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x.abs())));
        if lo <= 0.0 || hi / lo > 1e10 {
            return Err(Error::usage(format!(
                "inner Hessian is near-singular (eigenvalues in [{lo:.3e}, {hi:.3e}])"
            )));
        }
        let chol = inner
            .a
            .cholesky()
            .ok_or_else(|| Error::usage("inner Hessian is not positive definite"))?;
        Ok(chol.solve(&inner.b))
    }

    /// Outer loss at the best response.
    pub fn outer_value(&self, w: &[f64]) -> Result<f64> {
        let theta = self.best_response(w)?;
        self.validation.value(theta.as_slice())
    }

    /// Largest eigenvalue of the inner Hessian.
    pub fn lambda_max(&self, w: &[f64]) -> Result<f64> {
        let inner = self.inner(w)?;
        Ok(inner
            .a
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Closed-form `∇_w L_val(θ*(w))`:
/// component i is `(A_vθ* − b_v)ᵀ H⁻¹ (bᵢ − Aᵢθ*)` with `H = A + Σ wᵢAᵢ`.
pub fn quadratic_oracle_hypergrad(problem: &QuadraticBilevelProblem, w: &[f64]) -> Result<Vec<f64>> {
    let theta = problem.best_response(w)?;
    let inner = problem.inner(w)?;
    let chol = inner
        .a
        .cholesky()
        .ok_or_else(|| Error::usage("inner Hessian is not positive definite"))?;
    let val_grad = &problem.validation.a * &theta - &problem.validation.b;
    let adjoint = chol.solve(&val_grad);
    Ok(problem
        .tasks
        .iter()
        .map(|t| adjoint.dot(&(&t.b - &t.a * &theta)))
        .collect())
}

fn random_spd(rng: &mut dyn rand::RngCore, dim: usize, (lo, hi): (f64, f64)) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    let q = g.qr().q();
    let diag = DVector::from_fn(dim, |_, _| rng.gen_range(lo..=hi));
    let a = &q * DMatrix::from_diagonal(&diag) * q.transpose();
    (&a + a.transpose()) * 0.5
}
