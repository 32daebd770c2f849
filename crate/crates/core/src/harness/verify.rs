//! Built-in numerical self-checks, run by `gradsurge verify`.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::roc_auc;
use crate::autodiff::gradcheck::{check_op, op_cases};
use crate::autodiff::{norm, FlatGrad, Objective};
use crate::bilevel::{neumann_hypergrad, BiLevelConfig};
use crate::combiners::{
    combine, combine_gradscale, combine_gradsim, combine_pcgrad, combine_rcgrad, pcgrad_project, CombinerKind,
    GradientBundle, RotationScalars,
};
use crate::error::{Error, Result};
use crate::models::{EncoderConfig, EncoderVariant, GraphBatch, Model};
use crate::tasks::graph::Adjacency;
use crate::tasks::losses::{AuxSettings, AuxTask, ModelTape};
use crate::tasks::{gen_dataset, quadratic_oracle_hypergrad, GraphGenParams, QuadraticBilevelProblem};

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    /// Multiplies every tolerance; values below 1 tighten the checks.
    pub tolerance_scale: f64,
    /// Neumann step as a multiple of `1/λ_max` in the hypergradient check.
    pub neumann_beta_factor: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tolerance_scale: 1.0,
            neumann_beta_factor: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub module: &'static str,
    pub property: &'static str,
    pub observed: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub note: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}::{}: observed {:.3e}, tolerance {:.3e}",
            if self.passed { "pass" } else { "FAIL" },
            self.module,
            self.property,
            self.observed,
            self.tolerance
        )?;
        if !self.note.is_empty() {
            write!(f, " ({})", self.note)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

fn result(module: &'static str, property: &'static str, observed: f64, tolerance: f64, note: String) -> CheckResult {
    CheckResult {
        module,
        property,
        observed,
        tolerance,
        passed: observed <= tolerance,
        note,
    }
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Random bundle with entries in `[-1, 1)`.
pub fn random_bundle(rng: &mut impl Rng, dim: usize, k: usize) -> GradientBundle {
    let target = FlatGrad::from(random_vec(rng, dim));
    let aux = (0..k).map(|_| FlatGrad::from(random_vec(rng, dim))).collect();
    GradientBundle::new(target, aux).expect("finite, equal lengths")
}

/// Small model with one head per auxiliary task in [`AuxTask::ALL`] order.
///
/// Every parameter, biases included, is drawn from `[-0.8, 0.8)`. With the
/// usual zero biases a node whose activations all vanish feeds exact zeros
/// into the next relu, which is a kink that finite differences cannot resolve.
pub fn gradcheck_model(rng: &mut impl Rng, variant: EncoderVariant) -> Result<Model> {
    let cfg = EncoderConfig {
        variant,
        layers: 2,
        hidden: 4,
    };
    let heads: Vec<_> = AuxTask::ALL.iter().map(|t| t.head_spec(cfg.hidden)).collect();
    let model = Model::new(cfg, &heads, rng)?;
    let flat: Vec<f64> = (0..flat_params(&model).len()).map(|_| rng.gen_range(-0.8..0.8)).collect();
    Ok(with_params(&model, &flat))
}

fn flat_params(model: &Model) -> Vec<f64> {
    let mut out = model.encoder.params.clone();
    out.extend(&model.target_head.params);
    for h in &model.aux_heads {
        out.extend(&h.params);
    }
    out
}

fn with_params(model: &Model, flat: &[f64]) -> Model {
    let mut m = model.clone();
    let mut rest = flat;
    let mut take = |dst: &mut Vec<f64>| {
        let n = dst.len();
        dst.copy_from_slice(&rest[..n]);
        rest = &rest[n..];
    };
    take(&mut m.encoder.params);
    take(&mut m.target_head.params);
    for h in &mut m.aux_heads {
        take(&mut h.params);
    }
    m
}

/// Loss of `task` (`None` for the target) and its gradient over every
/// parameter of the model, in [`flat_params`] order.
fn model_loss(model: &Model, batch: &GraphBatch, task: Option<AuxTask>, seed: u64) -> Result<(f64, Vec<f64>)> {
    let mut mt = ModelTape::new(model)?;
    let enc = mt.encode(batch)?;
    let loss = match task {
        None => mt.target_loss(batch, &enc)?,
        Some(t) => {
            let slot = AuxTask::ALL.iter().position(|&x| x == t).expect("every task has a slot");
            mt.aux_loss(t, slot, batch, &enc, &AuxSettings::default(), seed)?
        }
    };
    let value = mt.value(loss)?;
    let g = mt.split_grad(loss)?;
    let mut flat = g.encoder.into_vec();
    flat.extend(g.target_head.iter());
    for h in &g.aux_heads {
        flat.extend(h.iter());
    }
    Ok((value, flat))
}

/// Largest relative error between the backward pass of a full model loss
/// and central differences along random directions, on one random instance.
///
/// Each direction mixes the normalized analytic gradient with an
/// independent random unit vector, so the directional derivative is well
/// away from zero while every coordinate is exercised. The adversarial task
/// reads the target head as a constant, so its directions leave the target
/// head fixed.
pub fn model_loss_gradcheck(rng: &mut impl Rng, task: Option<AuxTask>, directions: usize, h: f64) -> Result<f64> {
    let variant = if rng.gen_bool(0.5) {
        EncoderVariant::MessagePassing
    } else {
        EncoderVariant::Mlp
    };
    let model = gradcheck_model(rng, variant)?;
    let params = GraphGenParams {
        n_graphs: 3,
        min_nodes: 4,
        max_nodes: 8,
        edge_prob: 0.35,
    };
    let graphs = gen_dataset(rng.gen(), &params)?;
    let batch = GraphBatch::new(&graphs)?;
    let seed: u64 = rng.gen();
    let theta = flat_params(&model);
    let (_, grad) = model_loss(&model, &batch, task, seed)?;
    let gnorm = norm(&grad);
    let start = model.encoder.params.len();
    let frozen = start..start + model.target_head.params.len();
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let mut z: Vec<f64> = (0..theta.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if task == Some(AuxTask::Flip) {
            z[frozen.clone()].iter_mut().for_each(|x| *x = 0.0);
        }
        let znorm = norm(&z);
        let mut u: Vec<f64> = z.iter().map(|x| x / znorm).collect();
        if gnorm > 0.0 {
            u.iter_mut().zip(&grad).for_each(|(ui, gi)| *ui += gi / gnorm);
        }
        let unorm = norm(&u);
        u.iter_mut().for_each(|x| *x /= unorm);
        let analytic: f64 = grad.iter().zip(&u).map(|(g, d)| g * d).sum();
        let at = |s: f64| -> Result<f64> {
            let shifted: Vec<f64> = theta.iter().zip(&u).map(|(t, d)| t + s * d).collect();
            Ok(model_loss(&with_params(&model, &shifted), &batch, task, seed)?.0)
        };
        let numeric = (at(h)? - at(-h)?) / (2.0 * h);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Brute-force triangle and chordless-4-cycle detection over node subsets.
pub fn brute_force_motifs(n: usize, edges: &[[usize; 2]]) -> [bool; 2] {
    let adj = Adjacency::new(n, edges);
    let e = |a: usize, b: usize| adj.has_edge(a, b);
    let mut tri = false;
    let mut sq = false;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                tri |= e(a, b) && e(b, c) && e(a, c);
                for d in c + 1..n {
                    // the three ways to arrange four nodes on a cycle
                    for [p, q, r, s] in [[a, b, c, d], [a, b, d, c], [a, c, b, d]] {
                        let cycle = e(p, q) && e(q, r) && e(r, s) && e(s, p);
                        let chords = e(p, r) || e(q, s);
                        sq |= cycle && !chords;
                    }
                }
            }
        }
    }
    [tri, sq]
}

/// Pairwise ROC-AUC: wins plus half the ties over all positive-negative pairs.
pub fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn relative_vec_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs every check and collects the results; errors only on internal failures.
pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let s = opts.tolerance_scale;
    if !(s > 0.0) {
        return Err(Error::Config(format!("tolerance scale must be positive, got {s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    for case in op_cases() {
        for _ in 0..5 {
            worst = worst.max(check_op(&case, &mut rng, 1e-6)?);
        }
    }
    checks.push(result("autodiff", "op gradients vs central differences", worst, 1e-4 * s, String::new()));

    let mut worst: f64 = 0.0;
    for task in std::iter::once(None).chain(AuxTask::ALL.iter().map(|&t| Some(t))) {
        for _ in 0..4 {
            worst = worst.max(model_loss_gradcheck(&mut rng, task, 2, 1e-6)?);
        }
    }
    checks.push(result("models", "loss gradients vs central differences", worst, 1e-4 * s, String::new()));

    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let dim = [2, 10, 1000][i % 3];
        let ga = random_vec(&mut rng, dim);
        let gt = random_vec(&mut rng, dim);
        let p = pcgrad_project(&ga, &gt)?;
        let scale = norm(&ga) * norm(&gt);
        worst = worst.max(p.dot(&gt).abs() / scale);
    }
    checks.push(result("combiners", "projection orthogonal to target", worst, 1e-10 * s, "|dot| / (|g_a| |g_t|)".into()));

    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let b = random_bundle(&mut rng, 2 + i % 9, 1 + i % 4);
        let rc = combine_rcgrad(&b, &RotationScalars::initial(b.num_aux()))?;
        let mut expected = b.target.clone();
        for (j, g) in b.aux.iter().enumerate() {
            let single = GradientBundle::new(b.target.clone(), vec![g.clone()])?;
            let part = if b.conflicts(j) {
                combine_pcgrad(&single)?
            } else {
                combine_gradscale(&single)
            };
            expected.add_scaled(1.0, &part);
            expected.add_scaled(-1.0, &b.target);
        }
        worst = worst.max(max_abs_diff(&rc, &expected));
        let k0 = GradientBundle::new(b.target.clone(), Vec::new())?;
        for kind in CombinerKind::ALL {
            worst = worst.max(max_abs_diff(&combine(kind, &k0, None, false)?, &b.target));
        }
    }
    checks.push(result("combiners", "RCGrad reduction identities", worst, 1e-12 * s, String::new()));

    let mut violations = 0.0;
    for i in 0..1000 {
        let b = random_bundle(&mut rng, 2 + i % 9, 1 + i % 4);
        let out = combine_gradsim(&b);
        let tt = b.target.dot(&b.target);
        if b.target.dot(&out) < tt - 1e-12 * tt.max(1.0) {
            violations += 1.0;
        }
    }
    checks.push(result("combiners", "GradSim keeps g_t . output >= |g_t|^2", violations, 0.0, "violations".into()));

    let factor = opts.neumann_beta_factor;
    let mut worst: f64 = 0.0;
    let mut note = String::new();
    for i in 0..10 {
        let dim = 2 + i * 2;
        let p = QuadraticBilevelProblem::random(&mut rng, dim, 3, (1.0, 2.0));
        let w = [0.3, 0.5, 0.2];
        let theta = p.best_response(&w)?;
        let total = p.inner(&w)?;
        let beta = factor / p.lambda_max(&w)?;
        let cfg = BiLevelConfig {
            neumann_steps: 200,
            neumann_lr: beta,
            spectral_check: true,
            ..Default::default()
        };
        let aux: Vec<&dyn Objective> = p.tasks.iter().map(|t| t as &dyn Objective).collect();
        match neumann_hypergrad(theta.as_slice(), &total, &p.validation, &aux, &cfg) {
            Ok(h) => {
                let scaled: Vec<f64> = h.iter().map(|x| beta * x).collect();
                let oracle = quadratic_oracle_hypergrad(&p, &w)?;
                worst = worst.max(relative_vec_error(&scaled, &oracle));
            }
            Err(e @ Error::Divergent { .. }) => {
                worst = f64::INFINITY;
                note = format!("divergent: {e}");
                break;
            }
            Err(e) => return Err(e),
        }
    }
    checks.push(result("bilevel", "Neumann hypergradient vs closed form", worst, 1e-4 * s, note));

    let mut missed = 0.0;
    for i in 0..10 {
        let p = QuadraticBilevelProblem::random(&mut rng, 3 + i, 2, (1.0, 4.0));
        let w = [0.5, 0.5];
        let theta = p.best_response(&w)?;
        let total = p.inner(&w)?;
        let cfg = BiLevelConfig {
            neumann_steps: 200,
            neumann_lr: 2.5 / p.lambda_max(&w)?,
            spectral_check: true,
            ..Default::default()
        };
        let aux: Vec<&dyn Objective> = p.tasks.iter().map(|t| t as &dyn Objective).collect();
        if !matches!(
            neumann_hypergrad(theta.as_slice(), &total, &p.validation, &aux, &cfg),
            Err(Error::Divergent { .. })
        ) {
            missed += 1.0;
        }
    }
    checks.push(result("bilevel", "oversized beta reported as divergent", missed, 0.0, "missed".into()));

    let mut mismatches = 0.0;
    for _ in 0..300 {
        let n = rng.gen_range(1..=8);
        let max_edges = n * (n - 1) / 2;
        let m = rng.gen_range(0..=max_edges);
        let all: Vec<[usize; 2]> = (0..n).flat_map(|u| (u + 1..n).map(move |v| [u, v])).collect();
        let edges: Vec<[usize; 2]> = sample(&mut rng, max_edges, m).into_iter().map(|i| all[i]).collect();
        let adj = Adjacency::new(n, &edges);
        if [adj.has_triangle(), adj.has_chordless_square()] != brute_force_motifs(n, &edges) {
            mismatches += 1.0;
        }
    }
    checks.push(result("tasks", "motif detection vs brute force", mismatches, 0.0, "mismatches".into()));

    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let n = rng.gen_range(2..=30);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..6) as f64) / 5.0).collect();
        worst = worst.max((roc_auc(&scores, &labels)? - brute_force_auc(&scores, &labels)).abs());
    }
    checks.push(result("harness", "ROC-AUC vs pairwise count", worst, 1e-12 * s, String::new()));

    Ok(VerifyReport { checks })
}
