//! Acceptance suite: one line per criterion, non-zero exit on any failure.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gradsurge::autodiff::gradcheck::{check_op, op_cases};
use gradsurge::autodiff::{norm, relative_error, Objective};
use gradsurge::bilevel::{neumann_hypergrad, neumann_series, BiLevelConfig};
use gradsurge::combiners::{
    combine, combine_gradscale, combine_gradsim, combine_pcgrad, combine_rcgrad, kappa_partials, pcgrad_project,
    CombinerKind, GradientBundle, RotationScalars,
};
use gradsurge::harness::config::ExperimentConfig;
use gradsurge::harness::experiment::{generate_data, init_model};
use gradsurge::harness::metrics::roc_auc;
use gradsurge::harness::sweep::{sweep, write_sweep, SweepResult};
use gradsurge::harness::verify::{brute_force_auc, model_loss_gradcheck, random_bundle};
use gradsurge::models::{GraphBatch, Model};
use gradsurge::tasks::{quadratic_oracle_hypergrad, split_dataset, AuxTask, QuadraticBilevelProblem};
use gradsurge::training::{train, EncoderLoss, Method, StepContext, StepObserver, TrainData};
use gradsurge::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NEGATIVE_SUITE: &str = include_str!("../../../configs/negative_transfer.json");
const POSITIVE_SUITE: &str = include_str!("../../../configs/positive_transfer.json");

type Outcome = gradsurge::Result<(bool, String)>;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_op: (f64, &str) = (0.0, "");
    for case in op_cases() {
        for _ in 0..100 {
            let err = check_op(&case, &mut rng, 1e-6)?;
            if err > worst_op.0 {
                worst_op = (err, case.name);
            }
        }
    }
    let mut worst_loss: (f64, &str) = (0.0, "");
    let tasks = std::iter::once(None).chain(AuxTask::ALL.iter().map(|&t| Some(t)));
    for task in tasks {
        let name = task.map_or("target", AuxTask::name);
        for _ in 0..100 {
            let err = model_loss_gradcheck(&mut rng, task, 1, 1e-6)?;
            if err > worst_loss.0 {
                worst_loss = (err, name);
            }
        }
    }
    let ok = worst_op.0 < 1e-4 && worst_loss.0 < 1e-4;
    Ok((
        ok,
        format!(
            "{} ops, worst {:.2e} ({}); 6 losses, worst {:.2e} ({})",
            op_cases().len(),
            worst_op.0,
            worst_op.1,
            worst_loss.0,
            worst_loss.1
        ),
    ))
}

fn projection_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let dim = [2, 10, 1000][i % 3];
        let ga = random_vec(&mut rng, dim);
        let gt = random_vec(&mut rng, dim);
        let p = pcgrad_project(&ga, &gt)?;
        worst = worst.max(p.dot(&gt).abs() / (norm(&ga) * norm(&gt)));
    }
    Ok((worst <= 1e-10, format!("max |dot| / (|g_a| |g_t|) = {worst:.2e}")))
}

fn reduction_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    let mut k0_exact = true;
    let mut conflicts = 0usize;
    for i in 0..10_000 {
        let b = random_bundle(&mut rng, 2 + i % 19, 1 + i % 5);
        let rc = combine_rcgrad(&b, &RotationScalars::initial(b.num_aux()))?;
        let mut expected = b.target.clone();
        for (j, g) in b.aux.iter().enumerate() {
            let single = GradientBundle::new(b.target.clone(), vec![g.clone()])?;
            let branch = if b.conflicts(j) {
                conflicts += 1;
                combine_pcgrad(&single)?
            } else {
                combine_gradscale(&single)
            };
            expected.add_scaled(1.0, &branch);
            expected.add_scaled(-1.0, &b.target);
        }
        worst = rc.iter().zip(expected.iter()).map(|(a, e)| (a - e).abs()).fold(worst, f64::max);

        let empty = GradientBundle::new(b.target.clone(), Vec::new())?;
        for kind in CombinerKind::ALL {
            for kappa in [None, Some(RotationScalars::initial(0))] {
                k0_exact &= combine(kind, &empty, kappa.as_ref(), false)?.as_slice() == b.target.as_slice();
            }
        }
    }
    Ok((
        worst <= 1e-12 && k0_exact,
        format!("max deviation {worst:.2e} over {conflicts} conflicting branches; k=0 exact: {k0_exact}"),
    ))
}

fn gradsim_gating() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut violations = 0usize;
    let mut gated = 0usize;
    for i in 0..10_000 {
        let b = random_bundle(&mut rng, 2 + i % 19, 1 + i % 5);
        let full = combine_gradsim(&b);
        let mut assembled = b.target.clone();
        for g in &b.aux {
            let single = GradientBundle::new(b.target.clone(), vec![g.clone()])?;
            let out = combine_gradsim(&single);
            let contribution: Vec<f64> = out.iter().zip(b.target.iter()).map(|(o, t)| o - t).collect();
            if g.dot(&b.target) < 0.0 {
                gated += 1;
                if out.as_slice() != b.target.as_slice() {
                    violations += 1;
                }
            } else if b.target.dot(&contribution) < 0.0 {
                violations += 1;
            }
            assembled.add_scaled(1.0, &contribution);
        }
        let scale = 1.0 + norm(&full);
        if full.iter().zip(assembled.iter()).any(|(a, e)| (a - e).abs() > 1e-12 * scale) {
            violations += 1;
        }
    }
    Ok((violations == 0, format!("{gated} gated terms, {violations} violations")))
}

fn hypergradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    let mut hyper_monotone = 0usize;
    for i in 0..50 {
        let dim = 2 + i % 19;
        let k = 1 + i % 4;
        let p = QuadraticBilevelProblem::random(&mut rng, dim, k, (1.0, 2.0));
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let theta = p.best_response(&w)?;
        let total = p.inner(&w)?;
        let beta = 0.1 / p.lambda_max(&w)?;
        let aux: Vec<&dyn Objective> = p.tasks.iter().map(|t| t as &dyn Objective).collect();
        let oracle = quadratic_oracle_hypergrad(&p, &w)?;

        let val_grad = p.validation.gradient(theta.as_slice())?;
        let exact_q = total
            .a
            .clone()
            .cholesky()
            .expect("inner Hessian is SPD")
            .solve(&nalgebra::DVector::from_column_slice(&val_grad));
        let mut prev_q = f64::INFINITY;
        let mut prev_h = f64::INFINITY;
        let mut this_monotone = true;
        for m in [1, 5, 20, 100, 200] {
            let cfg = BiLevelConfig {
                neumann_steps: m,
                neumann_lr: beta,
                ..Default::default()
            };
            let q = neumann_series(&total, theta.as_slice(), &val_grad, beta, m, cfg.growth_limit)?;
            let q_err = q.iter().zip(exact_q.iter()).map(|(a, b)| (beta * a - b).powi(2)).sum::<f64>().sqrt();
            monotone &= q_err <= prev_q + 1e-12;
            prev_q = q_err;

            let h = neumann_hypergrad(theta.as_slice(), &total, &p.validation, &aux, &cfg)?;
            let scaled: Vec<f64> = h.iter().map(|x| beta * x).collect();
            let diff: Vec<f64> = scaled.iter().zip(&oracle).map(|(a, b)| a - b).collect();
            let h_err = norm(&diff);
            this_monotone &= h_err <= prev_h + 1e-12;
            prev_h = h_err;
            if m == 200 {
                worst = worst.max(h_err / norm(&oracle).max(1e-12));
            }
        }
        hyper_monotone += this_monotone as usize;
    }
    Ok((
        worst < 1e-4 && monotone,
        format!(
            "worst relative error at M=200 {worst:.2e}; series error non-increasing: {monotone}; \
             hypergradient error non-increasing in {hyper_monotone}/50"
        ),
    ))
}

fn divergence_detection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut missed = 0usize;
    let mut total_cases = 0usize;
    for i in 0..20 {
        let dim = 2 + i % 19;
        let p = QuadraticBilevelProblem::random(&mut rng, dim, 2, (0.5, 4.0));
        let w = [0.5, 0.5];
        let theta = p.best_response(&w)?;
        let total = p.inner(&w)?;
        let lmax = p.lambda_max(&w)?;
        let aux: Vec<&dyn Objective> = p.tasks.iter().map(|t| t as &dyn Objective).collect();
        for factor in [2.05, 2.5, 3.0, 5.0, 10.0] {
            for steps in [3, 200] {
                let cfg = BiLevelConfig {
                    neumann_steps: steps,
                    neumann_lr: factor / lmax,
                    spectral_check: true,
                    ..Default::default()
                };
                total_cases += 1;
                if !matches!(
                    neumann_hypergrad(theta.as_slice(), &total, &p.validation, &aux, &cfg),
                    Err(Error::Divergent { .. })
                ) {
                    missed += 1;
                }
            }
        }
    }
    Ok((missed == 0, format!("{total_cases} oversized steps, {missed} returned a value")))
}

struct Checkpoint {
    model: Model,
    bundle: GradientBundle,
    kappa: RotationScalars,
    heldout: GraphBatch,
    lr: f64,
}

#[derive(Default)]
struct Collector {
    out: Vec<Checkpoint>,
}

impl StepObserver for Collector {
    fn on_step(&mut self, ctx: &StepContext<'_>) -> gradsurge::Result<()> {
        let Some(kappa) = ctx.kappa else { return Ok(()) };
        if !ctx.bundle.any_conflict() {
            return Ok(());
        }
        self.out.push(Checkpoint {
            model: ctx.model.clone(),
            bundle: ctx.bundle.clone(),
            kappa: kappa.clone(),
            heldout: ctx.heldout.clone(),
            lr: ctx.lr,
        });
        Ok(())
    }
}

fn kappa_lookahead() -> Outcome {
    let mut cfg = ExperimentConfig::from_json(NEGATIVE_SUITE)?;
    cfg.method = Method::Blorc;
    cfg.optim.epochs = 15;
    cfg.kappa.lr = 1.0;
    let graphs = generate_data(&cfg)?;
    let split = split_dataset(&graphs, cfg.seed, &cfg.data.split)?;
    let mut collector = Collector::default();
    train(init_model(&cfg)?, TrainData::from(&split), &cfg.train_config(), Some(&mut collector))?;
    let observed = collector.out.len();
    if observed < 20 {
        return Ok((false, format!("only {observed} conflicting steps observed")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let picked = rand::seq::index::sample(&mut rng, observed, 20);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut nonzero = 0usize;
    for cp in picked.iter().map(|i| &collector.out[i]) {
        let theta = cp.model.encoder.params.clone();
        let loss = EncoderLoss::target(&cp.model, &cp.heldout);
        let partials = kappa_partials(&theta, &cp.bundle, &cp.kappa, cp.lr, &loss, false)?;
        let lookahead_loss = |kappa: &RotationScalars| -> gradsurge::Result<f64> {
            let g = combine_rcgrad(&cp.bundle, kappa)?;
            let shifted: Vec<f64> = theta.iter().zip(g.iter()).map(|(t, gi)| t - cp.lr * gi).collect();
            loss.value(&shifted)
        };
        for (j, &analytic) in partials.iter().enumerate() {
            let shift = |d: f64| {
                let mut k = cp.kappa.clone();
                if j == 0 {
                    k.kappa_t += d;
                } else {
                    k.kappa_aux[j - 1] += d;
                }
                k
            };
            let numeric = (lookahead_loss(&shift(h))? - lookahead_loss(&shift(-h))?) / (2.0 * h);
            if analytic != 0.0 {
                nonzero += 1;
            }
            worst = worst.max(relative_error(analytic, numeric, 1e-8));
        }
    }
    Ok((
        worst < 1e-4,
        format!(
            "20 of {observed} conflicting steps, {nonzero} nonzero partials, worst relative error {worst:.2e}"
        ),
    ))
}

fn mean_auc(result: &SweepResult, method: Method) -> f64 {
    result.summary_for(method).map_or(f64::NAN, |s| s.mean_test_auc)
}

fn format_means(result: &SweepResult) -> String {
    result
        .summary
        .iter()
        .map(|s| format!("{} {:.3}", s.method.name(), s.mean_test_auc))
        .collect::<Vec<_>>()
        .join(", ")
}

fn negative_transfer() -> Outcome {
    let cfg = ExperimentConfig::from_json(NEGATIVE_SUITE)?;
    let flip = cfg
        .aux
        .iter()
        .position(|&t| t == AuxTask::Flip)
        .ok_or_else(|| Error::Usage("negative suite needs the flip task".into()))?;
    let k = cfg.aux.len() as f64;
    let result = sweep(&cfg)?;
    let mtl = mean_auc(&result, Method::Mtl);
    let mut ok = mtl < mean_auc(&result, Method::Ft);
    for m in [Method::GradSim, Method::GradScale, Method::PCGrad, Method::RCGrad, Method::Blo, Method::Blorc] {
        ok &= mean_auc(&result, m) >= mtl;
    }
    let decreased = result
        .reports_for(Method::Blo)
        .filter(|r| r.final_weights.as_ref().is_some_and(|w| w.as_slice()[flip] < 1.0 / k))
        .count();
    let seeds = result.reports_for(Method::Blo).count();
    ok &= decreased * 10 >= 8 * seeds;
    Ok((
        ok,
        format!("{}; BLO flip weight below 1/k in {decreased}/{seeds} seeds", format_means(&result)),
    ))
}

fn positive_transfer() -> Outcome {
    let cfg = ExperimentConfig::from_json(POSITIVE_SUITE)?;
    let result = sweep(&cfg)?;
    let ft = mean_auc(&result, Method::Ft);
    let best = mean_auc(&result, Method::RCGrad).max(mean_auc(&result, Method::Blorc));
    Ok((best >= ft + 0.01, format!("{}; best gain {:+.3}", format_means(&result), best - ft)))
}

fn metric_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = rng.gen_range(2..=30);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        // coarse grid on half the instances so that ties are common
        let scores: Vec<f64> = if i % 2 == 0 {
            (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect()
        } else {
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        worst = worst.max((roc_auc(&scores, &labels)? - brute_force_auc(&scores, &labels)).abs());
    }
    let example = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true])?;
    Ok((
        worst <= 1e-12 && example == 0.75,
        format!("max deviation {worst:.2e}; example {example}"),
    ))
}

fn strip_last_column(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism() -> Outcome {
    let mut cfg = ExperimentConfig::from_json(NEGATIVE_SUITE)?;
    cfg.sweep.n_seeds = 2;
    cfg.optim.epochs = 5;
    let mut outputs = Vec::new();
    for threads in [1, 2] {
        let dir = tempfile::tempdir()?;
        cfg.out_dir = dir.path().to_path_buf();
        cfg.threads = threads;
        write_sweep(&sweep(&cfg)?, dir.path())?;
        let summary = fs::read(dir.path().join("sweep_summary.csv"))?;
        let runs = fs::read_to_string(dir.path().join("sweep_runs.csv"))?;
        outputs.push((summary, strip_last_column(&runs)));
    }
    let same_summary = outputs[0].0 == outputs[1].0;
    let same_runs = outputs[0].1 == outputs[1].1;
    Ok((
        same_summary && same_runs,
        format!(
            "sweep_summary.csv identical: {same_summary}; sweep_runs.csv identical without wall clock: {same_runs}"
        ),
    ))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "gradient correctness", budget: secs(60), run: gradient_correctness },
        Criterion { id: 2, name: "projection orthogonality", budget: secs(10), run: projection_property },
        Criterion { id: 3, name: "reduction identities", budget: secs(10), run: reduction_identities },
        Criterion { id: 4, name: "GradSim gating", budget: secs(10), run: gradsim_gating },
        Criterion { id: 5, name: "hypergradient oracle", budget: secs(60), run: hypergradient_oracle },
        Criterion { id: 6, name: "Neumann divergence detection", budget: None, run: divergence_detection },
        Criterion { id: 7, name: "kappa lookahead partials", budget: secs(60), run: kappa_lookahead },
        Criterion { id: 8, name: "negative transfer ordering", budget: secs(600), run: negative_transfer },
        Criterion { id: 9, name: "positive transfer gain", budget: secs(600), run: positive_transfer },
        Criterion { id: 10, name: "ROC-AUC correctness", budget: None, run: metric_correctness },
        Criterion { id: 11, name: "sweep determinism", budget: None, run: determinism },
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let in_budget = c.budget.is_none_or(|b| elapsed <= b);
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && in_budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget = c.budget.map_or(String::new(), |b| format!(" / {}s budget", b.as_secs()));
        println!(
            "criterion {:>2} {:<30} {}  [{:.1}s{budget}] {detail}",
            c.id,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        failed += usize::from(!ok);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
