//! The training loop shared by every adaptation method.
//!
//! Each inner step encodes one target batch (and one auxiliary batch when
//! the target pool is restricted), takes per-task gradients on the shared
//! encoder, merges them with the method's combiner and applies the update.
//! Task heads are updated by their own task gradient. Outer variables
//! (rotation scalars, task weights) are updated before the inner step, at
//! the same parameters the gradient bundle was taken at.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{FlatGrad, Objective, Var};
use crate::bilevel::{neumann_hypergrad_from, BiLevelConfig, TaskWeights};
use crate::combiners::{combine, combine_mtl, update_kappa, CombinerKind, GradientBundle, KappaConfig, RotationScalars};
use crate::error::{Error, Result};
use crate::harness::metrics::roc_auc;
use crate::models::{GraphBatch, Model};
use crate::tasks::losses::{predict, AuxSettings, AuxTask, Encoded, ModelTape};
use crate::tasks::{DatasetSplit, SyntheticGraph};

/// Every adaptation method: fine-tuning, the single-level combiners and the
/// two bi-level schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "FT")]
    Ft,
    #[serde(rename = "MTL")]
    Mtl,
    GradSim,
    GradScale,
    PCGrad,
    RCGrad,
    #[serde(rename = "BLO")]
    Blo,
    #[serde(rename = "BLORC")]
    Blorc,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ft,
        Method::Mtl,
        Method::GradSim,
        Method::GradScale,
        Method::PCGrad,
        Method::RCGrad,
        Method::Blo,
        Method::Blorc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Blo => "BLO",
            Method::Blorc => "BLORC",
            other => other.combiner().map(CombinerKind::name).unwrap_or("?"),
        }
    }

    /// The single-level combiner, if this method is one.
    pub fn combiner(self) -> Option<CombinerKind> {
        match self {
            Method::Ft => Some(CombinerKind::Ft),
            Method::Mtl => Some(CombinerKind::Mtl),
            Method::GradSim => Some(CombinerKind::GradSim),
            Method::GradScale => Some(CombinerKind::GradScale),
            Method::PCGrad => Some(CombinerKind::PCGrad),
            Method::RCGrad => Some(CombinerKind::RCGrad),
            Method::Blo | Method::Blorc => None,
        }
    }

    pub fn uses_aux(self) -> bool {
        self != Method::Ft
    }

    fn learns_kappa(self) -> bool {
        matches!(self, Method::RCGrad | Method::Blorc)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub optimizer: OptimizerKind,
    /// Inner step size `α`.
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            optimizer: OptimizerKind::Sgd,
            lr: 0.001,
            batch_size: 32,
            epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("optim.lr must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("optim.batch_size must be at least 2".into()));
        }
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub aux: Vec<AuxTask>,
    pub optim: OptimConfig,
    pub bilevel: BiLevelConfig,
    pub kappa: KappaConfig,
    pub aux_settings: AuxSettings,
    /// Let GradScale / RCGrad also shrink auxiliary gradients larger than `g_t`.
    pub symmetric_scale: bool,
    /// Train the target loss on only the first `n` training graphs; the
    /// auxiliary losses still see the whole training pool.
    pub target_train_limit: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Ft,
            aux: Vec::new(),
            optim: OptimConfig::default(),
            bilevel: BiLevelConfig::default(),
            kappa: KappaConfig::default(),
            aux_settings: AuxSettings::default(),
            symmetric_scale: false,
            target_train_limit: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a [SyntheticGraph],
    pub aux_heldout: &'a [SyntheticGraph],
    pub valid: &'a [SyntheticGraph],
    pub test: &'a [SyntheticGraph],
}

impl<'a> From<&'a DatasetSplit> for TrainData<'a> {
    fn from(s: &'a DatasetSplit) -> Self {
        TrainData {
            train: &s.train,
            aux_heldout: &s.aux_heldout,
            valid: &s.valid,
            test: &s.test,
        }
    }
}

/// Losses are ordered target first, then auxiliary tasks in config order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    pub valid_auc: f64,
    pub test_auc: f64,
}

/// One row of a `w` or `κ` trace. For `κ`, component 0 is `κ_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub component: usize,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the best validation AUC (earliest on ties).
    pub best: usize,
    pub steps: usize,
    pub w_trace: Vec<TraceRow>,
    pub kappa_trace: Vec<TraceRow>,
    pub final_weights: Option<TaskWeights>,
    pub final_kappa: Option<RotationScalars>,
}

impl TrainOutcome {
    pub fn best_epoch(&self) -> &EpochRecord {
        &self.epochs[self.best]
    }
}

/// State visible to a [`StepObserver`] just before the outer and inner updates.
pub struct StepContext<'a> {
    pub step: usize,
    pub epoch: usize,
    pub model: &'a Model,
    pub bundle: &'a GradientBundle,
    pub kappa: Option<&'a RotationScalars>,
    pub weights: Option<&'a TaskWeights>,
    pub target_batch: &'a GraphBatch,
    pub heldout: &'a GraphBatch,
    pub lr: f64,
}

pub trait StepObserver {
    fn on_step(&mut self, ctx: &StepContext<'_>) -> Result<()>;
}

/// One weighted term of an [`EncoderLoss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossTerm {
    Target { weight: f64 },
    Aux { task: AuxTask, slot: usize, weight: f64, seed: u64 },
}

/// A weighted sum of task losses as a function of the encoder parameters
/// alone, with the heads held fixed.
pub struct EncoderLoss<'a> {
    pub model: &'a Model,
    pub batch: &'a GraphBatch,
    /// Batch for the auxiliary terms; usually the same as `batch`.
    pub aux_batch: &'a GraphBatch,
    pub terms: Vec<LossTerm>,
    pub settings: AuxSettings,
}

impl<'a> EncoderLoss<'a> {
    pub fn target(model: &'a Model, batch: &'a GraphBatch) -> Self {
        EncoderLoss {
            model,
            batch,
            aux_batch: batch,
            terms: vec![LossTerm::Target { weight: 1.0 }],
            settings: AuxSettings::default(),
        }
    }

    fn build(&self, theta: &[f64]) -> Result<(ModelTape<'a>, Option<Var>)> {
        let mut mt = ModelTape::with_encoder_params(self.model, theta)?;
        let enc = mt.encode(self.batch)?;
        let aux_enc: Encoded = if std::ptr::eq(self.batch, self.aux_batch) {
            enc
        } else {
            mt.encode(self.aux_batch)?
        };
        let mut total: Option<Var> = None;
        for term in &self.terms {
            let (loss, weight) = match *term {
                LossTerm::Target { weight } => (mt.target_loss(self.batch, &enc)?, weight),
                LossTerm::Aux {
                    task,
                    slot,
                    weight,
                    seed,
                } => (
                    mt.aux_loss(task, slot, self.aux_batch, &aux_enc, &self.settings, seed)?,
                    weight,
                ),
            };
            let scaled = mt.tape.scale(loss, weight)?;
            total = Some(match total {
                None => scaled,
                Some(t) => mt.tape.add(t, scaled)?,
            });
        }
        Ok((mt, total))
    }
}

impl Objective for EncoderLoss<'_> {
    fn dim(&self) -> usize {
        self.model.encoder.num_params()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        match self.build(theta)? {
            (mt, Some(l)) => mt.value(l),
            (_, None) => Ok(0.0),
        }
    }

    fn gradient(&self, theta: &[f64]) -> Result<FlatGrad> {
        match self.build(theta)? {
            (mt, Some(l)) => mt.encoder_grad(l),
            (_, None) => Ok(FlatGrad::zeros(theta.len())),
        }
    }
}

/// Deterministic per-(run, step, slot) seed.
pub fn mix_seed(seed: u64, step: u64, slot: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ slot.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shuffled batches over `0..n`; a trailing batch of one is merged into the
/// previous batch.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = perm.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().map_or(false, |b| b.len() == 1) {
        let last = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(last);
        }
    }
    batches
}

/// Endless reshuffled stream over a pool, used for auxiliary batches.
struct BatchStream {
    perm: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        BatchStream { perm, pos: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.perm.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.perm.len() {
                self.perm.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let idx = self.perm[self.pos];
            self.pos += 1;
            if !out.contains(&idx) {
                out.push(idx);
            }
        }
        out
    }
}

/// SGD or Adam over the parameter groups `[encoder, target head, aux heads…]`.
struct Optimizer {
    cfg: OptimConfig,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
    t: i32,
}

impl Optimizer {
    fn new(cfg: OptimConfig, sizes: &[usize]) -> Self {
        let moments = match cfg.optimizer {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam => sizes.iter().map(|&n| (vec![0.0; n], vec![0.0; n])).collect(),
        };
        Optimizer { cfg, moments, t: 0 }
    }

    fn begin_step(&mut self) {
        self.t += 1;
    }

    fn apply(&mut self, group: usize, params: &mut [f64], grad: &[f64], scale: f64) {
        let c = &self.cfg;
        match c.optimizer {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= c.lr * scale * g;
                }
            }
            OptimizerKind::Adam => {
                let (m, v) = &mut self.moments[group];
                let bc1 = 1.0 - c.adam_beta1.powi(self.t);
                let bc2 = 1.0 - c.adam_beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = scale * grad[i];
                    m[i] = c.adam_beta1 * m[i] + (1.0 - c.adam_beta1) * g;
                    v[i] = c.adam_beta2 * v[i] + (1.0 - c.adam_beta2) * g * g;
                    params[i] -= c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.adam_eps);
                }
            }
        }
    }
}

fn batch_of(pool: &[SyntheticGraph], idx: &[usize]) -> Result<GraphBatch> {
    GraphBatch::new(idx.iter().map(|&i| &pool[i]))
}

fn push_trace(trace: &mut Vec<TraceRow>, step: usize, values: &[f64]) {
    trace.extend(values.iter().enumerate().map(|(component, &value)| TraceRow { step, component, value }));
}

fn labels_of(batch: &GraphBatch) -> Vec<bool> {
    batch.labels.iter().map(|&y| y > 0.5).collect()
}

/// Target AUC on `batch`.
pub fn evaluate_auc(model: &Model, batch: &GraphBatch) -> Result<f64> {
    roc_auc(&predict(model, batch)?, &labels_of(batch))
}

/// Target and auxiliary losses on `batch` with fixed sampling seeds.
fn eval_losses(model: &Model, batch: &GraphBatch, aux: &[AuxTask], settings: &AuxSettings, seed: u64) -> Result<Vec<f64>> {
    let mut mt = ModelTape::new(model)?;
    let enc = mt.encode(batch)?;
    let mut out = Vec::with_capacity(aux.len() + 1);
    let lt = mt.target_loss(batch, &enc)?;
    out.push(mt.value(lt)?);
    for (slot, &task) in aux.iter().enumerate() {
        let l = mt.aux_loss(task, slot, batch, &enc, settings, mix_seed(seed, 0, slot as u64))?;
        out.push(mt.value(l)?);
    }
    Ok(out)
}

/// Trains `model` with `cfg.method` and evaluates after every epoch.
pub fn train(
    mut model: Model,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    mut observer: Option<&mut dyn StepObserver>,
) -> Result<TrainOutcome> {
    cfg.optim.validate()?;
    cfg.bilevel.validate()?;
    cfg.kappa.validate()?;
    cfg.aux_settings.validate()?;
    let method = cfg.method;
    let aux: &[AuxTask] = if method.uses_aux() { &cfg.aux } else { &[] };
    let k = aux.len();
    if method.uses_aux() && model.aux_heads.len() != k {
        return Err(Error::usage(format!(
            "model has {} auxiliary heads for {k} auxiliary tasks",
            model.aux_heads.len()
        )));
    }
    let target_pool: &[SyntheticGraph] = match cfg.target_train_limit {
        Some(n) => &data.train[..n.min(data.train.len())],
        None => data.train,
    };
    let separate_aux = target_pool.len() < data.train.len() && k > 0;
    if target_pool.len() < 2 || (separate_aux && data.train.len() < 2) {
        return Err(Error::usage("training needs at least two target graphs"));
    }
    let needs_heldout = matches!(method, Method::Blo | Method::Blorc) && k > 0;
    if needs_heldout && data.aux_heldout.is_empty() {
        return Err(Error::usage("bi-level methods need a nonempty held-out split"));
    }
    let heldout = if data.aux_heldout.is_empty() {
        batch_of(target_pool, &[0, 1])?
    } else {
        GraphBatch::new(data.aux_heldout)?
    };
    let valid = GraphBatch::new(data.valid)?;
    let test = GraphBatch::new(data.test)?;

    let mut group_sizes = vec![model.encoder.num_params(), model.target_head.params.len()];
    group_sizes.extend(model.aux_heads.iter().map(|h| h.params.len()));
    let mut opt = Optimizer::new(cfg.optim, &group_sizes);
    let mut order_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, u64::MAX, 1));
    let mut aux_stream = BatchStream::new(data.train.len(), mix_seed(cfg.seed, u64::MAX, 2));

    let mut weights = (method == Method::Blo).then(|| TaskWeights::uniform(k));
    let mut kappa = method.learns_kappa().then(|| RotationScalars::initial(k));
    let mut w_trace = Vec::new();
    let mut kappa_trace = Vec::new();
    if let Some(w) = &weights {
        push_trace(&mut w_trace, 0, w.as_slice());
    }
    if let Some(kp) = &kappa {
        push_trace(&mut kappa_trace, 0, &kp.to_vec());
    }

    let unit = vec![1.0; k];
    let mut epochs = Vec::with_capacity(cfg.optim.epochs.max(1));
    let mut step = 0usize;
    for epoch in 1..=cfg.optim.epochs {
        let mut loss_sum = vec![0.0; k + 1];
        let batches = epoch_batches(target_pool.len(), cfg.optim.batch_size, &mut order_rng);
        for idx in &batches {
            step += 1;
            let tb = batch_of(target_pool, idx)?;
            let ab = if separate_aux {
                Some(batch_of(data.train, &aux_stream.next(cfg.optim.batch_size))?)
            } else {
                None
            };
            let ab_ref = ab.as_ref().unwrap_or(&tb);
            let seeds: Vec<u64> = (0..k).map(|s| mix_seed(cfg.seed, step as u64, s as u64)).collect();

            let mut mt = ModelTape::new(&model)?;
            let enc_t = mt.encode(&tb)?;
            let lt = mt.target_loss(&tb, &enc_t)?;
            loss_sum[0] += mt.value(lt)?;
            let gt = mt.split_grad(lt)?;
            let enc_a = if separate_aux { mt.encode(ab_ref)? } else { enc_t };
            let mut aux_enc = Vec::with_capacity(k);
            let mut aux_head = Vec::with_capacity(k);
            for (slot, &task) in aux.iter().enumerate() {
                let la = mt.aux_loss(task, slot, ab_ref, &enc_a, &cfg.aux_settings, seeds[slot])?;
                loss_sum[slot + 1] += mt.value(la)?;
                let mut g = mt.split_grad(la)?;
                aux_enc.push(g.encoder);
                aux_head.push(std::mem::take(&mut g.aux_heads[slot]));
            }
            drop(mt);
            let bundle = GradientBundle::new(gt.encoder, aux_enc)?;

            if let Some(obs) = observer.as_deref_mut() {
                obs.on_step(&StepContext {
                    step,
                    epoch,
                    model: &model,
                    bundle: &bundle,
                    kappa: kappa.as_ref(),
                    weights: weights.as_ref(),
                    target_batch: &tb,
                    heldout: &heldout,
                    lr: cfg.optim.lr,
                })?;
            }

            let outer_due = step % cfg.bilevel.outer_every == 0 && k > 0;
            let theta = &model.encoder.params;
            match method {
                Method::RCGrad if bundle.any_conflict() => {
                    let loss = EncoderLoss::target(&model, &tb);
                    let kp = kappa.as_mut().expect("RCGrad keeps rotation scalars");
                    *kp = update_kappa(theta, &bundle, kp, cfg.optim.lr, &cfg.kappa, &loss, cfg.symmetric_scale)?;
                    push_trace(&mut kappa_trace, step, &kp.to_vec());
                }
                Method::Blorc if outer_due => {
                    let loss = EncoderLoss::target(&model, &heldout);
                    let kp = kappa.as_mut().expect("BLORC keeps rotation scalars");
                    *kp = update_kappa(theta, &bundle, kp, cfg.optim.lr, &cfg.kappa, &loss, cfg.symmetric_scale)?;
                    push_trace(&mut kappa_trace, step, &kp.to_vec());
                }
                Method::Blo if outer_due => {
                    let w = weights.as_mut().expect("BLO keeps task weights");
                    let mut terms = vec![LossTerm::Target { weight: 1.0 }];
                    terms.extend(aux.iter().enumerate().map(|(slot, &task)| LossTerm::Aux {
                        task,
                        slot,
                        weight: w.as_slice()[slot],
                        seed: seeds[slot],
                    }));
                    let total = EncoderLoss {
                        model: &model,
                        batch: &tb,
                        aux_batch: ab_ref,
                        terms,
                        settings: cfg.aux_settings,
                    };
                    let val_grad = EncoderLoss::target(&model, &heldout).gradient(theta)?;
                    let hyper = neumann_hypergrad_from(theta, &total, &val_grad, &bundle.aux, &cfg.bilevel)?;
                    w.descend(&hyper, cfg.bilevel.outer_lr, cfg.bilevel.w_max, cfg.bilevel.nonnegative_weights)?;
                    push_trace(&mut w_trace, step, w.as_slice());
                }
                _ => {}
            }

            let head_scale: &[f64] = weights.as_ref().map_or(&unit, |w| w.as_slice());
            let g = match method {
                Method::Blo => combine_mtl(&bundle, head_scale)?,
                Method::Blorc => combine(CombinerKind::RCGrad, &bundle, kappa.as_ref(), cfg.symmetric_scale)?,
                m => combine(
                    m.combiner().unwrap_or(CombinerKind::Ft),
                    &bundle,
                    kappa.as_ref(),
                    cfg.symmetric_scale,
                )?,
            };
            opt.begin_step();
            opt.apply(0, &mut model.encoder.params, &g, 1.0);
            opt.apply(1, &mut model.target_head.params, &gt.target_head, 1.0);
            for (slot, gh) in aux_head.iter().enumerate() {
                opt.apply(2 + slot, &mut model.aux_heads[slot].params, gh, head_scale[slot]);
            }
        }
        let n_batches = batches.len().max(1) as f64;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum.iter().map(|l| l / n_batches).collect(),
            valid_loss: eval_losses(&model, &valid, aux, &cfg.aux_settings, cfg.seed)?,
            valid_auc: evaluate_auc(&model, &valid)?,
            test_auc: evaluate_auc(&model, &test)?,
        });
        log::debug!(
            "{method} epoch {epoch}: valid auc {:.4}, test auc {:.4}",
            epochs[epochs.len() - 1].valid_auc,
            epochs[epochs.len() - 1].test_auc
        );
    }
    if epochs.is_empty() {
        epochs.push(EpochRecord {
            epoch: 0,
            train_loss: Vec::new(),
            valid_loss: eval_losses(&model, &valid, aux, &cfg.aux_settings, cfg.seed)?,
            valid_auc: evaluate_auc(&model, &valid)?,
            test_auc: evaluate_auc(&model, &test)?,
        });
    }
    let best = epochs
        .iter()
        .enumerate()
        .fold(0, |best, (i, e)| if e.valid_auc > epochs[best].valid_auc { i } else { best });
    Ok(TrainOutcome {
        model,
        epochs,
        best,
        steps: step,
        w_trace,
        kappa_trace,
        final_weights: weights,
        final_kappa: kappa,
    })
}
