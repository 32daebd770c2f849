//! Single-level strategies for merging the target gradient with auxiliary
//! gradients on the shared encoder parameters.
//!
//! All combiners are pure functions of a [`GradientBundle`]; with no
//! auxiliary gradients every one of them returns the target gradient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, FlatGrad, Objective};
use crate::error::{Error, Result};

/// Target gradient plus one gradient per auxiliary task, all over the same
/// flattened shared parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub target: FlatGrad,
    pub aux: Vec<FlatGrad>,
}

impl GradientBundle {
    pub fn new(target: FlatGrad, aux: Vec<FlatGrad>) -> Result<Self> {
        let n = target.len();
        if let Some(bad) = aux.iter().find(|g| g.len() != n) {
            return Err(Error::shape(
                "gradient-bundle",
                format!("auxiliary gradient of length {} vs target {n}", bad.len()),
            ));
        }
        if target.iter().chain(aux.iter().flat_map(|g| g.iter())).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: "gradient-bundle" });
        }
        Ok(GradientBundle { target, aux })
    }

    pub fn num_aux(&self) -> usize {
        self.aux.len()
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    /// `g_t · g_{a,i} < 0`; an exact zero is not a conflict.
    pub fn conflicts(&self, i: usize) -> bool {
        self.target.dot(&self.aux[i]) < 0.0
    }

    pub fn any_conflict(&self) -> bool {
        (0..self.num_aux()).any(|i| self.conflicts(i))
    }
}

/// Learned scalars standing in for the rotation of conflicting gradients:
/// `(1 + κ_t)` on the target and `κ_i` on each projected auxiliary gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationScalars {
    pub kappa_t: f64,
    pub kappa_aux: Vec<f64>,
}

impl RotationScalars {
    /// `κ_t = 0, κ_i = 1`: the projection baseline.
    pub fn initial(k: usize) -> Self {
        RotationScalars {
            kappa_t: 0.0,
            kappa_aux: vec![1.0; k],
        }
    }

    pub fn clamp(&mut self, max: f64) {
        self.kappa_t = self.kappa_t.clamp(0.0, max);
        for k in &mut self.kappa_aux {
            *k = k.clamp(0.0, max);
        }
    }

    /// `[κ_t, κ_1, …, κ_k]`
    pub fn to_vec(&self) -> Vec<f64> {
        std::iter::once(self.kappa_t).chain(self.kappa_aux.iter().copied()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CombinerKind {
    #[serde(rename = "FT")]
    Ft,
    #[serde(rename = "MTL")]
    Mtl,
    GradSim,
    GradScale,
    PCGrad,
    RCGrad,
}

impl CombinerKind {
    pub const ALL: [CombinerKind; 6] = [
        CombinerKind::Ft,
        CombinerKind::Mtl,
        CombinerKind::GradSim,
        CombinerKind::GradScale,
        CombinerKind::PCGrad,
        CombinerKind::RCGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CombinerKind::Ft => "FT",
            CombinerKind::Mtl => "MTL",
            CombinerKind::GradSim => "GradSim",
            CombinerKind::GradScale => "GradScale",
            CombinerKind::PCGrad => "PCGrad",
            CombinerKind::RCGrad => "RCGrad",
        }
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CombinerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CombinerKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown combiner {s:?}")))
    }
}

/// `g_t + Σ wᵢ g_{a,i}`
pub fn combine_mtl(bundle: &GradientBundle, w: &[f64]) -> Result<FlatGrad> {
    if w.len() != bundle.num_aux() {
        return Err(Error::usage(format!(
            "{} task weights for {} auxiliary gradients",
            w.len(),
            bundle.num_aux()
        )));
    }
    let mut out = bundle.target.clone();
    for (wi, g) in w.iter().zip(&bundle.aux) {
        out.add_scaled(*wi, g);
    }
    Ok(out)
}

/// `g_t + Σ max(0, cos(g_t, g_{a,i})) g_{a,i}`
pub fn combine_gradsim(bundle: &GradientBundle) -> FlatGrad {
    let mut out = bundle.target.clone();
    let t_norm = bundle.target.norm();
    if t_norm == 0.0 {
        if bundle.num_aux() > 0 {
            log::warn!("GradSim: target gradient is zero, treating every cosine as 0");
        }
        return out;
    }
    for g in &bundle.aux {
        let a_norm = g.norm();
        if a_norm == 0.0 {
            continue;
        }
        let cos = bundle.target.dot(g) / (t_norm * a_norm);
        if cos > 0.0 {
            out.add_scaled(cos, g);
        }
    }
    out
}

/// Norm-matching factor for a non-conflicting auxiliary gradient:
/// `max(1, ‖g_t‖/‖g_a‖)`, or the plain ratio when `symmetric`.
fn scale_factor(t_norm: f64, a_norm: f64, symmetric: bool) -> f64 {
    if a_norm == 0.0 {
        return 0.0;
    }
    let ratio = t_norm / a_norm;
    if symmetric {
        ratio
    } else {
        ratio.max(1.0)
    }
}

/// `g_t + Σ max(1, ‖g_t‖/‖g_{a,i}‖) g_{a,i}`
pub fn combine_gradscale(bundle: &GradientBundle) -> FlatGrad {
    combine_gradscale_with(bundle, false)
}

/// GradScale with an optional symmetric factor `‖g_t‖/‖g_{a,i}‖` that also
/// shrinks dominant auxiliary gradients.
pub fn combine_gradscale_with(bundle: &GradientBundle, symmetric: bool) -> FlatGrad {
    let mut out = bundle.target.clone();
    let t_norm = bundle.target.norm();
    for g in &bundle.aux {
        let f = scale_factor(t_norm, g.norm(), symmetric);
        if f != 0.0 {
            out.add_scaled(f, g);
        }
    }
    out
}

/// Removes the component of `g_a` along `g_t`.
pub fn pcgrad_project(g_a: &[f64], g_t: &[f64]) -> Result<FlatGrad> {
    if g_a.len() != g_t.len() {
        return Err(Error::shape("pcgrad-project", format!("{} vs {}", g_a.len(), g_t.len())));
    }
    let t_norm = dot(g_t, g_t).sqrt();
    if t_norm == 0.0 {
        return Err(Error::usage("cannot project onto the normal plane of a zero target gradient"));
    }
    let coef = dot(g_a, g_t) / t_norm;
    Ok(g_a
        .iter()
        .zip(g_t)
        .map(|(a, t)| a - coef * (t / t_norm))
        .collect::<Vec<_>>()
        .into())
}

/// Projects each conflicting auxiliary gradient, keeps the rest, sums with `g_t`.
pub fn combine_pcgrad(bundle: &GradientBundle) -> Result<FlatGrad> {
    let mut out = bundle.target.clone();
    for (i, g) in bundle.aux.iter().enumerate() {
        if bundle.conflicts(i) {
            out.add_scaled(1.0, &pcgrad_project(g, &bundle.target)?);
        } else {
            out.add_scaled(1.0, g);
        }
    }
    Ok(out)
}

/// Per-task decomposition shared by [`combine_rcgrad`] and [`kappa_partials`].
#[derive(Clone, Debug)]
struct RcTerms {
    /// Projected gradient for conflicting tasks, `None` otherwise.
    projected: Vec<Option<FlatGrad>>,
    /// Sum of the norm-scaled non-conflicting gradients.
    passthrough: FlatGrad,
}

fn rc_terms(bundle: &GradientBundle, symmetric: bool) -> Result<RcTerms> {
    let t_norm = bundle.target.norm();
    let mut passthrough = FlatGrad::zeros(bundle.dim());
    let mut projected = Vec::with_capacity(bundle.num_aux());
    for (i, g) in bundle.aux.iter().enumerate() {
        if bundle.conflicts(i) {
            projected.push(Some(pcgrad_project(g, &bundle.target)?));
        } else {
            let f = scale_factor(t_norm, g.norm(), symmetric);
            if f != 0.0 {
                passthrough.add_scaled(f, g);
            }
            projected.push(None);
        }
    }
    Ok(RcTerms { projected, passthrough })
}

/// Rotation of conflicting gradients, evaluated per auxiliary task:
/// conflicting tasks contribute `κ_i · oproj(g_{a,i})`, the others
/// `max(1, ‖g_t‖/‖g_{a,i}‖) g_{a,i}`; the target is scaled by `1 + κ_t`
/// when at least one task conflicts.
pub fn combine_rcgrad(bundle: &GradientBundle, kappa: &RotationScalars) -> Result<FlatGrad> {
    combine_rcgrad_with(bundle, kappa, false)
}

pub fn combine_rcgrad_with(bundle: &GradientBundle, kappa: &RotationScalars, symmetric: bool) -> Result<FlatGrad> {
    check_kappa(bundle, kappa)?;
    let terms = rc_terms(bundle, symmetric)?;
    let any = terms.projected.iter().any(Option::is_some);
    let mut out = bundle.target.scaled(if any { 1.0 + kappa.kappa_t } else { 1.0 });
    out.add_scaled(1.0, &terms.passthrough);
    for (k, p) in kappa.kappa_aux.iter().zip(&terms.projected) {
        if let Some(p) = p {
            out.add_scaled(*k, p);
        }
    }
    Ok(out)
}

fn check_kappa(bundle: &GradientBundle, kappa: &RotationScalars) -> Result<()> {
    if kappa.kappa_aux.len() != bundle.num_aux() {
        return Err(Error::usage(format!(
            "{} rotation scalars for {} auxiliary gradients",
            kappa.kappa_aux.len(),
            bundle.num_aux()
        )));
    }
    Ok(())
}

/// Dispatch for the single-level strategies. `kappa` is only read by RCGrad;
/// MTL uses unit weights and FT ignores the auxiliary gradients.
pub fn combine(kind: CombinerKind, bundle: &GradientBundle, kappa: Option<&RotationScalars>, symmetric: bool) -> Result<FlatGrad> {
    match kind {
        CombinerKind::Ft => Ok(bundle.target.clone()),
        CombinerKind::Mtl => combine_mtl(bundle, &vec![1.0; bundle.num_aux()]),
        CombinerKind::GradSim => Ok(combine_gradsim(bundle)),
        CombinerKind::GradScale => Ok(combine_gradscale_with(bundle, symmetric)),
        CombinerKind::PCGrad => combine_pcgrad(bundle),
        CombinerKind::RCGrad => {
            let default;
            let kappa = match kappa {
                Some(k) => k,
                None => {
                    default = RotationScalars::initial(bundle.num_aux());
                    &default
                }
            };
            combine_rcgrad_with(bundle, kappa, symmetric)
        }
    }
}

/// Settings for the κ lookahead update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KappaConfig {
    /// Learning rate `η_κ`.
    pub lr: f64,
    /// Upper clamp `κ_max`.
    pub max: f64,
}

impl Default for KappaConfig {
    fn default() -> Self {
        KappaConfig { lr: 0.01, max: 10.0 }
    }
}

impl KappaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.max > 0.0) {
            return Err(Error::Config(format!("kappa lr {} and max {} must be positive", self.lr, self.max)));
        }
        Ok(())
    }
}

/// `∂L(θ′)/∂κ` for the one-step lookahead `θ′ = θ − α·g(κ)`, ordered `[κ_t, κ_1, …]`.
///
/// `∂/∂κ_t = −α ∇L(θ′)·g_t` and `∂/∂κ_i = −α ∇L(θ′)·oproj(g_{a,i})`; both are
/// zero for terms that the current conflict pattern leaves unused.
pub fn kappa_partials(
    theta: &[f64],
    bundle: &GradientBundle,
    kappa: &RotationScalars,
    step: f64,
    loss: &dyn Objective,
    symmetric: bool,
) -> Result<Vec<f64>> {
    let g = combine_rcgrad_with(bundle, kappa, symmetric)?;
    if g.len() != theta.len() {
        return Err(Error::shape("update-kappa", format!("theta {} vs gradient {}", theta.len(), g.len())));
    }
    let terms = rc_terms(bundle, symmetric)?;
    let mut partials = vec![0.0; bundle.num_aux() + 1];
    if terms.projected.iter().all(Option::is_none) {
        return Ok(partials);
    }
    let lookahead: Vec<f64> = theta.iter().zip(g.iter()).map(|(t, gi)| t - step * gi).collect();
    let grad = loss.gradient(&lookahead)?;
    partials[0] = -step * grad.dot(&bundle.target);
    for (i, p) in terms.projected.iter().enumerate() {
        if let Some(p) = p {
            partials[i + 1] = -step * grad.dot(p);
        }
    }
    Ok(partials)
}

/// One descent step on κ through the lookahead loss, clamped to `[0, κ_max]`.
pub fn update_kappa(
    theta: &[f64],
    bundle: &GradientBundle,
    kappa: &RotationScalars,
    step: f64,
    cfg: &KappaConfig,
    loss: &dyn Objective,
    symmetric: bool,
) -> Result<RotationScalars> {
    if !(step > 0.0) {
        return Err(Error::usage(format!("step size {step} must be positive")));
    }
    cfg.validate()?;
    let partials = kappa_partials(theta, bundle, kappa, step, loss, symmetric)?;
    let mut next = kappa.clone();
    next.kappa_t -= cfg.lr * partials[0];
    for (k, d) in next.kappa_aux.iter_mut().zip(&partials[1..]) {
        *k -= cfg.lr * d;
    }
    next.clamp(cfg.max);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fg(v: &[f64]) -> FlatGrad {
        FlatGrad::from(v.to_vec())
    }

    fn bundle(t: &[f64], aux: &[&[f64]]) -> GradientBundle {
        GradientBundle::new(fg(t), aux.iter().map(|a| fg(a)).collect()).unwrap()
    }

    #[test]
    fn mtl_examples() {
        let b = bundle(&[1.0, 0.0], &[&[0.0, 2.0]]);
        assert_eq!(combine_mtl(&b, &[0.5]).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(combine_mtl(&b, &[0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(combine_mtl(&b, &[]).is_err());
        let k0 = bundle(&[1.0, -3.0], &[]);
        assert_eq!(combine_mtl(&k0, &[]).unwrap(), k0.target);
    }

    #[test]
    fn gradsim_examples() {
        assert_eq!(combine_gradsim(&bundle(&[1.0, 0.0], &[&[-1.0, 1.0]])).as_slice(), &[1.0, 0.0]);
        assert_eq!(combine_gradsim(&bundle(&[1.0, 0.0], &[&[2.0, 0.0]])).as_slice(), &[3.0, 0.0]);
        assert_eq!(combine_gradsim(&bundle(&[1.0, 0.0], &[&[0.0, 5.0]])).as_slice(), &[1.0, 0.0]);
        // zero target: returned unchanged
        assert_eq!(combine_gradsim(&bundle(&[0.0, 0.0], &[&[1.0, 1.0]])).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn gradscale_examples() {
        assert_eq!(combine_gradscale(&bundle(&[3.0, 4.0], &[&[1.0, 0.0]])).as_slice(), &[8.0, 4.0]);
        assert_eq!(combine_gradscale(&bundle(&[3.0, 4.0], &[&[0.0, 10.0]])).as_slice(), &[3.0, 14.0]);
        assert_eq!(combine_gradscale(&bundle(&[3.0, 4.0], &[&[0.0, 0.0]])).as_slice(), &[3.0, 4.0]);
        // the symmetric variant also shrinks dominant gradients
        assert_eq!(combine_gradscale_with(&bundle(&[3.0, 4.0], &[&[0.0, 10.0]]), true).as_slice(), &[3.0, 9.0]);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(pcgrad_project(&[-1.0, 1.0], &[1.0, 0.0]).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(pcgrad_project(&[2.5, 0.0], &[1.0, 0.0]).unwrap().as_slice(), &[0.0, 0.0]);
        assert_eq!(pcgrad_project(&[0.0, 3.0], &[1.0, 0.0]).unwrap().as_slice(), &[0.0, 3.0]);
        assert!(pcgrad_project(&[1.0, 1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn pcgrad_examples() {
        assert_eq!(combine_pcgrad(&bundle(&[1.0, 0.0], &[&[-1.0, 1.0]])).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(
            combine_pcgrad(&bundle(&[1.0, 0.0], &[&[-1.0, 1.0], &[1.0, 1.0]])).unwrap().as_slice(),
            &[2.0, 2.0]
        );
        let b = bundle(&[1.0, 2.0], &[&[1.0, 0.0], &[0.5, 3.0]]);
        assert_eq!(combine_pcgrad(&b).unwrap(), combine_mtl(&b, &[1.0, 1.0]).unwrap());
    }

    #[test]
    fn rcgrad_examples() {
        let b = bundle(&[1.0, 0.0], &[&[-1.0, 1.0]]);
        let k = RotationScalars {
            kappa_t: 1.0,
            kappa_aux: vec![2.0],
        };
        assert_eq!(combine_rcgrad(&b, &k).unwrap().as_slice(), &[2.0, 2.0]);
        assert_eq!(
            combine_rcgrad(&b, &RotationScalars::initial(1)).unwrap(),
            combine_pcgrad(&b).unwrap()
        );
        let calm = bundle(&[3.0, 4.0], &[&[1.0, 0.0], &[0.0, 9.0]]);
        assert_eq!(combine_rcgrad(&calm, &k.clone_with(2)).unwrap(), combine_gradscale(&calm));
    }

    #[test]
    fn exact_tie_is_not_a_conflict() {
        let b = bundle(&[1.0, 0.0], &[&[0.0, 1.0]]);
        assert!(!b.conflicts(0));
    }

    #[test]
    fn ft_ignores_aux() {
        let b = bundle(&[1.0, 2.0], &[&[-5.0, 1.0]]);
        assert_eq!(combine(CombinerKind::Ft, &b, None, false).unwrap(), b.target);
    }

    #[test]
    fn kappa_clamps_at_bounds() {
        let mut k = RotationScalars {
            kappa_t: -0.5,
            kappa_aux: vec![12.0, 3.0],
        };
        k.clamp(10.0);
        assert_eq!(k.to_vec(), vec![0.0, 10.0, 3.0]);
    }

    #[test]
    fn bundle_validation() {
        assert!(GradientBundle::new(fg(&[1.0, 2.0]), vec![fg(&[1.0])]).is_err());
        assert!(GradientBundle::new(fg(&[f64::NAN, 2.0]), vec![]).is_err());
    }

    impl RotationScalars {
        fn clone_with(&self, k: usize) -> Self {
            RotationScalars {
                kappa_t: self.kappa_t,
                kappa_aux: vec![self.kappa_aux[0]; k],
            }
        }
    }
}
