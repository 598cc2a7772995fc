//! Segmentation, adversarial and feature-matching objectives.
//!
//! Every function here is pure given its inputs and an explicit random
//! generator. Critics are passed as closures so the same code serves the
//! real networks and the small analytic critics used in tests.

use std::collections::BTreeMap;

use autograd::{grad, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DomainLabel;
use crate::error::{Error, Result};
use crate::variant::Variant;

/// Added to every normalising denominator (soft-IoU, class aggregation).
pub const EPS: f32 = 1e-8;

/// Lower clamp applied inside the logarithms of the cross-entropy.
pub const LOG_CLAMP: f32 = 1e-12;

/// Keeps the square root of a zero gradient norm differentiable.
const NORM_FLOOR: f32 = 1e-20;

/// Image or feature batch to per-sample scores `[B, K]`.
pub type Critic<'a> = &'a dyn Fn(&Var) -> Result<Var>;

/// Critic that also reads a segmentation prediction.
pub type PairCritic<'a> = &'a dyn Fn(&Var, &Var) -> Result<Var>;

/// A differentiable scalar loss with named sub-values for logging.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: Var,
    pub components: BTreeMap<String, f32>,
}

impl LossValue {
    pub fn new(value: Var) -> Self {
        LossValue {
            value,
            components: BTreeMap::new(),
        }
    }

    pub fn item(&self) -> f32 {
        self.value.item()
    }

    fn with(mut self, name: &str, v: f32) -> Self {
        self.components.insert(name.to_string(), v);
        self
    }
}

/// Relative weights of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSet {
    pub rf: f32,
    pub dom: f32,
    pub cyc: f32,
    pub segm: f32,
    pub dom_f: f32,
    pub gp: f32,
}

impl LambdaSet {
    pub fn zero() -> Self {
        LambdaSet {
            rf: 0.0,
            dom: 0.0,
            cyc: 0.0,
            segm: 0.0,
            dom_f: 0.0,
            gp: 0.0,
        }
    }

    /// Reference weights of each experiment.
    pub fn for_variant(variant: Variant) -> Self {
        let da = |gp| LambdaSet {
            rf: 1.0,
            dom: 1.0,
            cyc: 10.0,
            segm: 10.0,
            dom_f: 1.0,
            gp,
        };
        match variant {
            Variant::Fcn => LambdaSet {
                segm: 1.0,
                ..LambdaSet::zero()
            },
            Variant::CycleganTranslate => LambdaSet {
                rf: 1.0,
                cyc: 10.0,
                ..LambdaSet::zero()
            },
            Variant::StarganTranslate => LambdaSet {
                rf: 1.0,
                dom: 1.0,
                cyc: 10.0,
                gp: 10.0,
                ..LambdaSet::zero()
            },
            Variant::SganS => LambdaSet { dom_f: 0.0, ..da(10.0) },
            Variant::Uncond => da(5.0),
            Variant::InCond => da(1.0),
            Variant::OutCond => da(2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("rf", self.rf),
            ("dom", self.dom),
            ("cyc", self.cyc),
            ("segm", self.segm),
            ("dom_f", self.dom_f),
            ("gp", self.gp),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("lambdas.{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

fn same_shape(a: &Var, b: &Var, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn mask_batch(v: &Var, what: &str) -> Result<()> {
    let s = v.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::Dimension(format!("{what}: expected [B, 1, H, W], got {s:?}")));
    }
    Ok(())
}

fn non_empty(v: &Var, what: &str) -> Result<()> {
    if v.numel() == 0 {
        return Err(Error::InvalidArgument(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `1 - |pred ∩ target| / |pred ∪ target|`, averaged over the batch.
pub fn soft_iou_loss(pred: &Var, target: &Var) -> Result<LossValue> {
    same_shape(pred, target, "soft_iou_loss")?;
    mask_batch(pred, "soft_iou_loss")?;
    let both = pred.mul(target)?;
    let inter = both.sum_axes(&[1, 2, 3])?;
    let union = pred.add(target)?.sub(&both)?.sum_axes(&[1, 2, 3])?.add_scalar(EPS);
    let value = inter.div(&union)?.rsub_scalar(1.0).mean_all();
    Ok(LossValue::new(value))
}

/// Per-class binary cross-entropy averaged over batch, classes and pixels.
pub fn pixel_ce_loss(pred: &Var, target: &Var) -> Result<LossValue> {
    same_shape(pred, target, "pixel_ce_loss")?;
    non_empty(pred, "pixel_ce_loss")?;
    let log_p = pred.clamp_min(LOG_CLAMP).log();
    let log_q = pred.rsub_scalar(1.0).clamp_min(LOG_CLAMP).log();
    let pos = target.mul(&log_p)?;
    let neg = target.rsub_scalar(1.0).mul(&log_q)?;
    Ok(LossValue::new(pos.add(&neg)?.neg().mean_all()))
}

pub fn lsgan_d_loss(real_scores: &Var, fake_scores: &Var) -> Result<LossValue> {
    non_empty(real_scores, "lsgan_d_loss")?;
    non_empty(fake_scores, "lsgan_d_loss")?;
    let real = real_scores.add_scalar(-1.0).square().mean_all();
    let fake = fake_scores.square().mean_all();
    let (r, f) = (real.item(), fake.item());
    Ok(LossValue::new(real.add(&fake)?).with("real", r).with("fake", f))
}

pub fn lsgan_g_loss(fake_scores: &Var) -> Result<LossValue> {
    non_empty(fake_scores, "lsgan_g_loss")?;
    Ok(LossValue::new(fake_scores.add_scalar(-1.0).square().mean_all()))
}

/// Mean absolute error between an image batch and its reconstruction.
pub fn cycle_loss(original: &Var, reconstructed: &Var) -> Result<LossValue> {
    same_shape(original, reconstructed, "cycle_loss")?;
    non_empty(original, "cycle_loss")?;
    Ok(LossValue::new(reconstructed.sub(original)?.abs().mean_all()))
}

/// One interpolation weight per sample, uniform on [0, 1).
pub fn interpolation_weights<R: Rng + ?Sized>(batch: usize, rng: &mut R) -> Vec<f32> {
    (0..batch).map(|_| rng.random::<f32>()).collect()
}

/// `alpha_b * a_b + (1 - alpha_b) * b_b` for every sample `b`.
pub fn interpolate(a: &Tensor, b: &Tensor, alpha: &[f32]) -> Result<Tensor> {
    if a.shape() != b.shape() || a.shape().first() != Some(&alpha.len()) {
        return Err(Error::Dimension(format!(
            "interpolate {:?} and {:?} with {} weights",
            a.shape(),
            b.shape(),
            alpha.len()
        )));
    }
    let per = a.numel() / alpha.len().max(1);
    let data: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (&x, &y))| {
            let t = alpha[i / per];
            t * x + (1.0 - t) * y
        })
        .collect();
    Ok(Tensor::new(a.shape().to_vec(), data)?)
}

/// Mean over samples and output columns of `(||d out[b, k] / d x_b|| - 1)^2`.
///
/// `x` must be a leaf the gradient can be taken with respect to. The result
/// stays differentiable with respect to the critic's parameters.
pub fn penalty_at(critic: Critic, x: &Var) -> Result<Var> {
    let batch = x.shape()[0];
    let out = critic(x)?;
    let shape = out.shape();
    let out = match shape.as_slice() {
        [b] if *b == batch => out.reshape(&[batch, 1])?,
        [b, _] if *b == batch => out,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "critic output {shape:?} is not a score per sample for batch {batch}"
            )))
        }
    };
    let columns = out.shape()[1];
    let inner: Vec<usize> = (1..x.shape().len()).collect();
    let mut terms = Vec::with_capacity(columns);
    for k in 0..columns {
        let g = grad(&out.narrow(1, k, 1)?.sum_all(), &[x], true)?.remove(0);
        let norm = g.square().sum_axes(&inner)?.add_scalar(NORM_FLOOR).sqrt();
        terms.push(norm.add_scalar(-1.0).square().reshape(&[batch, 1])?);
    }
    Ok(Var::concat(&terms, 1)?.mean_all())
}

/// Gradient penalty on points drawn uniformly between `real` and `fake`.
pub fn gradient_penalty<R: Rng + ?Sized>(critic: Critic, real: &Var, fake: &Var, rng: &mut R) -> Result<LossValue> {
    same_shape(real, fake, "gradient_penalty")?;
    let alpha = interpolation_weights(real.shape()[0], rng);
    let x_hat = Var::input(interpolate(&real.value(), &fake.value(), &alpha)?);
    Ok(LossValue::new(penalty_at(critic, &x_hat)?))
}

/// Wasserstein critic loss from precomputed scores and a penalty.
pub fn wgan_d_from_scores(real_scores: &Var, fake_scores: &Var, penalty: &LossValue, lambda_gp: f32) -> Result<LossValue> {
    let real = real_scores.mean_all();
    let fake = fake_scores.mean_all();
    let (r, f, p) = (real.item(), fake.item(), penalty.item());
    let value = fake.sub(&real)?.add(&penalty.value.scale(lambda_gp))?;
    Ok(LossValue::new(value).with("real", r).with("fake", f).with("gp", p))
}

pub fn wgan_g_from_scores(fake_scores: &Var) -> LossValue {
    LossValue::new(fake_scores.mean_all().neg())
}

/// Critic-side Wasserstein loss. Inputs are detached, so its gradient only
/// reaches the critic.
pub fn wgan_critic_loss<R: Rng + ?Sized>(
    critic: Critic,
    real: &Var,
    fake: &Var,
    lambda_gp: f32,
    rng: &mut R,
) -> Result<LossValue> {
    let (real, fake) = (real.detach(), fake.detach());
    let penalty = gradient_penalty(critic, &real, &fake, rng)?;
    wgan_d_from_scores(&critic(&real)?, &critic(&fake)?, &penalty, lambda_gp)
}

pub fn wgan_generator_loss(critic: Critic, fake: &Var) -> Result<LossValue> {
    Ok(wgan_g_from_scores(&critic(fake)?))
}

/// `(d_loss, g_loss)` of the real/fake Wasserstein game.
pub fn wgan_rf_losses<R: Rng + ?Sized>(
    critic: Critic,
    real: &Var,
    fake: &Var,
    lambda_gp: f32,
    rng: &mut R,
) -> Result<(LossValue, LossValue)> {
    Ok((
        wgan_critic_loss(critic, real, fake, lambda_gp, rng)?,
        wgan_generator_loss(critic, fake)?,
    ))
}

/// Softmax cross-entropy of domain logits `[B, 2]` against labels.
pub fn domain_cross_entropy(logits: &Var, labels: &[DomainLabel]) -> Result<LossValue> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
        return Err(Error::Dimension(format!(
            "domain logits {shape:?} for {} labels",
            labels.len()
        )));
    }
    let data: Vec<f32> = labels.iter().flat_map(|l| l.one_hot()).collect();
    if data.len() != logits.numel() {
        return Err(Error::Dimension(format!("domain logits {shape:?} need {} classes", data.len() / labels.len())));
    }
    let one_hot = Var::constant(Tensor::new(shape.clone(), data)?);
    let picked = logits.mul(&one_hot)?.sum_axes(&[1])?;
    Ok(LossValue::new(logits.logsumexp_last()?.sub(&picked)?.mean_all()))
}

/// `(d_loss, g_loss)`: classify real images by their domain, translated
/// images by their intended domain.
pub fn domain_cls_losses(
    real_logits: &Var,
    true_domains: &[DomainLabel],
    translated_logits: &Var,
    target_domains: &[DomainLabel],
) -> Result<(LossValue, LossValue)> {
    Ok((
        domain_cross_entropy(real_logits, true_domains)?,
        domain_cross_entropy(translated_logits, target_domains)?,
    ))
}

/// Per-class weighted means of a score map: column 0 is background
/// (weights `1 - y`), column 1 the digit (weights `y`). The prediction is
/// treated as a constant.
pub fn classwise_aggregate(score_map: &Var, seg_pred: &Var) -> Result<Var> {
    same_shape(score_map, seg_pred, "classwise_aggregate")?;
    mask_batch(score_map, "classwise_aggregate")?;
    let batch = score_map.shape()[0];
    let fg = seg_pred.detach();
    let bg = fg.rsub_scalar(1.0);
    let class_mean = |w: &Var| -> Result<Var> {
        let num = score_map.mul(w)?.sum_axes(&[1, 2, 3])?;
        let den = w.sum_axes(&[1, 2, 3])?.add_scalar(EPS);
        Ok(num.div(&den)?.reshape(&[batch, 1])?)
    };
    Ok(Var::concat(&[class_mean(&bg)?, class_mean(&fg)?], 1)?)
}

/// Pairs source and target batches by truncating to the shorter one.
fn truncate_pair(a: &Var, b: &Var) -> Result<(Var, Var)> {
    let n = a.shape()[0].min(b.shape()[0]);
    if n == 0 {
        return Err(Error::InvalidArgument("feature matching on an empty batch".into()));
    }
    Ok((a.narrow(0, 0, n)?, b.narrow(0, 0, n)?))
}

/// Scores of the feature critic for one domain, `[B, K]`.
type Scorer<'a> = dyn Fn(&Var, Option<&Var>) -> Result<Var> + 'a;

struct Pair {
    h_s: Var,
    h_t: Var,
    y: Option<(Var, Var)>,
}

fn pair(h_s: &Var, h_t: &Var, masks: Option<(&Var, &Var)>) -> Result<Pair> {
    if h_s.shape()[1..] != h_t.shape()[1..] {
        return Err(Error::Dimension(format!("feature batches {:?} vs {:?}", h_s.shape(), h_t.shape())));
    }
    let (h_s, h_t) = truncate_pair(h_s, h_t)?;
    let y = match masks {
        Some((y_s, y_t)) => {
            let (y_s, y_t) = truncate_pair(&y_s.detach(), &y_t.detach())?;
            if y_s.shape()[0] != h_s.shape()[0] || y_t.shape()[0] != h_t.shape()[0] {
                return Err(Error::Dimension("masks and features disagree on batch size".into()));
            }
            Some((y_s, y_t))
        }
        None => None,
    };
    Ok(Pair { h_s, h_t, y })
}

fn featmatch_d<R: Rng + ?Sized>(score: &Scorer, p: Pair, lambda_gp: f32, rng: &mut R) -> Result<LossValue> {
    let (h_s, h_t) = (p.h_s.detach(), p.h_t.detach());
    let ys = p.y.as_ref().map(|(s, _)| s);
    let yt = p.y.as_ref().map(|(_, t)| t);
    let target = score(&h_t, yt)?.mean_all();
    let source = score(&h_s, ys)?.mean_all();

    let alpha = interpolation_weights(h_s.shape()[0], rng);
    let h_bar = Var::input(interpolate(&h_s.value(), &h_t.value(), &alpha)?);
    let y_bar = match &p.y {
        Some((s, t)) => Some(Var::constant(interpolate(&s.value(), &t.value(), &alpha)?)),
        None => None,
    };
    let penalty = penalty_at(&|h: &Var| score(h, y_bar.as_ref()), &h_bar)?;

    let (t, s, gp) = (target.item(), source.item(), penalty.item());
    let value = target.sub(&source)?.add(&penalty.scale(lambda_gp))?;
    Ok(LossValue::new(value).with("target", t).with("source", s).with("gp", gp))
}

fn featmatch_g(score: &Scorer, p: Pair) -> Result<LossValue> {
    let ys = p.y.as_ref().map(|(s, _)| s);
    let yt = p.y.as_ref().map(|(_, t)| t);
    let source = score(&p.h_s, ys)?.mean_all();
    let target = score(&p.h_t, yt)?.mean_all();
    let (s, t) = (source.item(), target.item());
    Ok(LossValue::new(source.sub(&target)?).with("source", s).with("target", t))
}

fn outcond_scorer<'a>(df: Critic<'a>) -> impl Fn(&Var, Option<&Var>) -> Result<Var> + 'a {
    move |h, y| {
        let y = y.ok_or_else(|| Error::InvalidArgument("class aggregation needs a prediction".into()))?;
        classwise_aggregate(&df(h)?, y)
    }
}

fn incond_scorer<'a>(df: PairCritic<'a>) -> impl Fn(&Var, Option<&Var>) -> Result<Var> + 'a {
    move |h, y| {
        let y = y.ok_or_else(|| Error::InvalidArgument("input-conditioned critic needs a prediction".into()))?;
        df(h, y)
    }
}

fn uncond_scorer<'a>(df: Critic<'a>) -> impl Fn(&Var, Option<&Var>) -> Result<Var> + 'a {
    move |h, _| df(h)
}

/// Critic side of the class-conditional feature matching game. The
/// penalty interpolates features and predictions with the same weights and
/// differentiates with respect to the features only.
pub fn featmatch_outcond_d_loss<R: Rng + ?Sized>(
    df: Critic,
    h_s: &Var,
    h_t: &Var,
    yhat_s: &Var,
    yhat_t: &Var,
    lambda_gp: f32,
    rng: &mut R,
) -> Result<LossValue> {
    featmatch_d(&outcond_scorer(df), pair(h_s, h_t, Some((yhat_s, yhat_t)))?, lambda_gp, rng)
}

/// Encoder side; gradients reach the features but never the predictions.
pub fn featmatch_outcond_g_loss(df: Critic, h_s: &Var, h_t: &Var, yhat_s: &Var, yhat_t: &Var) -> Result<LossValue> {
    featmatch_g(&outcond_scorer(df), pair(h_s, h_t, Some((yhat_s, yhat_t)))?)
}

pub fn featmatch_outcond_losses<R: Rng + ?Sized>(
    df: Critic,
    h_s: &Var,
    h_t: &Var,
    yhat_s: &Var,
    yhat_t: &Var,
    lambda_gp: f32,
    rng: &mut R,
) -> Result<(LossValue, LossValue)> {
    Ok((
        featmatch_outcond_d_loss(df, h_s, h_t, yhat_s, yhat_t, lambda_gp, rng)?,
        featmatch_outcond_g_loss(df, h_s, h_t, yhat_s, yhat_t)?,
    ))
}

pub fn featmatch_uncond_d_loss<R: Rng + ?Sized>(
    df: Critic,
    h_s: &Var,
    h_t: &Var,
    lambda_gp: f32,
    rng: &mut R,
) -> Result<LossValue> {
    featmatch_d(&uncond_scorer(df), pair(h_s, h_t, None)?, lambda_gp, rng)
}

pub fn featmatch_uncond_g_loss(df: Critic, h_s: &Var, h_t: &Var) -> Result<LossValue> {
    featmatch_g(&uncond_scorer(df), pair(h_s, h_t, None)?)
}

pub fn featmatch_uncond_losses<R: Rng + ?Sized>(
    df: Critic,
    h_s: &Var,
    h_t: &Var,
    lambda_gp: f32,
    rng: &mut R,
) -> Result<(LossValue, LossValue)> {
    Ok((
        featmatch_uncond_d_loss(df, h_s, h_t, lambda_gp, rng)?,
        featmatch_uncond_g_loss(df, h_s, h_t)?,
    ))
}

pub fn featmatch_incond_d_loss<R: Rng + ?Sized>(
    df: PairCritic,
    h_s: &Var,
    h_t: &Var,
    yhat_s: &Var,
    yhat_t: &Var,
    lambda_gp: f32,
    rng: &mut R,
) -> Result<LossValue> {
    featmatch_d(&incond_scorer(df), pair(h_s, h_t, Some((yhat_s, yhat_t)))?, lambda_gp, rng)
}

pub fn featmatch_incond_g_loss(df: PairCritic, h_s: &Var, h_t: &Var, yhat_s: &Var, yhat_t: &Var) -> Result<LossValue> {
    featmatch_g(&incond_scorer(df), pair(h_s, h_t, Some((yhat_s, yhat_t)))?)
}

pub fn featmatch_incond_losses<R: Rng + ?Sized>(
    df: PairCritic,
    h_s: &Var,
    h_t: &Var,
    yhat_s: &Var,
    yhat_t: &Var,
    lambda_gp: f32,
    rng: &mut R,
) -> Result<(LossValue, LossValue)> {
    Ok((
        featmatch_incond_d_loss(df, h_s, h_t, yhat_s, yhat_t, lambda_gp, rng)?,
        featmatch_incond_g_loss(df, h_s, h_t, yhat_s, yhat_t)?,
    ))
}

/// Names of the parts combined by [`compose_objectives`].
pub mod part {
    pub const RF_G: &str = "rf_g";
    pub const RF_D: &str = "rf_d";
    pub const DOM_G: &str = "dom_g";
    pub const DOM_D: &str = "dom_d";
    pub const CYC: &str = "cyc";
    pub const SEGM: &str = "segm";
    pub const DOM_F_G: &str = "dom_f_g";
    pub const DOM_F_D: &str = "dom_f_d";
}

pub type Parts = BTreeMap<&'static str, LossValue>;

fn weighted_sum(terms: &[(&'static str, f32)], parts: &Parts) -> Result<LossValue> {
    let mut total: Option<Var> = None;
    let mut components = BTreeMap::new();
    for &(name, lambda) in terms {
        let p = parts
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing loss part '{name}'")))?;
        components.insert(name.to_string(), p.item());
        for (k, v) in &p.components {
            components.insert(format!("{name}.{k}"), *v);
        }
        let term = p.value.scale(lambda);
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    let value = total.unwrap_or_else(|| Var::constant(Tensor::scalar(0.0)));
    Ok(LossValue { value, components })
}

fn gs_terms(variant: Variant, l: &LambdaSet) -> Result<Vec<(&'static str, f32)>> {
    let translation = [(part::RF_G, l.rf), (part::DOM_G, l.dom), (part::CYC, l.cyc)];
    Ok(match variant {
        Variant::Fcn => vec![(part::SEGM, l.segm)],
        Variant::StarganTranslate => translation.to_vec(),
        Variant::SganS => [&translation[..], &[(part::SEGM, l.segm)]].concat(),
        Variant::Uncond | Variant::InCond | Variant::OutCond => {
            [&translation[..], &[(part::SEGM, l.segm), (part::DOM_F_G, l.dom_f)]].concat()
        }
        Variant::CycleganTranslate => {
            return Err(Error::InvalidArgument("cyclegan_translate has its own objective".into()))
        }
    })
}

/// Objective of the generator and segmenter.
pub fn compose_gs(variant: Variant, lambdas: &LambdaSet, parts: &Parts) -> Result<LossValue> {
    weighted_sum(&gs_terms(variant, lambdas)?, parts)
}

/// Objective of the StarGAN critic; `None` for the FCN baseline.
pub fn compose_d(variant: Variant, lambdas: &LambdaSet, parts: &Parts) -> Result<Option<LossValue>> {
    match variant {
        Variant::Fcn => Ok(None),
        Variant::CycleganTranslate => Err(Error::InvalidArgument("cyclegan_translate has its own objective".into())),
        _ => weighted_sum(&[(part::RF_D, lambdas.rf), (part::DOM_D, lambdas.dom)], parts).map(Some),
    }
}

/// Objective of the feature critic, unweighted; `None` without one.
pub fn compose_df(variant: Variant, parts: &Parts) -> Result<Option<LossValue>> {
    if !variant.has_feature_critic() {
        return Ok(None);
    }
    weighted_sum(&[(part::DOM_F_D, 1.0)], parts).map(Some)
}

/// `(loss_GS, loss_D, loss_Df)` for one variant.
pub fn compose_objectives(
    variant: Variant,
    lambdas: &LambdaSet,
    parts: &Parts,
) -> Result<(LossValue, Option<LossValue>, Option<LossValue>)> {
    Ok((
        compose_gs(variant, lambdas, parts)?,
        compose_d(variant, lambdas, parts)?,
        compose_df(variant, parts)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn var(shape: &[usize], data: &[f32]) -> Var {
        Var::input(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    fn close(a: f32, b: f32, tol: f32) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn soft_iou_examples() {
        let t = var(&[1, 1, 2, 2], &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(soft_iou_loss(&t, &t).unwrap().item(), 0.0);
        let zero = var(&[1, 1, 2, 2], &[0.0; 4]);
        assert!(close(soft_iou_loss(&zero, &t).unwrap().item(), 1.0, 1e-6));
        let half = var(&[1, 1, 2, 2], &[0.5; 4]);
        assert!(close(soft_iou_loss(&half, &t).unwrap().item(), 2.0 / 3.0, 1e-6));
        assert!(soft_iou_loss(&half, &var(&[1, 1, 1, 4], &[0.0; 4])).is_err());
    }

    #[test]
    fn pixel_ce_examples() {
        let y = var(&[1, 2, 1, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert!(pixel_ce_loss(&y, &y).unwrap().item() < 1e-6);
        let half = var(&[1, 2, 1, 2], &[0.5; 4]);
        assert!(close(pixel_ce_loss(&half, &y).unwrap().item(), std::f32::consts::LN_2, 1e-6));
        let wrong = var(&[1, 1, 1, 1], &[0.0]);
        let big = pixel_ce_loss(&wrong, &var(&[1, 1, 1, 1], &[1.0])).unwrap().item();
        assert!(big.is_finite() && close(big, -(LOG_CLAMP.ln()), 1e-3));
    }

    #[test]
    fn lsgan_examples() {
        let ones = var(&[2, 1], &[1.0, 1.0]);
        let zeros = var(&[2, 1], &[0.0, 0.0]);
        let halves = var(&[2, 1], &[0.5, 0.5]);
        assert_eq!(lsgan_d_loss(&ones, &zeros).unwrap().item(), 0.0);
        assert_eq!(lsgan_g_loss(&ones).unwrap().item(), 0.0);
        assert!(close(lsgan_d_loss(&halves, &halves).unwrap().item(), 0.5, 1e-7));
        assert!(lsgan_g_loss(&var(&[0, 1], &[])).is_err());
    }

    #[test]
    fn cycle_examples() {
        let x = var(&[1, 1, 2, 2], &[0.1, -0.2, 0.3, 0.9]);
        assert_eq!(cycle_loss(&x, &x).unwrap().item(), 0.0);
        let shifted = x.add_scalar(0.1);
        assert!(close(cycle_loss(&x, &shifted).unwrap().item(), 0.1, 1e-6));
    }

    #[test]
    fn penalty_of_constant_and_projection_critics() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let real = var(&[3, 2, 2, 2], &[0.3; 24]);
        let fake = var(&[3, 2, 2, 2], &[-0.6; 24]);
        let constant = |x: &Var| -> Result<Var> {
            let b = x.shape()[0];
            Ok(Var::constant(Tensor::full(&[b, 1], 0.7)))
        };
        let p = gradient_penalty(&constant, &real, &fake, &mut rng).unwrap().item();
        assert!(close(p, 1.0, 1e-5));
        let first = |x: &Var| -> Result<Var> {
            let b = x.shape()[0];
            Ok(x.reshape(&[b, 8])?.narrow(1, 0, 1)?)
        };
        let p = gradient_penalty(&first, &real, &fake, &mut rng).unwrap().item();
        assert!(close(p, 0.0, 1e-6));
        let broken = |x: &Var| -> Result<Var> { Ok(x.sum_all()) };
        assert!(gradient_penalty(&broken, &real, &fake, &mut rng).is_err());
    }

    #[test]
    fn wgan_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real = var(&[2, 1, 2, 2], &[0.5; 8]);
        let fake = var(&[2, 1, 2, 2], &[-0.5; 8]);
        let zero = |x: &Var| -> Result<Var> {
            let b = x.shape()[0];
            Ok(x.reshape(&[b, 4])?.scale(0.0).sum_axes(&[1])?)
        };
        let (d, g) = wgan_rf_losses(&zero, &real, &fake, 10.0, &mut rng).unwrap();
        assert!(close(d.item(), 10.0, 1e-4));
        assert_eq!(g.item(), 0.0);

        // sum critic: gradient is all ones, norm sqrt(N)
        let sum = |x: &Var| -> Result<Var> {
            let b = x.shape()[0];
            Ok(x.reshape(&[b, 4])?.sum_axes(&[1])?)
        };
        let (d, g) = wgan_rf_losses(&sum, &real, &fake, 1.0, &mut rng).unwrap();
        assert!(close(d.components["gp"], 1.0, 1e-5));
        assert!(close(d.item(), -2.0 - 2.0 + 1.0, 1e-5));
        assert!(close(g.item(), 2.0, 1e-6));
    }

    #[test]
    fn domain_examples() {
        use DomainLabel::{Source, Target};
        let confident = var(&[2, 2], &[20.0, -20.0, -20.0, 20.0]);
        let (d, _) = domain_cls_losses(&confident, &[Source, Target], &confident, &[Source, Target]).unwrap();
        assert!(d.item() < 1e-6);
        let uniform = var(&[2, 2], &[0.3, 0.3, -1.0, -1.0]);
        assert!(close(domain_cross_entropy(&uniform, &[Source, Target]).unwrap().item(), std::f32::consts::LN_2, 1e-6));
        let logits = var(&[2, 2], &[1.0, -0.5, 0.2, 0.9]);
        let right = domain_cross_entropy(&logits, &[Source, Target]).unwrap().item();
        let swapped = domain_cross_entropy(&logits, &[Target, Source]).unwrap().item();
        assert!(swapped > right);
    }

    #[test]
    fn aggregate_examples() {
        let d = var(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = var(&[1, 1, 2, 2], &[1.0, 1.0, 0.0, 0.0]);
        let s = classwise_aggregate(&d, &y).unwrap().value();
        assert!(close(s.data()[0], 3.5, 1e-6) && close(s.data()[1], 1.5, 1e-6));
        let flat = var(&[1, 1, 2, 2], &[0.7; 4]);
        let y = var(&[1, 1, 2, 2], &[0.2, 0.9, 0.4, 0.6]);
        for v in classwise_aggregate(&flat, &y).unwrap().value().data() {
            assert!(close(*v, 0.7, 1e-6));
        }
        let one = var(&[1, 1, 2, 2], &[0.0, 0.0, 1.0, 0.0]);
        assert!(close(classwise_aggregate(&d, &one).unwrap().value().data()[1], 3.0, 1e-6));
    }

    #[test]
    fn lambda_defaults_and_validation() {
        assert_eq!(LambdaSet::for_variant(Variant::OutCond).gp, 2.0);
        assert_eq!(LambdaSet::for_variant(Variant::SganS).gp, 10.0);
        assert_eq!(LambdaSet::for_variant(Variant::Uncond).gp, 5.0);
        assert_eq!(LambdaSet::for_variant(Variant::InCond).gp, 1.0);
        let bad = LambdaSet { cyc: -1.0, ..LambdaSet::zero() };
        assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
    }

    fn parts() -> Parts {
        let names = [
            part::RF_G,
            part::RF_D,
            part::DOM_G,
            part::DOM_D,
            part::CYC,
            part::SEGM,
            part::DOM_F_G,
            part::DOM_F_D,
        ];
        names
            .iter()
            .enumerate()
            .map(|(i, n)| (*n, LossValue::new(Var::constant(Tensor::scalar(1.0 + i as f32)))))
            .collect()
    }

    #[test]
    fn compose_variant_filters() {
        let p = parts();
        let unit = LambdaSet {
            rf: 1.0,
            dom: 1.0,
            cyc: 1.0,
            segm: 1.0,
            dom_f: 1.0,
            gp: 1.0,
        };
        let (gs, d, df) = compose_objectives(Variant::Fcn, &LambdaSet::for_variant(Variant::Fcn), &p).unwrap();
        assert_eq!(gs.item(), 6.0);
        assert!(d.is_none() && df.is_none());

        let (gs, d, df) = compose_objectives(Variant::OutCond, &unit, &p).unwrap();
        assert_eq!(gs.item(), 1.0 + 3.0 + 5.0 + 6.0 + 7.0);
        assert_eq!(d.unwrap().item(), 2.0 + 4.0);
        assert_eq!(df.unwrap().item(), 8.0);

        let (gs, _, df) = compose_objectives(Variant::SganS, &unit, &p).unwrap();
        assert_eq!(gs.item(), 1.0 + 3.0 + 5.0 + 6.0);
        assert!(df.is_none());

        // the feature critic's objective carries no weight of its own
        let (gs, d, df) = compose_objectives(Variant::OutCond, &LambdaSet::zero(), &p).unwrap();
        assert_eq!((gs.item(), d.unwrap().item()), (0.0, 0.0));
        assert_eq!(df.unwrap().item(), 8.0);

        let mut missing = p.clone();
        missing.remove(part::CYC);
        assert!(compose_gs(Variant::SganS, &unit, &missing).is_err());
    }
}
