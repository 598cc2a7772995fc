//! One optimization iteration and one validation pass of each model family.

use std::collections::BTreeMap;

use autograd::{no_grad, Tensor, Var};

use super::config::Group;
use super::log::{LogRecord, StepLog};
use super::models::{CycleGanSet, FeatureCritic, Models, StarGanSet};
use super::run::{update, Datasets, Trainer};
use crate::data::loader::{Batch, SplitData};
use crate::data::DomainLabel;
use crate::error::{Error, Result};
use crate::losses::{self, part, LambdaSet, LossValue, Parts};
use crate::variant::Variant;

pub const PHASE_SEGMENTER: &str = "s";
pub const PHASE_CRITIC: &str = "d";
pub const PHASE_FEATURE_CRITIC: &str = "df";
pub const PHASE_GENERATOR: &str = "g";

fn record(step: u64, epoch: u64, phase: &str, loss: &LossValue, lr: f32) -> LogRecord {
    let mut components = loss.components.clone();
    components.insert("total".into(), loss.item());
    LogRecord {
        step,
        epoch,
        phase: phase.into(),
        components,
        lr: Some(lr),
    }
}

fn images(b: &Batch) -> Var {
    Var::constant(b.images.clone())
}

fn masks(b: &Batch) -> Result<Var> {
    b.masks
        .clone()
        .map(Var::constant)
        .ok_or_else(|| Error::InvalidArgument("batch was loaded without masks".into()))
}

fn target_batch(tgt: Option<&Batch>) -> Result<&Batch> {
    tgt.ok_or_else(|| Error::InvalidArgument("this variant needs a target batch".into()))
}

pub(crate) fn train_step(t: &mut Trainer, src: &Batch, tgt: Option<&Batch>, log: &mut StepLog) -> Result<()> {
    match &t.models {
        Models::Fcn(_) => fcn_step(t, src, log),
        Models::CycleGan(_) => cyclegan_step(t, src, target_batch(tgt)?, log),
        Models::StarGan(_) => stargan_step(t, src, target_batch(tgt)?, log),
    }
}

fn is_generator_step(t: &Trainer) -> bool {
    (t.progress.global_step + 1).is_multiple_of(t.cfg.d_steps_per_g_step)
}

fn fcn_step(t: &mut Trainer, src: &Batch, log: &mut StepLog) -> Result<()> {
    let Trainer {
        cfg,
        models,
        groups,
        progress,
        ..
    } = t;
    let Models::Fcn(s) = models else { unreachable!() };
    let y = s.forward(&images(src))?;
    let parts = Parts::from([(part::SEGM, losses::soft_iou_loss(&y, &masks(src)?)?)]);
    let loss = losses::compose_gs(Variant::Fcn, &cfg.lambdas, &parts)?;
    let lr = update(groups, &loss.value, &[Group::Segmenter], progress.global_step, progress.epoch)?;
    log.write(&record(progress.global_step, progress.epoch, PHASE_SEGMENTER, &loss, lr))
}

fn cyclegan_step(t: &mut Trainer, src: &Batch, tgt: &Batch, log: &mut StepLog) -> Result<()> {
    let g_step = is_generator_step(t);
    let Trainer {
        cfg,
        models,
        groups,
        progress,
        ..
    } = t;
    let Models::CycleGan(CycleGanSet { g_ab, g_ba, d_a, d_b }) = models else {
        unreachable!()
    };
    let (a, b) = (images(src), images(tgt));
    let fake_b = g_ab.forward(&a)?;
    let fake_a = g_ba.forward(&b)?;
    if g_step {
        let adv_ab = losses::lsgan_g_loss(&d_b.forward(&fake_b)?)?;
        let adv_ba = losses::lsgan_g_loss(&d_a.forward(&fake_a)?)?;
        let cyc_a = losses::cycle_loss(&a, &g_ba.forward(&fake_b)?)?;
        let cyc_b = losses::cycle_loss(&b, &g_ab.forward(&fake_a)?)?;
        let l = &cfg.lambdas;
        let value = adv_ab
            .value
            .add(&adv_ba.value)?
            .scale(l.rf)
            .add(&cyc_a.value.add(&cyc_b.value)?.scale(l.cyc))?;
        let mut loss = LossValue::new(value);
        for (k, v) in [("g_ab", &adv_ab), ("g_ba", &adv_ba), ("cyc_a", &cyc_a), ("cyc_b", &cyc_b)] {
            loss.components.insert(k.into(), v.item());
        }
        let lr = update(groups, &loss.value, &[Group::Generator], progress.global_step, progress.epoch)?;
        log.write(&record(progress.global_step, progress.epoch, PHASE_GENERATOR, &loss, lr))?;
    }
    let d_a_loss = losses::lsgan_d_loss(&d_a.forward(&a)?, &d_a.forward(&fake_a.detach())?)?;
    let d_b_loss = losses::lsgan_d_loss(&d_b.forward(&b)?, &d_b.forward(&fake_b.detach())?)?;
    let mut loss = LossValue::new(d_a_loss.value.add(&d_b_loss.value)?);
    for (name, v) in [("d_a", &d_a_loss), ("d_b", &d_b_loss)] {
        loss.components.insert(name.into(), v.item());
        for (k, c) in &v.components {
            loss.components.insert(format!("{name}.{k}"), *c);
        }
    }
    let lr = update(groups, &loss.value, &[Group::Discriminator], progress.global_step, progress.epoch)?;
    log.write(&record(progress.global_step, progress.epoch, PHASE_CRITIC, &loss, lr))
}

fn labels(n: usize, l: DomainLabel) -> Vec<DomainLabel> {
    vec![l; n]
}

/// Source and target images as one batch with their own and their
/// translation labels.
struct Joint {
    x: Var,
    own: Vec<DomainLabel>,
    other: Vec<DomainLabel>,
}

fn joint(x_s: &Var, x_t: &Var) -> Result<Joint> {
    let (ns, nt) = (x_s.shape()[0], x_t.shape()[0]);
    let own: Vec<DomainLabel> = [labels(ns, DomainLabel::Source), labels(nt, DomainLabel::Target)].concat();
    let other = own.iter().map(|l| l.other()).collect();
    Ok(Joint {
        x: Var::concat(&[x_s.clone(), x_t.clone()], 0)?,
        own,
        other,
    })
}

fn feature_d_loss<R: rand::Rng + ?Sized>(
    critic: &FeatureCritic,
    h_s: &Var,
    h_t: &Var,
    y_s: &Var,
    y_t: &Var,
    lambda_gp: f32,
    rng: &mut R,
) -> Result<LossValue> {
    match critic {
        FeatureCritic::Outcond(n) => losses::featmatch_outcond_d_loss(&|h| n.forward(h), h_s, h_t, y_s, y_t, lambda_gp, rng),
        FeatureCritic::Uncond(n) => losses::featmatch_uncond_d_loss(&|h| n.forward(h), h_s, h_t, lambda_gp, rng),
        FeatureCritic::Incond(n) => {
            losses::featmatch_incond_d_loss(&|h, s| n.forward(h, s), h_s, h_t, y_s, y_t, lambda_gp, rng)
        }
    }
}

fn feature_g_loss(critic: &FeatureCritic, h_s: &Var, h_t: &Var, y_s: &Var, y_t: &Var) -> Result<LossValue> {
    match critic {
        FeatureCritic::Outcond(n) => losses::featmatch_outcond_g_loss(&|h| n.forward(h), h_s, h_t, y_s, y_t),
        FeatureCritic::Uncond(n) => losses::featmatch_uncond_g_loss(&|h| n.forward(h), h_s, h_t),
        FeatureCritic::Incond(n) => losses::featmatch_incond_g_loss(&|h, s| n.forward(h, s), h_s, h_t, y_s, y_t),
    }
}

/// Critic losses of one iteration. The generator and segmenter run without
/// a graph, so only the critics receive gradients.
fn stargan_critic_parts<R: rand::Rng + ?Sized>(
    m: &StarGanSet,
    j: &Joint,
    x_s: &Var,
    x_t: &Var,
    lambdas: &LambdaSet,
    rng: &mut R,
) -> Result<(Parts, Option<LossValue>)> {
    let fake = no_grad(|| m.generator.translate(&j.x, &j.other))?;
    let d = &m.discriminator;
    let (rf_real, dom_real) = d.forward(&j.x)?;
    let rf_fake = d.critic(&fake)?;
    let penalty = losses::gradient_penalty(&|v| d.critic(v), &j.x, &fake, rng)?;
    let mut parts = Parts::new();
    parts.insert(part::RF_D, losses::wgan_d_from_scores(&rf_real, &rf_fake, &penalty, lambdas.gp)?);
    parts.insert(part::DOM_D, losses::domain_cross_entropy(&dom_real, &j.own)?);
    let feature = match (&m.critic, &m.decoder) {
        (Some(critic), Some(decoder)) => {
            let (h_s, h_t, y_s, y_t) = no_grad(|| -> Result<_> {
                let h_s = m.generator.encode(x_s, &labels(x_s.shape()[0], DomainLabel::Source))?;
                let h_t = m.generator.encode(x_t, &labels(x_t.shape()[0], DomainLabel::Source))?;
                let (y_s, y_t) = (decoder.forward(&h_s)?, decoder.forward(&h_t)?);
                Ok((h_s, h_t, y_s, y_t))
            })?;
            Some(feature_d_loss(critic, &h_s, &h_t, &y_s, &y_t, lambdas.gp, rng)?)
        }
        _ => None,
    };
    Ok((parts, feature))
}

/// Generator and segmenter losses of one iteration.
fn stargan_generator_parts(m: &StarGanSet, j: &Joint, x_s: &Var, x_t: &Var, src: &Batch) -> Result<Parts> {
    let g = &m.generator;
    let fake = g.translate(&j.x, &j.other)?;
    let rec = g.translate(&fake, &j.own)?;
    let (rf_fake, dom_fake) = m.discriminator.forward(&fake)?;
    let mut parts = Parts::new();
    parts.insert(part::RF_G, losses::wgan_g_from_scores(&rf_fake));
    parts.insert(part::DOM_G, losses::domain_cross_entropy(&dom_fake, &j.other)?);
    parts.insert(part::CYC, losses::cycle_loss(&j.x, &rec)?);
    if let Some(decoder) = &m.decoder {
        // both domains are encoded under the source label
        let h_s = g.encode(x_s, &labels(x_s.shape()[0], DomainLabel::Source))?;
        let y_s = decoder.forward(&h_s)?;
        parts.insert(part::SEGM, losses::soft_iou_loss(&y_s, &masks(src)?)?);
        if let Some(critic) = &m.critic {
            let h_t = g.encode(x_t, &labels(x_t.shape()[0], DomainLabel::Source))?;
            let y_t = decoder.forward(&h_t)?;
            parts.insert(part::DOM_F_G, feature_g_loss(critic, &h_s, &h_t, &y_s, &y_t)?);
        }
    }
    Ok(parts)
}

fn stargan_step(t: &mut Trainer, src: &Batch, tgt: &Batch, log: &mut StepLog) -> Result<()> {
    let g_step = is_generator_step(t);
    let Trainer {
        cfg,
        models,
        groups,
        progress,
        gp,
        ..
    } = t;
    let Models::StarGan(m) = models else { unreachable!() };
    let (step, epoch) = (progress.global_step, progress.epoch);
    let (x_s, x_t) = (images(src), images(tgt));
    let j = joint(&x_s, &x_t)?;

    let (mut parts, feature) = stargan_critic_parts(m, &j, &x_s, &x_t, &cfg.lambdas, gp)?;
    let loss_d = losses::compose_d(cfg.variant, &cfg.lambdas, &parts)?
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no image critic", cfg.variant)))?;
    let lr = update(groups, &loss_d.value, &[Group::Discriminator], step, epoch)?;
    log.write(&record(step, epoch, PHASE_CRITIC, &loss_d, lr))?;
    if let Some(f) = feature {
        parts.insert(part::DOM_F_D, f);
        if let Some(loss_df) = losses::compose_df(cfg.variant, &parts)? {
            let lr = update(groups, &loss_df.value, &[Group::FeatureCritic], step, epoch)?;
            log.write(&record(step, epoch, PHASE_FEATURE_CRITIC, &loss_df, lr))?;
        }
    }

    if g_step {
        let parts = stargan_generator_parts(m, &j, &x_s, &x_t, src)?;
        let loss = losses::compose_gs(cfg.variant, &cfg.lambdas, &parts)?;
        let which: &[Group] = if m.decoder.is_some() {
            &[Group::Generator, Group::Segmenter]
        } else {
            &[Group::Generator]
        };
        let lr = update(groups, &loss.value, which, step, epoch)?;
        log.write(&record(step, epoch, PHASE_GENERATOR, &loss, lr))?;
    }
    Ok(())
}

/// Index chunks `0..n` in order.
fn chunks(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..n).collect::<Vec<_>>().chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Sample-weighted mean soft-IoU loss of the segmentation head.
pub fn segmentation_loss(models: &Models, data: &SplitData, n: usize, batch_size: usize) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for idx in chunks(n, batch_size) {
        let b = data.batch(&idx, true)?;
        let y = models.segment(&images(&b))?;
        total += losses::soft_iou_loss(&y, &masks(&b)?)?.item() as f64 * idx.len() as f64;
        count += idx.len();
    }
    Ok(total / count.max(1) as f64)
}

/// `(correct, total)` of the domain head on real images of one domain.
pub fn domain_hits(m: &StarGanSet, data: &SplitData, n: usize, batch_size: usize, label: DomainLabel) -> Result<(usize, usize)> {
    let mut correct = 0;
    for idx in chunks(n, batch_size) {
        let (_, logits) = m.discriminator.forward(&Var::constant(data.images(&idx)?))?;
        correct += argmax_rows(&logits.value())
            .into_iter()
            .filter(|&k| k == label.index())
            .count();
    }
    Ok((correct, n))
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let k = t.shape()[1];
    t.data()
        .chunks(k)
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Accuracy of the domain classifier on real validation images of both
/// domains.
pub fn domain_accuracy(m: &StarGanSet, data: &Datasets, batch_size: usize) -> Result<f64> {
    let (mut hit, mut n) = domain_hits(m, &data.source_val, data.val_count, batch_size, DomainLabel::Source)?;
    if let Some(tv) = &data.target_val {
        let (h, c) = domain_hits(m, tv, data.target_val_count, batch_size, DomainLabel::Target)?;
        hit += h;
        n += c;
    }
    Ok(hit as f64 / n.max(1) as f64)
}

/// Validation components and, for segmenting variants, the early-stopping
/// metric (source validation soft-IoU loss). Runs in eval mode.
pub(crate) fn validate(t: &Trainer, data: &Datasets) -> Result<(BTreeMap<String, f32>, Option<f64>)> {
    let bs = t.cfg.batch_size;
    let mut c = BTreeMap::new();
    let mut metric = None;
    if t.cfg.variant.segments() {
        let l = segmentation_loss(&t.models, &data.source_val, data.val_count, bs)?;
        c.insert("segm".to_string(), l as f32);
        metric = Some(l);
    }
    match &t.models {
        Models::StarGan(m) => {
            c.insert("dom_acc".into(), domain_accuracy(m, data, bs)? as f32);
        }
        Models::CycleGan(m) => {
            if let Some(tv) = &data.target_val {
                let n = data.val_count.min(data.target_val_count);
                let (mut total, mut count) = (0.0, 0usize);
                for idx in chunks(n, bs) {
                    let a = Var::constant(data.source_val.images(&idx)?);
                    let b = Var::constant(tv.images(&idx)?);
                    let ca = losses::cycle_loss(&a, &m.g_ba.forward(&m.g_ab.forward(&a)?)?)?.item();
                    let cb = losses::cycle_loss(&b, &m.g_ab.forward(&m.g_ba.forward(&b)?)?)?.item();
                    total += (ca + cb) as f64 * idx.len() as f64;
                    count += idx.len();
                }
                c.insert("cyc".into(), (total / count.max(1) as f64) as f32);
            }
        }
        Models::Fcn(_) => {}
    }
    Ok((c, metric))
}
