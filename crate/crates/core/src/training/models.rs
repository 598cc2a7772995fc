//! The set of networks each variant trains, built from its config.

use autograd::Var;

use super::config::{ExperimentConfig, Group};
use crate::data::loader::MODEL_CHANNELS;
use crate::data::DomainLabel;
use crate::error::{Error, Result};
use crate::nets::arch::{self, NUM_DOMAINS};
use crate::nets::{
    build_feature_disc_incond, build_feature_disc_outcond, build_feature_disc_uncond, CycleGanDiscriminator,
    CycleGanGenerator, FcnSegmenter, FeatureDiscIncond, FeatureDiscOutcond, FeatureDiscUncond, Mode, Network,
    SegDecoder, StarGanDiscriminator, StarGanGenerator,
};
use crate::seeds::stream_seed;
use crate::variant::Variant;

pub enum FeatureCritic {
    Outcond(FeatureDiscOutcond),
    Uncond(FeatureDiscUncond),
    Incond(FeatureDiscIncond),
}

impl FeatureCritic {
    pub fn network(&self) -> &dyn Network {
        match self {
            FeatureCritic::Outcond(n) => n,
            FeatureCritic::Uncond(n) => n,
            FeatureCritic::Incond(n) => n,
        }
    }
}

pub struct CycleGanSet {
    pub g_ab: CycleGanGenerator,
    pub g_ba: CycleGanGenerator,
    pub d_a: CycleGanDiscriminator,
    pub d_b: CycleGanDiscriminator,
}

pub struct StarGanSet {
    pub generator: StarGanGenerator,
    pub discriminator: StarGanDiscriminator,
    pub decoder: Option<SegDecoder>,
    pub critic: Option<FeatureCritic>,
}

pub enum Models {
    Fcn(FcnSegmenter),
    CycleGan(CycleGanSet),
    StarGan(StarGanSet),
}

impl Models {
    /// Fresh networks; each draws its weights from the `init.<name>` stream.
    pub fn build(cfg: &ExperimentConfig) -> Result<Models> {
        let seed = |name: &str| stream_seed(cfg.seed, &format!("init.{name}"));
        let (c, p, r) = (cfg.model.base_channels, cfg.model.dropout, cfg.data.resolution);
        Ok(match cfg.variant {
            Variant::Fcn => Models::Fcn(arch::fcn_segmenter(MODEL_CHANNELS, r, p, c, seed("segmenter"))?),
            Variant::CycleganTranslate => Models::CycleGan(CycleGanSet {
                g_ab: arch::cyclegan_generator(MODEL_CHANNELS, c, seed("g_ab")),
                g_ba: arch::cyclegan_generator(MODEL_CHANNELS, c, seed("g_ba")),
                d_a: arch::cyclegan_discriminator(MODEL_CHANNELS, r, c, seed("d_a"))?,
                d_b: arch::cyclegan_discriminator(MODEL_CHANNELS, r, c, seed("d_b"))?,
            }),
            v => {
                let features = 4 * c;
                let critic = match v {
                    Variant::OutCond => Some(FeatureCritic::Outcond(build_feature_disc_outcond(
                        features,
                        p,
                        seed("feature_critic"),
                    ))),
                    Variant::Uncond => Some(FeatureCritic::Uncond(build_feature_disc_uncond(
                        features,
                        p,
                        seed("feature_critic"),
                    ))),
                    Variant::InCond => Some(FeatureCritic::Incond(build_feature_disc_incond(
                        features,
                        2,
                        p,
                        seed("feature_critic"),
                    )?)),
                    _ => None,
                };
                Models::StarGan(StarGanSet {
                    generator: arch::stargan_generator(MODEL_CHANNELS, NUM_DOMAINS, p, c, seed("generator"))?,
                    discriminator: arch::stargan_discriminator(MODEL_CHANNELS, NUM_DOMAINS, r, c, seed("discriminator"))?,
                    decoder: v.segments().then(|| arch::segmentation_decoder(p, c, seed("segmenter"))),
                    critic,
                })
            }
        })
    }

    /// Every network with its checkpoint name and optimizer group, in a
    /// fixed order.
    pub fn networks(&self) -> Vec<(&'static str, Group, &dyn Network)> {
        match self {
            Models::Fcn(s) => vec![("segmenter", Group::Segmenter, s as &dyn Network)],
            Models::CycleGan(m) => vec![
                ("g_ab", Group::Generator, &m.g_ab as &dyn Network),
                ("g_ba", Group::Generator, &m.g_ba),
                ("d_a", Group::Discriminator, &m.d_a),
                ("d_b", Group::Discriminator, &m.d_b),
            ],
            Models::StarGan(m) => {
                let mut v = vec![
                    ("generator", Group::Generator, &m.generator as &dyn Network),
                    ("discriminator", Group::Discriminator, &m.discriminator),
                ];
                if let Some(d) = &m.decoder {
                    v.push(("segmenter", Group::Segmenter, d));
                }
                if let Some(c) = &m.critic {
                    v.push(("feature_critic", Group::FeatureCritic, c.network()));
                }
                v
            }
        }
    }

    pub fn set_mode(&self, mode: Mode) {
        for (_, _, n) in self.networks() {
            n.set_mode(mode);
        }
    }

    /// Parameters of one optimizer group, in network order.
    pub fn group_parameters(&self, group: Group) -> Vec<Var> {
        self.networks()
            .into_iter()
            .filter(|(_, g, _)| *g == group)
            .flat_map(|(_, _, n)| n.parameter_vars())
            .collect()
    }

    /// Foreground probabilities `[B,1,H,W]` for images `[B,3,H,W]`; the
    /// adapted models encode every input under the source label.
    pub fn segment(&self, images: &Var) -> Result<Var> {
        match self {
            Models::Fcn(s) => s.forward(images),
            Models::StarGan(StarGanSet {
                generator,
                decoder: Some(decoder),
                ..
            }) => {
                let labels = vec![DomainLabel::Source; images.shape()[0]];
                decoder.forward(&generator.encode(images, &labels)?)
            }
            _ => Err(Error::InvalidArgument("this model has no segmenter".into())),
        }
    }
}
