//! Network architectures behind a uniform handle: named forward, parameter
//! enumeration, train/eval mode, and checkpoint archives.

pub mod archive;
pub mod arch;
pub mod layers;

use std::collections::BTreeMap;

use autograd::Var;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::StreamPosition;

pub use arch::{
    build_cyclegan_discriminator, build_cyclegan_generator, build_fcn_segmenter, build_feature_disc_incond,
    build_feature_disc_outcond, build_feature_disc_uncond, build_segmentation_decoder, build_stargan_discriminator,
    build_stargan_generator, CycleGanDiscriminator, CycleGanGenerator, FcnSegmenter, FeatureDiscIncond,
    FeatureDiscOutcond, FeatureDiscUncond, SegDecoder, StarGanDiscriminator, StarGanGenerator,
};
pub use layers::Mode;

pub type Named = BTreeMap<String, Var>;

/// Construction arguments of every architecture; stored in checkpoints so
/// a network can be rebuilt before its weights are loaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchSpec {
    FcnSegmenter {
        in_channels: usize,
        resolution: usize,
        dropout: f32,
        #[serde(default = "reference_width")]
        base_channels: usize,
    },
    SegDecoder {
        dropout: f32,
        #[serde(default = "reference_width")]
        base_channels: usize,
    },
    StarganGenerator {
        image_channels: usize,
        num_domains: usize,
        dropout: f32,
        #[serde(default = "reference_width")]
        base_channels: usize,
    },
    StarganDiscriminator {
        image_channels: usize,
        num_domains: usize,
        resolution: usize,
        #[serde(default = "reference_width")]
        base_channels: usize,
    },
    CycleganGenerator {
        image_channels: usize,
        #[serde(default = "reference_width")]
        base_channels: usize,
    },
    CycleganDiscriminator {
        image_channels: usize,
        resolution: usize,
        #[serde(default = "reference_width")]
        base_channels: usize,
    },
    FeatureDiscOutcond { feature_channels: usize, dropout: f32 },
    FeatureDiscUncond { feature_channels: usize, dropout: f32 },
    FeatureDiscIncond { feature_channels: usize, num_classes: usize, dropout: f32 },
}

fn reference_width() -> usize {
    arch::BASE_CHANNELS
}

/// Summary row for a parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

pub trait Network {
    fn spec(&self) -> &ArchSpec;

    /// Named parameter leaves in a fixed order.
    fn parameters(&self) -> &[(String, Var)];

    fn set_mode(&self, mode: Mode);

    fn mode(&self) -> Mode;

    fn dropout_position(&self) -> StreamPosition;

    fn restore_dropout(&self, pos: StreamPosition);

    fn input_names(&self) -> &'static [&'static str];

    /// Evaluate the network on named inputs.
    fn forward_named(&self, inputs: &Named) -> Result<Named>;

    fn parameter_vars(&self) -> Vec<Var> {
        self.parameters().iter().map(|(_, v)| v.clone()).collect()
    }

    fn parameter_info(&self) -> Vec<ParamInfo> {
        self.parameters()
            .iter()
            .map(|(name, v)| ParamInfo {
                name: name.clone(),
                shape: v.shape(),
                count: v.numel(),
            })
            .collect()
    }
}

/// Total number of learnable scalars.
pub fn count_parameters(net: &dyn Network) -> usize {
    net.parameters().iter().map(|(_, v)| v.numel()).sum()
}

pub(crate) fn take_input<'a>(inputs: &'a Named, name: &str) -> Result<&'a Var> {
    inputs
        .get(name)
        .ok_or_else(|| Error::InvalidArgument(format!("missing network input '{name}'")))
}

pub(crate) fn named(pairs: Vec<(&str, Var)>) -> Named {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Build an untrained network from its construction arguments.
pub fn build(spec: &ArchSpec, seed: u64) -> Result<Box<dyn Network>> {
    Ok(match *spec {
        ArchSpec::FcnSegmenter {
            in_channels,
            resolution,
            dropout,
            base_channels,
        } => Box::new(arch::fcn_segmenter(in_channels, resolution, dropout, base_channels, seed)?),
        ArchSpec::SegDecoder { dropout, base_channels } => {
            Box::new(arch::segmentation_decoder(dropout, base_channels, seed))
        }
        ArchSpec::StarganGenerator {
            image_channels,
            num_domains,
            dropout,
            base_channels,
        } => Box::new(arch::stargan_generator(image_channels, num_domains, dropout, base_channels, seed)?),
        ArchSpec::StarganDiscriminator {
            image_channels,
            num_domains,
            resolution,
            base_channels,
        } => Box::new(arch::stargan_discriminator(
            image_channels,
            num_domains,
            resolution,
            base_channels,
            seed,
        )?),
        ArchSpec::CycleganGenerator {
            image_channels,
            base_channels,
        } => Box::new(arch::cyclegan_generator(image_channels, base_channels, seed)),
        ArchSpec::CycleganDiscriminator {
            image_channels,
            resolution,
            base_channels,
        } => Box::new(arch::cyclegan_discriminator(image_channels, resolution, base_channels, seed)?),
        ArchSpec::FeatureDiscOutcond {
            feature_channels,
            dropout,
        } => Box::new(build_feature_disc_outcond(feature_channels, dropout, seed)),
        ArchSpec::FeatureDiscUncond {
            feature_channels,
            dropout,
        } => Box::new(build_feature_disc_uncond(feature_channels, dropout, seed)),
        ArchSpec::FeatureDiscIncond {
            feature_channels,
            num_classes,
            dropout,
        } => Box::new(build_feature_disc_incond(feature_channels, num_classes, dropout, seed)?),
    })
}
