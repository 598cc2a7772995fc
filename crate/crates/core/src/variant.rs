use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Experiment identifier: the two translation-only trainings, the FCN
/// baseline and the four domain-adaptation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Fcn,
    CycleganTranslate,
    StarganTranslate,
    SganS,
    Uncond,
    InCond,
    OutCond,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Fcn,
        Variant::CycleganTranslate,
        Variant::StarganTranslate,
        Variant::SganS,
        Variant::Uncond,
        Variant::InCond,
        Variant::OutCond,
    ];

    /// Row order of the results table.
    pub const SEGMENTATION: [Variant; 5] = [
        Variant::Fcn,
        Variant::SganS,
        Variant::Uncond,
        Variant::InCond,
        Variant::OutCond,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Fcn => "fcn",
            Variant::CycleganTranslate => "cyclegan_translate",
            Variant::StarganTranslate => "stargan_translate",
            Variant::SganS => "sgan_s",
            Variant::Uncond => "uncond",
            Variant::InCond => "in_cond",
            Variant::OutCond => "out_cond",
        }
    }

    /// Variants trained by the joint StarGAN + segmenter loop.
    pub fn is_domain_adaptation(self) -> bool {
        matches!(self, Variant::SganS | Variant::Uncond | Variant::InCond | Variant::OutCond)
    }

    /// Variants with a feature critic D_f.
    pub fn has_feature_critic(self) -> bool {
        matches!(self, Variant::Uncond | Variant::InCond | Variant::OutCond)
    }

    pub fn segments(self) -> bool {
        self == Variant::Fcn || self.is_domain_adaptation()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}
