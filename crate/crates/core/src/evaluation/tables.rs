//! The segmentation results table and the parameter-count table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{SegReport, CLASS_NAMES};
use crate::data::DomainLabel;
use crate::error::{Error, Result};
use crate::nets::{arch, build, count_parameters, ArchSpec, Network};
use crate::variant::Variant;

pub const RESULTS_HEADER: [&str; 7] = [
    "variant",
    "src_iou_back",
    "src_iou_digit",
    "src_miou",
    "tgt_iou_back",
    "tgt_iou_digit",
    "tgt_miou",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: Variant,
    /// Source background, digit, mean; then the same for the target.
    /// `None` where no report was given.
    pub values: [Option<f64>; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

/// One row per segmenting variant that has at least one report, in the
/// order fcn, sgan_s, uncond, in_cond, out_cond.
pub fn results_table(reports: &[SegReport]) -> Result<ResultsTable> {
    if let Some(r) = reports.iter().find(|r| !Variant::SEGMENTATION.contains(&r.variant)) {
        return Err(Error::InvalidArgument(format!("{} does not segment", r.variant)));
    }
    let mut rows = Vec::new();
    for v in Variant::SEGMENTATION {
        let mut values = [None; 6];
        let mut any = false;
        for r in reports.iter().filter(|r| r.variant == v) {
            let offset = if r.domain == DomainLabel::Source { 0 } else { 3 };
            if values[offset + 2].is_some() {
                return Err(Error::InvalidArgument(format!(
                    "two {:?} reports for {v}",
                    r.domain
                )));
            }
            for (i, class) in CLASS_NAMES.iter().enumerate() {
                values[offset + i] = r.class_iou(class);
            }
            values[offset + 2] = Some(r.miou);
            any = true;
        }
        if any {
            rows.push(ResultRow { variant: v, values });
        }
    }
    Ok(ResultsTable { rows })
}

impl ResultsTable {
    pub fn to_csv(&self) -> String {
        let mut out = RESULTS_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(r.variant.as_str());
            for v in r.values {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or_default();
        if header.split(',').collect::<Vec<_>>() != RESULTS_HEADER {
            return Err(Error::InvalidArgument(format!("unexpected results header '{header}'")));
        }
        let rows = lines
            .map(|line| {
                let cells: Vec<&str> = line.split(',').collect();
                if cells.len() != RESULTS_HEADER.len() {
                    return Err(Error::InvalidArgument(format!("row '{line}' has {} cells", cells.len())));
                }
                let mut values = [None; 6];
                for (slot, cell) in values.iter_mut().zip(&cells[1..]) {
                    if !cell.is_empty() {
                        *slot = Some(
                            cell.parse::<f64>()
                                .map_err(|e| Error::InvalidArgument(format!("cell '{cell}': {e}")))?,
                        );
                    }
                }
                Ok(ResultRow {
                    variant: cells[0].parse()?,
                    values,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ResultsTable { rows })
    }

    /// Fixed-width text with three decimals.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<10}", RESULTS_HEADER[0]);
        for h in &RESULTS_HEADER[1..] {
            let _ = write!(out, " {h:>13}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<10}", r.variant.as_str());
            for v in r.values {
                match v {
                    Some(v) => {
                        let _ = write!(out, " {v:>13.3}");
                    }
                    None => {
                        let _ = write!(out, " {:>13}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Counts reported for the published reference networks.
pub fn published_count(spec: &ArchSpec) -> Option<usize> {
    let reference = arch::BASE_CHANNELS;
    match *spec {
        ArchSpec::StarganGenerator {
            image_channels: 3,
            num_domains: 2,
            base_channels,
            ..
        } if base_channels == reference => Some(197_504),
        ArchSpec::StarganDiscriminator {
            image_channels: 3,
            num_domains: 2,
            resolution: 64,
            base_channels,
        } if base_channels == reference => Some(694_496),
        ArchSpec::CycleganGenerator {
            image_channels: 3,
            base_channels,
        } if base_channels == reference => Some(194_051),
        ArchSpec::CycleganDiscriminator {
            image_channels: 3,
            resolution: 64,
            base_channels,
        } if base_channels == reference => Some(694_241),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    pub count: usize,
    pub published: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTable {
    pub rows: Vec<ParamRow>,
    pub stargan_total: usize,
    pub cyclegan_total: usize,
    /// StarGAN total over CycleGAN total; `None` unless both are present.
    pub ratio: Option<f64>,
}

pub fn param_table(nets: &[(&str, &dyn Network)]) -> ParamTable {
    let mut rows = Vec::new();
    let (mut star, mut cycle) = (0, 0);
    for (name, net) in nets {
        let count = count_parameters(*net);
        match net.spec() {
            ArchSpec::StarganGenerator { .. } | ArchSpec::StarganDiscriminator { .. } => star += count,
            ArchSpec::CycleganGenerator { .. } | ArchSpec::CycleganDiscriminator { .. } => cycle += count,
            _ => {}
        }
        rows.push(ParamRow {
            name: name.to_string(),
            count,
            published: published_count(net.spec()),
        });
    }
    ParamTable {
        rows,
        stargan_total: star,
        cyclegan_total: cycle,
        ratio: (star > 0 && cycle > 0).then(|| star as f64 / cycle as f64),
    }
}

/// The two translation systems at the reference configuration: one StarGAN
/// generator and critic, two CycleGAN generators and critics.
pub fn reference_networks() -> Result<Vec<(String, Box<dyn Network>)>> {
    let c = arch::BASE_CHANNELS;
    let specs = [
        (
            "stargan_g",
            ArchSpec::StarganGenerator {
                image_channels: 3,
                num_domains: 2,
                dropout: 0.0,
                base_channels: c,
            },
        ),
        (
            "stargan_d",
            ArchSpec::StarganDiscriminator {
                image_channels: 3,
                num_domains: 2,
                resolution: 64,
                base_channels: c,
            },
        ),
        (
            "cyclegan_g_ab",
            ArchSpec::CycleganGenerator {
                image_channels: 3,
                base_channels: c,
            },
        ),
        (
            "cyclegan_g_ba",
            ArchSpec::CycleganGenerator {
                image_channels: 3,
                base_channels: c,
            },
        ),
        (
            "cyclegan_d_a",
            ArchSpec::CycleganDiscriminator {
                image_channels: 3,
                resolution: 64,
                base_channels: c,
            },
        ),
        (
            "cyclegan_d_b",
            ArchSpec::CycleganDiscriminator {
                image_channels: 3,
                resolution: 64,
                base_channels: c,
            },
        ),
    ];
    specs
        .into_iter()
        .enumerate()
        .map(|(i, (name, spec))| Ok((name.to_string(), build(&spec, i as u64)?)))
        .collect()
}

impl ParamTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("network,parameters,published\n");
        for r in &self.rows {
            let published = r.published.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{published}", r.name, r.count);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<16} {:>12} {:>12} {:>8}\n", "network", "parameters", "published", "delta");
        for r in &self.rows {
            let (published, delta) = match r.published {
                Some(p) => (p.to_string(), format!("{:+}", r.count as i64 - p as i64)),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(out, "{:<16} {:>12} {published:>12} {delta:>8}", r.name, r.count);
        }
        let _ = writeln!(out, "stargan total   {:>12}", self.stargan_total);
        let _ = writeln!(out, "cyclegan total  {:>12}", self.cyclegan_total);
        if let Some(ratio) = self.ratio {
            let _ = writeln!(out, "ratio           {ratio:>12.4}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::path::PathBuf;

    use super::*;
    use crate::data::build::{DatasetManifest, Recipe};
    use crate::data::{DatasetName, Split};

    fn report(variant: Variant, domain: DomainLabel, back: f64, digit: f64) -> SegReport {
        SegReport {
            variant,
            domain,
            per_class_iou: BTreeMap::from([("background".into(), back), ("digit".into(), digit)]),
            miou: (back + digit) / 2.0,
            dataset: DatasetManifest {
                name: DatasetName::MnistM,
                split: Split::Test,
                count: 1,
                resolution: 64,
                checksum: String::new(),
                generator_seed: 0,
                non_paper_texture: true,
                recipe: Recipe {
                    mask_threshold: 0.4,
                    thin: None,
                    limit: None,
                    texture: None,
                },
            },
            checkpoint: PathBuf::from("x"),
            n_samples: 1,
        }
    }

    fn five() -> Vec<SegReport> {
        let mut v = Vec::new();
        for (i, var) in Variant::SEGMENTATION.into_iter().rev().enumerate() {
            v.push(report(var, DomainLabel::Target, 0.9 + 0.01 * i as f64, 0.5 + 0.1 / (i + 3) as f64));
            v.push(report(var, DomainLabel::Source, 0.999, 0.99));
        }
        v
    }

    #[test]
    fn rows_follow_the_declared_order_and_schema() {
        let t = results_table(&five()).unwrap();
        assert_eq!(t.rows.len(), 5);
        assert!(t.rows.iter().all(|r| r.values.iter().all(Option::is_some)));
        let order: Vec<Variant> = t.rows.iter().map(|r| r.variant).collect();
        assert_eq!(order, Variant::SEGMENTATION.to_vec());
        let csv = t.to_csv();
        assert_eq!(
            csv.lines().next().unwrap(),
            "variant,src_iou_back,src_iou_digit,src_miou,tgt_iou_back,tgt_iou_digit,tgt_miou"
        );
        assert_eq!(ResultsTable::from_csv(&csv).unwrap(), t);
        assert_eq!(t.to_text().lines().count(), 6);
    }

    #[test]
    fn rejects_duplicates_and_translation_variants() {
        let mut r = five();
        r.push(report(Variant::Fcn, DomainLabel::Source, 1.0, 1.0));
        assert!(results_table(&r).is_err());
        assert!(results_table(&[report(Variant::StarganTranslate, DomainLabel::Source, 1.0, 1.0)]).is_err());
        assert!(results_table(&[]).unwrap().rows.is_empty());
    }

    #[test]
    fn param_table_counts_and_ratio() {
        assert_eq!(
            param_table(&[]),
            ParamTable {
                rows: vec![],
                stargan_total: 0,
                cyclegan_total: 0,
                ratio: None
            }
        );
        let nets = reference_networks().unwrap();
        let refs: Vec<(&str, &dyn Network)> = nets.iter().map(|(n, b)| (n.as_str(), b.as_ref())).collect();
        let t = param_table(&refs);
        for ((_, net), row) in refs.iter().zip(&t.rows) {
            assert_eq!(row.count, count_parameters(*net));
            assert!(row.published.is_some());
        }
        let ratio = t.ratio.unwrap();
        assert!((0.48..=0.55).contains(&ratio), "{ratio}");
    }
}
