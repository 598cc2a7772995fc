//! Image montages: sample grids, translation galleries.

use std::fs;
use std::path::Path;

use autograd::{no_grad, Tensor, Var};

use super::{binarize, THRESHOLD};
use crate::data::loader::{MaskAudit, MaskPolicy, SplitData};
use crate::data::raster::{resize_nearest, Raster};
use crate::data::DomainLabel;
use crate::error::{Error, Result};
use crate::nets::Mode;
use crate::training::models::{CycleGanSet, Models, StarGanSet};
use crate::training::run::Datasets;
use crate::training::{checkpoint_load, ExperimentConfig, Trainer};

const PAD: usize = 2;
const BACKGROUND: f32 = 0.5;

/// One labelled strip of the montage.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub label: String,
    pub images: Vec<Raster>,
}

impl GridRow {
    pub fn new(label: impl Into<String>, images: Vec<Raster>) -> Self {
        GridRow {
            label: label.into(),
            images,
        }
    }
}

/// Split a `[B,C,H,W]` batch into rasters. Images in the model range
/// `[-1, 1]` are mapped to `[0, 1]`; masks are taken as they are.
pub fn tensor_rasters(t: &Tensor, model_range: bool) -> Result<Vec<Raster>> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!("expected [B,C,H,W], got {s:?}")));
    }
    let per = s[1] * s[2] * s[3];
    t.data()
        .chunks(per.max(1))
        .take(s[0])
        .map(|chunk| {
            let data = chunk
                .iter()
                .map(|&v| if model_range { (v + 1.0) / 2.0 } else { v })
                .map(|v| v.clamp(0.0, 1.0))
                .collect();
            Raster::new(s[1], s[2], s[3], data)
        })
        .collect()
}

fn to_rgb(r: &Raster, height: usize, width: usize) -> Result<Raster> {
    let r = if (r.height, r.width) == (height, width) {
        r.clone()
    } else {
        resize_nearest(r, height, width)
    };
    match r.channels {
        3 => Ok(r),
        1 => r.replicate(3),
        c => Err(Error::Dimension(format!("cannot draw {c}-channel images"))),
    }
}

/// Montage with one strip per row, cells the size of the first image, on
/// a grey background. Row labels are stored as PNG text chunks
/// (`row0`, `row1`, ...). Returns the PNG bytes written.
pub fn image_grid(rows: &[GridRow], path: &Path) -> Result<Vec<u8>> {
    let first = rows
        .iter()
        .flat_map(|r| r.images.first())
        .next()
        .ok_or_else(|| Error::InvalidArgument("image grid without images".into()))?;
    let (ch, cw) = (first.height, first.width);
    let cols = rows.iter().map(|r| r.images.len()).max().unwrap_or(0);
    let (height, width) = (PAD + rows.len() * (ch + PAD), PAD + cols * (cw + PAD));
    let mut canvas = vec![BACKGROUND; 3 * height * width];
    let plane = height * width;
    for (ri, row) in rows.iter().enumerate() {
        for (ci, im) in row.images.iter().enumerate() {
            let im = to_rgb(im, ch, cw)?;
            let (top, left) = (PAD + ri * (ch + PAD), PAD + ci * (cw + PAD));
            for c in 0..3 {
                for y in 0..ch {
                    let dst = c * plane + (top + y) * width + left;
                    canvas[dst..dst + cw].copy_from_slice(&im.plane(c)[y * cw..(y + 1) * cw]);
                }
            }
        }
    }
    let canvas = Raster::new(3, height, width, canvas)?;
    let bytes = encode_with_labels(&canvas, rows)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn encode_with_labels(r: &Raster, rows: &[GridRow]) -> Result<Vec<u8>> {
    let png_err = |e: png::EncodingError| Error::Runtime(format!("png: {e}"));
    let planar = &r.to_u8();
    let n = r.plane_len();
    let interleaved: Vec<u8> = (0..n).flat_map(|p| (0..3).map(move |c| planar[c * n + p])).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, r.width as u32, r.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        for (i, row) in rows.iter().enumerate() {
            enc.add_text_chunk(format!("row{i}"), row.label.clone()).map_err(png_err)?;
        }
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&interleaved).map_err(png_err)?;
    }
    Ok(out)
}

fn labels(n: usize, l: DomainLabel) -> Vec<DomainLabel> {
    vec![l; n]
}

/// Input, translation and reconstruction strips for both directions, plus
/// segmentation strips when the model has a segmentation head. `a` belongs
/// to the source domain, `b` to the target.
pub fn translation_rows(models: &Models, a: &Tensor, b: &Tensor) -> Result<Vec<GridRow>> {
    let (a, b) = (Var::constant(a.clone()), Var::constant(b.clone()));
    let (na, nb) = (a.shape()[0], b.shape()[0]);
    let (ab, aba, ba, bab) = match models {
        Models::StarGan(StarGanSet { generator: g, .. }) => {
            let ab = g.translate(&a, &labels(na, DomainLabel::Target))?;
            let aba = g.translate(&ab, &labels(na, DomainLabel::Source))?;
            let ba = g.translate(&b, &labels(nb, DomainLabel::Source))?;
            let bab = g.translate(&ba, &labels(nb, DomainLabel::Target))?;
            (ab, aba, ba, bab)
        }
        Models::CycleGan(CycleGanSet { g_ab, g_ba, .. }) => {
            let ab = g_ab.forward(&a)?;
            let aba = g_ba.forward(&ab)?;
            let ba = g_ba.forward(&b)?;
            let bab = g_ab.forward(&ba)?;
            (ab, aba, ba, bab)
        }
        Models::Fcn(_) => return Err(Error::InvalidArgument("the FCN baseline does not translate".into())),
    };
    let img = |v: &Var| tensor_rasters(&v.value(), true);
    let mut rows = vec![
        GridRow::new("source", img(&a)?),
        GridRow::new("source to target", img(&ab)?),
        GridRow::new("source reconstruction", img(&aba)?),
        GridRow::new("target", img(&b)?),
        GridRow::new("target to source", img(&ba)?),
        GridRow::new("target reconstruction", img(&bab)?),
    ];
    if matches!(models, Models::StarGan(StarGanSet { decoder: Some(_), .. })) {
        let seg = |x: &Var| -> Result<Vec<Raster>> {
            tensor_rasters(&binarize(&models.segment(x)?.value(), THRESHOLD), false)
        };
        rows.push(GridRow::new("source segmentation", seg(&a)?));
        rows.push(GridRow::new("target segmentation", seg(&b)?));
    }
    Ok(rows)
}

/// Per-epoch samples from the validation splits. Target masks are never
/// drawn; only predictions are.
pub fn render_samples(models: &Models, cfg: &ExperimentConfig, data: &Datasets, n: usize, path: &Path) -> Result<()> {
    let idx: Vec<usize> = (0..n.min(data.val_count)).collect();
    let rows = match models {
        Models::Fcn(_) => {
            let b = data.source_val.batch(&idx, true)?;
            let pred = models.segment(&Var::constant(b.images.clone()))?;
            vec![
                GridRow::new("image", tensor_rasters(&b.images, true)?),
                GridRow::new("mask", tensor_rasters(b.masks.as_ref().expect("masks requested"), false)?),
                GridRow::new("prediction", tensor_rasters(&binarize(&pred.value(), THRESHOLD), false)?),
            ]
        }
        _ => {
            let tv = data
                .target_val
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("{} samples need target images", cfg.variant)))?;
            let m = idx.len().min(data.target_val_count);
            translation_rows(models, &data.source_val.images(&idx[..m])?, &tv.images(&idx[..m])?)?
        }
    };
    image_grid(&rows, path).map(|_| ())
}

/// Translate the first `n` images of the splits at `dir_a` (source) and
/// `dir_b` (target) with a checkpointed translation model and render the
/// gallery.
pub fn translation_gallery(checkpoint: &Path, dir_a: &Path, dir_b: &Path, n: usize, path: &Path) -> Result<Vec<u8>> {
    let state = checkpoint_load(checkpoint)?;
    let trainer = Trainer::from_state(&state)?;
    trainer.models.set_mode(Mode::Eval);
    let audit = MaskAudit::new();
    let a = SplitData::open(dir_a, MaskPolicy::Forbidden, "gallery.a", &audit)?;
    let b = SplitData::open(dir_b, MaskPolicy::Forbidden, "gallery.b", &audit)?;
    let count = n.min(a.len()).min(b.len());
    if count == 0 {
        return Err(Error::InvalidArgument("gallery needs at least one image per domain".into()));
    }
    let idx: Vec<usize> = (0..count).collect();
    let rows = no_grad(|| translation_rows(&trainer.models, &a.images(&idx)?, &b.images(&idx)?))?;
    image_grid(&rows, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_one_strip_per_row_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let im = |v: f32| Raster::filled(3, 4, 4, v);
        let mask = Raster::new(1, 4, 4, (0..16).map(|i| (i % 2) as f32).collect()).unwrap();
        let rows: Vec<GridRow> = (0..3)
            .map(|r| GridRow::new(format!("r{r}"), (0..10).map(|i| if r == 2 { mask.clone() } else { im(i as f32 / 10.0) }).collect()))
            .collect();
        let a = image_grid(&rows, &dir.path().join("a.png")).unwrap();
        let b = image_grid(&rows, &dir.path().join("b.png")).unwrap();
        assert_eq!(a, b);
        let decoded = crate::data::pngio::decode(&a).unwrap();
        assert_eq!((decoded.height, decoded.width), (PAD + 3 * (4 + PAD), PAD + 10 * (4 + PAD)));
        // the mask strip is pure black and white
        let top = PAD + 2 * (4 + PAD);
        for y in top..top + 4 {
            for x in PAD..PAD + 4 {
                let v = decoded.get(0, y, x);
                assert!(v == 0.0 || v == 1.0);
            }
        }
        assert!(image_grid(&[], &dir.path().join("c.png")).is_err());
    }
}
