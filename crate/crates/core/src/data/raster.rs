//! Planar `f32` rasters and the pixel-level operations used to synthesize
//! the datasets.

use rand::Rng;

use crate::error::{Error, Result};

/// Channel-planar image, values nominally in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {channels}x{height}x{width} raster",
                data.len()
            )));
        }
        Ok(Raster {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: f32) -> Self {
        Raster {
            channels,
            height,
            width,
            data: vec![v; channels * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Replicate a single-channel raster to `channels` planes.
    pub fn replicate(&self, channels: usize) -> Result<Raster> {
        if self.channels != 1 {
            return Err(Error::Dimension(format!(
                "replicate needs 1 channel, got {}",
                self.channels
            )));
        }
        Raster::new(channels, self.height, self.width, self.data.repeat(channels))
    }

    pub fn foreground_fraction(&self) -> f64 {
        let on = self.data.iter().filter(|&&v| v > 0.5).count();
        on as f64 / self.data.len().max(1) as f64
    }

    /// Quantize to 8 bits, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Raster::new(
            channels,
            height,
            width,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }
}

/// `mask[p] = 1` iff `image[p] > threshold`.
pub fn derive_mask(image: &Raster, threshold: f32) -> Raster {
    Raster {
        channels: image.channels,
        height: image.height,
        width: image.width,
        data: image
            .data
            .iter()
            .map(|&v| if v > threshold { 1.0 } else { 0.0 })
            .collect(),
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(image: &Raster, height: usize, width: usize) -> Raster {
    let sy = image.height as f32 / height as f32;
    let sx = image.width as f32 / width as f32;
    let taps = |out: usize, scale: f32, n: usize| -> (usize, usize, f32) {
        let src = ((out as f32 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f32);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, src - lo as f32)
    };
    let rows: Vec<_> = (0..height).map(|y| taps(y, sy, image.height)).collect();
    let cols: Vec<_> = (0..width).map(|x| taps(x, sx, image.width)).collect();
    let mut data = Vec::with_capacity(image.channels * height * width);
    for c in 0..image.channels {
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = image.get(c, y0, x0) * (1.0 - fx) + image.get(c, y0, x1) * fx;
                let bottom = image.get(c, y1, x0) * (1.0 - fx) + image.get(c, y1, x1) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Raster {
        channels: image.channels,
        height,
        width,
        data,
    }
}

/// Nearest-neighbour resize with half-pixel centers.
pub fn resize_nearest(image: &Raster, height: usize, width: usize) -> Raster {
    let pick = |out: usize, n_out: usize, n_in: usize| ((out * 2 + 1) * n_in / (n_out * 2)).min(n_in - 1);
    let mut data = Vec::with_capacity(image.channels * height * width);
    for c in 0..image.channels {
        for y in 0..height {
            let sy = pick(y, height, image.height);
            for x in 0..width {
                data.push(image.get(c, sy, pick(x, width, image.width)));
            }
        }
    }
    Raster {
        channels: image.channels,
        height,
        width,
        data,
    }
}

/// Blend a grayscale digit into a color patch: `|patch - digit|` per channel.
pub fn synthesize_mnist_m(digit: &Raster, patch: &Raster) -> Result<Raster> {
    if digit.channels != 1 || digit.height != patch.height || digit.width != patch.width {
        return Err(Error::Dimension(format!(
            "digit {}x{}x{} vs patch {}x{}x{}",
            digit.channels, digit.height, digit.width, patch.channels, patch.height, patch.width
        )));
    }
    let n = digit.plane_len();
    let data = patch
        .data
        .iter()
        .enumerate()
        .map(|(i, &b)| (b - digit.data[i % n]).abs())
        .collect();
    Raster::new(patch.channels, patch.height, patch.width, data)
}

/// Uniformly placed `size`x`size` crop.
pub fn crop_patch<R: Rng + ?Sized>(image: &Raster, size: usize, rng: &mut R) -> Result<Raster> {
    let (top, left) = crop_origin(image.height, image.width, size, rng)?;
    Ok(crop_at(image, top, left, size))
}

/// Top-left corner of a uniformly placed crop.
pub fn crop_origin<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    size: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if height < size || width < size {
        return Err(Error::Dimension(format!(
            "{height}x{width} image cannot give a {size}x{size} crop"
        )));
    }
    Ok((rng.random_range(0..=height - size), rng.random_range(0..=width - size)))
}

pub fn crop_at(image: &Raster, top: usize, left: usize, size: usize) -> Raster {
    let mut data = Vec::with_capacity(image.channels * size * size);
    for c in 0..image.channels {
        for y in top..top + size {
            let row = (c * image.height + y) * image.width;
            data.extend_from_slice(&image.data[row + left..row + left + size]);
        }
    }
    Raster {
        channels: image.channels,
        height: size,
        width: size,
        data,
    }
}

/// Crop from a randomly chosen image of `pool`, redrawing when the chosen
/// image is too small. Fails only when no image in the pool is large enough.
pub fn sample_bsds_patch<R: Rng + ?Sized>(pool: &[Raster], size: usize, rng: &mut R) -> Result<Raster> {
    if !pool.iter().any(|im| im.height >= size && im.width >= size) {
        return Err(Error::Dimension(format!(
            "no texture image is at least {size}x{size}"
        )));
    }
    loop {
        let image = &pool[rng.random_range(0..pool.len())];
        if image.height >= size && image.width >= size {
            return crop_patch(image, size, rng);
        }
    }
}

/// Seeded multi-octave value noise mapped to RGB, used in place of natural
/// image patches when none are available.
pub fn procedural_texture<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Raster {
    const OCTAVES: [usize; 4] = [2, 4, 8, 16];
    let mut data = vec![0.0f32; 3 * size * size];
    for c in 0..3 {
        let plane = &mut data[c * size * size..(c + 1) * size * size];
        let mut amplitude = 1.0f32;
        let mut total = 0.0f32;
        for &cells in &OCTAVES {
            let grid: Vec<f32> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f32>()).collect();
            let lattice = Raster::new(1, cells + 1, cells + 1, grid).expect("lattice size");
            let up = resize_bilinear(&lattice, size, size);
            for (p, v) in plane.iter_mut().zip(&up.data) {
                *p += amplitude * v;
            }
            total += amplitude;
            amplitude *= 0.5;
        }
        // stretch each plane to the full range so the blend has contrast
        let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = (hi - lo).max(1e-6);
        for p in plane.iter_mut() {
            *p = if total > 0.0 { (*p - lo) / span } else { 0.0 };
        }
    }
    Raster {
        channels: 3,
        height: size,
        width: size,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn derive_mask_example() {
        let im = Raster::new(1, 2, 2, vec![0.2, 0.6, 0.5, 0.9]).unwrap();
        assert_eq!(derive_mask(&im, 0.5).data, vec![0.0, 1.0, 0.0, 1.0]);
        assert!(derive_mask(&Raster::filled(1, 3, 3, 0.0), 0.5).data.iter().all(|&v| v == 0.0));
        assert!(derive_mask(&Raster::filled(1, 3, 3, 1.0), 0.5).data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mnist_m_blend_examples() {
        let digit = Raster::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let patch = Raster::new(3, 1, 2, vec![0.3, 0.3, 0.2, 0.2, 0.9, 0.9]).unwrap();
        let out = synthesize_mnist_m(&digit, &patch).unwrap();
        let expect = [0.3, 0.7, 0.2, 0.8, 0.9, 0.1];
        for (a, b) in out.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(synthesize_mnist_m(&digit, &Raster::filled(3, 2, 2, 0.0)).is_err());
    }

    #[test]
    fn bilinear_resize_preserves_constants_and_identity() {
        let c = Raster::filled(2, 5, 7, 0.25);
        assert!(resize_bilinear(&c, 11, 3).data.iter().all(|&v| (v - 0.25).abs() < 1e-6));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = procedural_texture(8, &mut rng);
        assert_eq!(resize_bilinear(&r, 8, 8), r);
        assert_eq!(resize_nearest(&r, 8, 8), r);
    }

    #[test]
    fn bilinear_upsample_by_two_interpolates_quarter_points() {
        let im = Raster::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let up = resize_bilinear(&im, 1, 4);
        // centers at -0.25, 0.25, 0.75, 1.25 in source pixels, clamped
        assert_eq!(up.data, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn whole_image_crop_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let im = procedural_texture(16, &mut rng);
        let full = crop_patch(&im, 16, &mut rng).unwrap();
        assert_eq!(full, im);
        let a = crop_patch(&im, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = crop_patch(&im, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(crop_patch(&im, 17, &mut rng).is_err());
    }

    #[test]
    fn pool_sampling_skips_small_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pool = vec![Raster::filled(3, 4, 4, 0.1), Raster::filled(3, 10, 12, 0.6)];
        for _ in 0..20 {
            let p = sample_bsds_patch(&pool, 8, &mut rng).unwrap();
            assert!(p.data.iter().all(|&v| v == 0.6));
        }
        assert!(sample_bsds_patch(&pool[..1], 8, &mut rng).is_err());
    }

    #[test]
    fn crop_offsets_are_uniform() {
        // 1000 crops of size 8 from 12x12 give 5 possible offsets per axis;
        // chi-square with 4 degrees of freedom stays below its 0.999
        // quantile (18.47).
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (mut rows, mut cols) = ([0usize; 5], [0usize; 5]);
        for _ in 0..1000 {
            let (top, left) = crop_origin(12, 12, 8, &mut rng).unwrap();
            rows[top] += 1;
            cols[left] += 1;
        }
        for counts in [rows, cols] {
            let chi2: f64 = counts.iter().map(|&c| (c as f64 - 200.0).powi(2) / 200.0).sum();
            assert!(chi2 < 18.47, "chi2 {chi2}, counts {counts:?}");
        }
    }

    #[test]
    fn texture_is_seeded_and_bounded() {
        let a = procedural_texture(32, &mut ChaCha8Rng::seed_from_u64(5));
        let b = procedural_texture(32, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
