//! Binary morphology for the thinned-digit dataset.

use super::raster::{derive_mask, resize_bilinear, resize_nearest, Raster};

/// Offsets of a disk structuring element: all `(dy, dx)` with
/// `dy² + dx² <= radius²`.
pub fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Binary erosion of a single-channel mask. Pixels outside the raster do
/// not constrain the result.
pub fn erode(mask: &Raster, element: &[(isize, isize)]) -> Raster {
    let (h, w) = (mask.height as isize, mask.width as isize);
    let on = |y: isize, x: isize| y < 0 || x < 0 || y >= h || x >= w || mask.data[(y * w + x) as usize] > 0.5;
    let mut data = vec![0.0; mask.data.len()];
    for y in 0..h {
        for x in 0..w {
            if mask.data[(y * w + x) as usize] > 0.5 && element.iter().all(|&(dy, dx)| on(y + dy, x + dx)) {
                data[(y * w + x) as usize] = 1.0;
            }
        }
    }
    Raster {
        channels: 1,
        height: mask.height,
        width: mask.width,
        data,
    }
}

/// Zhang–Suen iterative thinning of a single-channel binary mask.
pub fn skeletonize(mask: &Raster) -> Raster {
    let (h, w) = (mask.height, mask.width);
    let mut img: Vec<u8> = mask.data.iter().map(|&v| u8::from(v > 0.5)).collect();
    let at = |img: &[u8], y: isize, x: isize| -> u8 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0
        } else {
            img[y as usize * w + x as usize]
        }
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..h as isize {
                for x in 0..w as isize {
                    if at(&img, y, x) == 0 {
                        continue;
                    }
                    // P2..P9, clockwise from north
                    let p = [
                        at(&img, y - 1, x),
                        at(&img, y - 1, x + 1),
                        at(&img, y, x + 1),
                        at(&img, y + 1, x + 1),
                        at(&img, y + 1, x),
                        at(&img, y + 1, x - 1),
                        at(&img, y, x - 1),
                        at(&img, y - 1, x - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let directional = if pass == 0 {
                        p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0
                    } else {
                        p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0
                    };
                    if (2..=6).contains(&b) && a == 1 && directional {
                        remove.push(y as usize * w + x as usize);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                img[i] = 0;
            }
        }
        if !changed {
            break;
        }
    }
    Raster {
        channels: 1,
        height: h,
        width: w,
        data: img.into_iter().map(f32::from).collect(),
    }
}

/// Where the skeleton that is added back to the eroded digit is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkeletonSource {
    /// Skeleton of the digit at its original resolution, upsampled with
    /// nearest-neighbour interpolation.
    Native,
    /// Skeleton of the binarized, resized digit.
    Resized,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThinParams {
    pub resolution: usize,
    pub threshold: f32,
    pub erosion_radius: usize,
    pub skeleton: SkeletonSource,
}

impl Default for ThinParams {
    fn default() -> Self {
        ThinParams {
            resolution: 64,
            threshold: 0.4,
            erosion_radius: 4,
            skeleton: SkeletonSource::Native,
        }
    }
}

/// Thin a grayscale digit: binarize the resized digit, erode it with a disk
/// and add back the skeleton so strokes never vanish. The result is binary
/// and serves as both image and mask.
pub fn synthesize_mnist_thin(digit: &Raster, params: &ThinParams) -> Raster {
    let size = params.resolution;
    let binary = derive_mask(&resize_bilinear(digit, size, size), params.threshold);
    let eroded = erode(&binary, &disk(params.erosion_radius));
    let skeleton = match params.skeleton {
        SkeletonSource::Native => resize_nearest(&skeletonize(&derive_mask(digit, params.threshold)), size, size),
        SkeletonSource::Resized => skeletonize(&binary),
    };
    Raster {
        channels: 1,
        height: size,
        width: size,
        data: eroded
            .data
            .iter()
            .zip(&skeleton.data)
            .map(|(&a, &b)| if a > 0.5 || b > 0.5 { 1.0 } else { 0.0 })
            .collect(),
    }
}
