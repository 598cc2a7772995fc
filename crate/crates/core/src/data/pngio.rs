//! Lossless 8-bit PNG encode/decode for rasters.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use super::raster::Raster;
use crate::error::{Error, Result};

/// Encode a 1- or 3-channel raster as 8-bit PNG bytes.
pub fn encode(r: &Raster) -> Result<Vec<u8>> {
    let color = match r.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Dimension(format!("cannot store {c} channels as PNG"))),
    };
    let planar = r.to_u8();
    let n = r.plane_len();
    let interleaved: Vec<u8> = (0..n)
        .flat_map(|p| (0..r.channels).map(move |c| (c, p)))
        .map(|(c, p)| planar[c * n + p])
        .collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, r.width as u32, r.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Runtime(format!("png: {e}")))?;
        writer
            .write_image_data(&interleaved)
            .map_err(|e| Error::Runtime(format!("png: {e}")))?;
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Raster> {
    let bad = |e: String| Error::Runtime(format!("png decode: {e}"));
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(bad(format!("unsupported color type {other:?}"))),
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let n = h * w;
    let mut planar = vec![0u8; channels * n];
    for p in 0..n {
        for c in 0..channels {
            planar[c * n + p] = buf[p * channels + c];
        }
    }
    Raster::from_u8(channels, h, w, &planar)
}

pub fn read(path: &Path) -> Result<Raster> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write(path: &Path, r: &Raster) -> Result<Vec<u8>> {
    let bytes = encode(r)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless_on_8bit_values() {
        let bytes: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 7 % 256) as u8).collect();
        let r = Raster::from_u8(3, 4, 5, &bytes).unwrap();
        let back = decode(&encode(&r).unwrap()).unwrap();
        assert_eq!(back.to_u8(), bytes);
        let g = Raster::from_u8(1, 2, 3, &[0, 255, 3, 4, 5, 6]).unwrap();
        assert_eq!(decode(&encode(&g).unwrap()).unwrap(), g);
        assert!(encode(&Raster::filled(2, 2, 2, 0.0)).is_err());
    }
}
