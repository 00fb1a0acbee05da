use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Image, Mask, SalienceMap, Tensor};
use crate::error::{Error, Result};

/// Quantizes an intensity to a byte: `round(v * 255)`, halves away from zero.
pub(crate) fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::malformed(path, other.to_string()),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

/// Decoded 8-bit PNG: `(height, width, channels, bytes)`.
fn read_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let decode_err = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::malformed(path, other.to_string()),
    };
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            depth: info.bit_depth as u8,
        });
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::malformed(
                path,
                format!("unsupported color type {other:?}; expected grayscale or RGB"),
            ))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    buf.truncate(info.buffer_size());
    Ok((h, w, channels, buf))
}

/// Writes an image as an 8-bit grayscale or RGB PNG.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let color = match img.channels() {
        1 => png::ColorType::Grayscale,
        _ => png::ColorType::Rgb,
    };
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
    write_png(path.as_ref(), img.width(), img.height(), color, &bytes)
}

/// Reads an 8-bit grayscale or RGB PNG, mapping byte `b` to `b / 255`.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let (h, w, c, bytes) = read_png(path.as_ref())?;
    let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
    Image::new(h, w, c, data)
}

/// Writes a mask as 8-bit grayscale with values `{0, 255}`.
pub fn save_mask_png(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = mask
        .data()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    write_png(
        path.as_ref(),
        mask.width(),
        mask.height(),
        png::ColorType::Grayscale,
        &bytes,
    )
}

/// Reads a `{0, 255}` grayscale mask.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let (h, w, c, bytes) = read_png(path)?;
    if c != 1 {
        return Err(Error::malformed(path, "mask must be single-channel"));
    }
    let data = bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            255 => Ok(true),
            other => Err(Error::malformed(
                path,
                format!("mask byte {other} not in {{0, 255}}"),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    Mask::from_vec(h, w, data)
}

/// Writes a perturbation as an RGB/grayscale PNG centered on mid-gray:
/// `0.5 + delta / 2`.
pub fn save_delta_png(delta: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let (h, w, c) = delta.shape();
    let vis = Tensor::from_vec(
        h,
        w,
        c,
        delta.data().iter().map(|d| 0.5 + 0.5 * d).collect(),
    )?
    .clamp_to_image();
    save_png(&vis, path)
}

/// Writes a salience map as two little-endian `u32` dimensions (height,
/// width) followed by `height * width` little-endian `f32` values.
pub fn save_salience_raw(map: &SalienceMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(8 + 4 * map.data().len());
    bytes.extend_from_slice(&(map.height() as u32).to_le_bytes());
    bytes.extend_from_slice(&(map.width() as u32).to_le_bytes());
    for &v in map.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_salience_raw(path: impl AsRef<Path>) -> Result<SalienceMap> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::malformed(path, "truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let (h, w) = (word(0) as usize, word(4) as usize);
    if bytes.len() != 8 + 4 * h * w {
        return Err(Error::malformed(
            path,
            format!(
                "expected {} bytes for {h}x{w}, found {}",
                8 + 4 * h * w,
                bytes.len()
            ),
        ));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    SalienceMap::new(h, w, data).map_err(|e| Error::malformed(path, e.to_string()))
}

/// Writes a min-max normalized grayscale rendering of a salience map. A
/// constant map renders as all zeros.
pub fn save_salience_png(map: &SalienceMap, path: impl AsRef<Path>) -> Result<()> {
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let data = map
        .data()
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect();
    save_png(&Image::new(map.height(), map.width(), 1, data)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_away_from_zero() {
        // 0.4999 * 255 = 127.4745
        assert_eq!(to_byte(0.4999), 127);
        assert_eq!(to_byte(0.5), 128); // 127.5
        assert_eq!(to_byte(0.0), 0);
        assert_eq!(to_byte(1.0), 255);
    }

    #[test]
    fn grid_values_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let data: Vec<f64> = (0..4 * 5 * 3)
            .map(|i| ((i * 37) % 256) as f64 / 255.0)
            .collect();
        let img = Image::new(4, 5, 3, data).unwrap();
        save_png(&img, &path).unwrap();
        assert_eq!(load_png(&path).unwrap(), img);
    }

    #[test]
    fn mask_round_trip_keeps_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mut mask = Mask::empty(9, 9);
        for i in 0..7 {
            mask.set(i, (i * 3) % 9, true);
        }
        save_mask_png(&mask, &path).unwrap();
        let back = load_mask_png(&path).unwrap();
        assert_eq!(back.count(), 7);
        assert_eq!(back, mask);
    }

    #[test]
    fn stored_byte_for_04999_is_127() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.png");
        save_png(&Image::filled(1, 1, 1, 0.4999).unwrap(), &path).unwrap();
        assert_eq!(load_png(&path).unwrap().data(), &[127.0 / 255.0]);
    }

    #[test]
    fn distinct_errors_for_missing_garbage_and_deep_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_png(dir.path().join("nope.png")),
            Err(Error::Io { .. })
        ));

        let garbage = dir.path().join("garbage.png");
        std::fs::write(&garbage, b"definitely not a png").unwrap();
        assert!(matches!(load_png(&garbage), Err(Error::Malformed { .. })));

        let deep = dir.path().join("deep.png");
        let file = File::create(&deep).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0, 1, 2, 3]).unwrap();
        w.finish().unwrap();
        assert!(matches!(
            load_png(&deep),
            Err(Error::UnsupportedBitDepth { depth: 16, .. })
        ));
    }

    #[test]
    fn salience_raw_has_header_and_f32_body() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.f32");
        let map = SalienceMap::new(3, 2, vec![0.0, 0.5, 1.0, 2.0, 0.25, 8.0]).unwrap();
        save_salience_raw(&map, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 + 4 * 6);
        assert_eq!(load_salience_raw(&path).unwrap(), map);
    }

    #[test]
    fn normalized_salience_png_spans_full_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        let map = SalienceMap::new(2, 2, vec![0.3, 0.7, 0.5, 1.1]).unwrap();
        save_salience_png(&map, &path).unwrap();
        let img = load_png(&path).unwrap();
        let min = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((min, max), (0.0, 1.0));
    }
}
