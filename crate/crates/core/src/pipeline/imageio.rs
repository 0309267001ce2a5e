//! Image file I/O: 8-bit PNG and binary PPM/PGM.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{DdmiError, Result};
use crate::tensor::Tensor;

/// Map a signal value in [-1, 1] to an 8-bit level, clamping.
pub fn to_u8(v: f32) -> u8 {
    let clamped = v.clamp(-1.0, 1.0);
    ((clamped + 1.0) * 127.5).round() as u8
}

fn to_signal(byte: u8) -> f32 {
    byte as f32 / 255.0 * 2.0 - 1.0
}

/// Write `[3, H, W]` signal data in [-1, 1] as an 8-bit RGB PNG,
/// atomically (temp file + rename).
pub fn write_png(path: &Path, image: &Tensor<f32>) -> Result<()> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(DdmiError::RankMismatch { expected: 3, got: image.shape().to_vec() });
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let d = image.data();
    let hw = h * w;
    let mut rgb = Vec::with_capacity(hw * 3);
    for i in 0..hw {
        rgb.push(to_u8(d[i]));
        rgb.push(to_u8(d[hw + i]));
        rgb.push(to_u8(d[2 * hw + i]));
    }
    let tmp = temp_sibling(path);
    {
        let file = File::create(&tmp)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| DdmiError::Data(format!("png header: {e}")))?;
        writer
            .write_image_data(&rgb)
            .map_err(|e| DdmiError::Data(format!("png data: {e}")))?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read an 8-bit PNG or binary PPM (P6) into `[3, H, W]` in [-1, 1].
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "png" => read_png(path),
        "ppm" => read_ppm(path),
        other => Err(DdmiError::Data(format!("unsupported image extension '{other}'"))),
    }
}

fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let file = File::open(path)?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| DdmiError::Data(format!("png read {}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| DdmiError::Data(format!("png frame {}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(DdmiError::Data(format!("{}: only 8-bit images supported", path.display())));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        other => {
            return Err(DdmiError::Data(format!("{}: unsupported color type {other:?}", path.display())))
        }
    };
    let hw = h * w;
    let mut out = vec![0.0f32; 3 * hw];
    for i in 0..hw {
        let base = i * channels;
        let (r, g, b) = match channels {
            1 => (buf[base], buf[base], buf[base]),
            _ => (buf[base], buf[base + 1], buf[base + 2]),
        };
        out[i] = to_signal(r);
        out[hw + i] = to_signal(g);
        out[2 * hw + i] = to_signal(b);
    }
    Tensor::from_vec(out, &[3, h, w])
}

fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| DdmiError::Data(format!("{}: {m}", path.display()));
    let mut pos = 0usize;
    let token = |bytes: &[u8], pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && (bytes[*pos].is_ascii_whitespace() || bytes[*pos] == b'#') {
            if bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                *pos += 1;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(DdmiError::Data("truncated ppm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&bytes, &mut pos)? != "P6" {
        return Err(bad("expected binary P6 ppm"));
    }
    let w: usize = token(&bytes, &mut pos)?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = token(&bytes, &mut pos)?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token(&bytes, &mut pos)?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + 3 * w * h {
        return Err(bad("truncated pixel data"));
    }
    let hw = h * w;
    let mut out = vec![0.0f32; 3 * hw];
    for i in 0..hw {
        out[i] = to_signal(bytes[pos + 3 * i]);
        out[hw + i] = to_signal(bytes[pos + 3 * i + 1]);
        out[2 * hw + i] = to_signal(bytes[pos + 3 * i + 2]);
    }
    Tensor::from_vec(out, &[3, h, w])
}

/// Write a grayscale `[H, W]` slice in [0, 1] as a binary PGM (P5).
pub fn write_pgm(path: &Path, data: &[f32], h: usize, w: usize) -> Result<()> {
    if data.len() != h * w {
        return Err(DdmiError::ShapeMismatch { expected: vec![h, w], got: vec![data.len()] });
    }
    let tmp = temp_sibling(path);
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        write!(out, "P5\n{w} {h}\n255\n")?;
        let bytes: Vec<u8> = data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        out.write_all(&bytes)?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn temp_sibling(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::randn;
    use crate::rng::Rng;

    #[test]
    fn png_round_trip_preserves_quantized_values() {
        let dir = std::env::temp_dir().join("ddmikit-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round.png");

        let mut rng = Rng::seed_from(7);
        let img = randn::<f32>(&[3, 9, 5], &mut rng).tanh();
        write_png(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.shape(), &[3, 9, 5]);
        for (a, b) in img.data().iter().zip(back.data()) {
            // one quantization step of 2/255 plus rounding
            assert!((a - b).abs() <= 1.0 / 127.5 + 1e-6, "{a} vs {b}");
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn png_writes_are_deterministic() {
        let dir = std::env::temp_dir().join("ddmikit-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut rng = Rng::seed_from(8);
        let img = randn::<f32>(&[3, 8, 8], &mut rng).tanh();
        let p1 = dir.join("det1.png");
        let p2 = dir.join("det2.png");
        write_png(&p1, &img).unwrap();
        write_png(&p2, &img).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        std::fs::remove_file(&p1).unwrap();
        std::fs::remove_file(&p2).unwrap();
    }

    #[test]
    fn ppm_reader_parses_p6() {
        let dir = std::env::temp_dir().join("ddmikit-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tiny.ppm");
        let mut bytes = b"P6\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        std::fs::write(&path, &bytes).unwrap();
        let img = read_image(&path).unwrap();
        assert_eq!(img.shape(), &[3, 1, 2]);
        assert_eq!(img.data()[0], 1.0); // red channel, first pixel
        assert_eq!(img.data()[5], 1.0); // blue channel, second pixel
        std::fs::remove_file(&path).unwrap();
    }
}
