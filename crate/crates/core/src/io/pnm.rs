use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(format!("malformed {what} in image header")))
}

/// Decodes a binary 8-bit PPM (P6) or PGM (P5); gray images become three
/// identical channels.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageTensor> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::format("not a binary PPM (P6) or PGM (P5) file")),
    };
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maximum value")?;
    if width == 0 || height == 0 {
        return Err(Error::format("image has zero extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(format!(
            "only 8-bit images are supported, maximum value {maxval}"
        )));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::format("missing separator after image header"));
    }
    pos += 1;
    let n = width * height * channels;
    let payload = bytes.get(pos..pos + n).ok_or_else(|| {
        Error::format(format!(
            "truncated payload: expected {n} bytes, found {}",
            bytes.len() - pos
        ))
    })?;
    let scale = maxval as f32;
    Ok(ImageTensor::from_fn(3, height, width, |c, y, x| {
        let src = if channels == 3 { c } else { 0 };
        payload[(y * width + x) * channels + src] as f32 / scale
    }))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// P6 bytes of a three-channel image, values clamped to [0, 1].
pub fn encode_ppm(image: &ImageTensor) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(Error::dim(format!("PPM needs 3 channels, got {}", image.channels())));
    }
    let (h, w) = (image.height(), image.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(quantize(image.get(c, y, x)));
            }
        }
    }
    Ok(out)
}

/// P5 bytes of an already quantized gray image.
pub fn encode_pgm(height: usize, width: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != height * width {
        return Err(Error::dim(format!(
            "{} pixels for a {height}x{width} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_image(image: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(image)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_p6_and_p5() {
        let mut p6 = b"P6\n# comment\n2 2\n255\n".to_vec();
        p6.extend_from_slice(&[255, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let img = decode_pnm(&p6).unwrap();
        assert_eq!((img.channels(), img.height(), img.width()), (3, 2, 2));
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(1, 0, 0), 0.0);

        let mut p5 = b"P5 2 2 255 ".to_vec();
        p5.extend_from_slice(&[128; 4]);
        let img = decode_pnm(&p5).unwrap();
        assert_eq!(img.channels(), 3);
        assert!(img.data().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-7));
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n"), Err(Error::Format(_))));
        assert!(matches!(decode_pnm(b"P6\n2 x\n255\n"), Err(Error::Format(_))));
        assert!(matches!(decode_pnm(b"P6\n2 2\n255\n\x01\x02"), Err(Error::Format(_))));
        assert!(matches!(decode_pnm(b"P5\n1 1\n65535\n\x00\x00"), Err(Error::Format(_))));
    }

    #[test]
    fn round_trip_within_quantization() {
        let img = ImageTensor::from_fn(3, 5, 7, |c, y, x| ((c * 13 + y * 7 + x * 3) % 29) as f32 / 28.0);
        let back = decode_pnm(&encode_ppm(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
    }
}
