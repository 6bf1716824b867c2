//! Binary PPM (P6) / PGM (P5) export with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Clamps to `[0, 1]` and rounds half up to a byte. NaN maps to 0.
pub fn to_byte(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// `0.5 + x / 2`, the display mapping for signed high-frequency channels.
pub fn high_channel_view<T: Real>(high: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64_lossy(0.5);
    high.map(|x| half + x * half)
}

/// Encodes one image (batch of 1, 1 or 3 channels) as P5 or P6 bytes.
pub fn encode_pnm<T: Real>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let [n, c, h, w] = image.shape();
    if n != 1 {
        return Err(Error::invalid(format!(
            "export expects a single image, got batch {n}"
        )));
    }
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(Error::invalid(format!(
                "cannot export {c}-channel image (need 1 or 3)"
            )))
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let data = image.data();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            out.push(to_byte(data[ch * plane + p].as_f64()));
        }
    }
    Ok(out)
}

pub fn export_image<T: Real>(image: &Tensor<T>, path: &Path) -> Result<()> {
    let bytes = encode_pnm(image)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// A decoded P5/P6 image with interleaved samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Minimal reader for binary PGM/PPM with maxval 255 and `#` comments.
pub fn read_pnm(bytes: &[u8]) -> Result<Pnm> {
    let bad = |m: &str| Error::invalid(format!("pnm: {m}"));
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    pos += 1;
    let channels = match fields[0] {
        "P5" => 1,
        "P6" => 3,
        m => return Err(bad(&format!("unsupported magic {m}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 supported"));
    }
    let need = width * height * channels;
    let pixels = bytes
        .get(pos..pos + need)
        .ok_or_else(|| bad("truncated pixel data"))?
        .to_vec();
    Ok(Pnm {
        channels,
        width,
        height,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_grey_rounds_up() {
        let img = Tensor::<f32>::full([1, 3, 2, 2], 0.5);
        let p = read_pnm(&encode_pnm(&img).unwrap()).unwrap();
        assert!(p.pixels.iter().all(|&b| b == 128));
        assert_eq!(p.pixels.len(), 12);
    }

    #[test]
    fn endpoints_and_clamping() {
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.0), 0);
        assert_eq!(to_byte(-3.0), 0);
        assert_eq!(to_byte(7.0), 255);
        assert_eq!(to_byte(f64::NAN), 0);
    }

    #[test]
    fn interleaves_channels() {
        let img =
            Tensor::<f32>::from_vec([1, 3, 1, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let p = read_pnm(&encode_pnm(&img).unwrap()).unwrap();
        assert_eq!((p.width, p.height), (2, 1));
        assert_eq!(p.pixels, vec![255, 0, 0, 0, 255, 0]);
    }

    #[test]
    fn grey_uses_p5_and_two_channels_rejected() {
        let g = Tensor::<f32>::zeros([1, 1, 2, 3]);
        assert!(encode_pnm(&g).unwrap().starts_with(b"P5\n3 2\n255\n"));
        assert!(encode_pnm(&Tensor::<f32>::zeros([1, 2, 2, 2])).is_err());
    }

    #[test]
    fn reader_skips_comments() {
        let mut b = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        b.extend([3, 4]);
        assert_eq!(read_pnm(&b).unwrap().pixels, vec![3, 4]);
    }
}
