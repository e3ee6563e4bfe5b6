//! Binary 8-bit PPM (P6) encoding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub fn encode(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::Shape(format!("P6 needs 3 channels, got {}", img.channels)));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_bytes8());
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Image> {
    let parse_err = |message: &str| Error::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Skip whitespace and comments.
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
            return Err(parse_err("truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| parse_err("non-ASCII PPM header"))?);
    }
    if fields[0] != "P6" {
        return Err(parse_err("not a binary P6 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err("bad number in PPM header"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(parse_err("only 8-bit PPM (maxval 255) is supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(parse_err("truncated PPM raster"));
    }
    Image::from_bytes8(height, width, 3, &bytes[pos..pos + need])
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode(img)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Tile images into a grid (row-major), separated by 1 px gaps.
pub fn grid(images: &[Image], columns: usize) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::Input("empty image grid".into()))?;
    let columns = columns.max(1).min(images.len());
    let rows = images.len().div_ceil(columns);
    let (h, w) = (first.height, first.width);
    let gh = rows * h + rows.saturating_sub(1);
    let gw = columns * w + columns.saturating_sub(1);
    let mut out = Image::filled(gh, gw, &[1.0, 1.0, 1.0]);
    for (k, img) in images.iter().enumerate() {
        if !img.same_shape(first) {
            return Err(Error::Shape("grid images must share a shape".into()));
        }
        let (oy, ox) = ((k / columns) * (h + 1), (k % columns) * (w + 1));
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out.set(oy + y, ox + x, c, img.get(y, x, c));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comment_parses() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 0, 255]);
        let img = decode(&bytes, Path::new("x.ppm")).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(0, 1, 2), 1.0);
    }

    #[test]
    fn rejects_other_formats() {
        let err = decode(b"P3\n1 1\n255\n0 0 0", Path::new("bad.ppm")).unwrap_err();
        assert!(err.to_string().contains("bad.ppm"));
        assert!(decode(b"P6\n4 4\n255\n\x00", Path::new("short.ppm")).is_err());
    }

    #[test]
    fn grid_dimensions() {
        let imgs = vec![Image::filled(4, 4, &[0.0, 0.0, 0.0]); 5];
        let g = grid(&imgs, 3).unwrap();
        assert_eq!((g.height, g.width), (9, 14));
    }
}
