//! PNG and binary PGM (P5) serialization for rasters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageReader};

use super::{BinaryMask, GrayImage};
use crate::error::{Error, Result};

impl GrayImage {
    /// Load an 8- or 16-bit grayscale PNG; intensity = value / maxval.
    pub fn load_png(path: impl AsRef<Path>) -> Result<GrayImage> {
        let img = ImageReader::open(path)?.decode()?;
        Ok(match img {
            DynamicImage::ImageLuma16(buf) => {
                let (w, h) = (buf.width() as usize, buf.height() as usize);
                let data = buf.into_raw().iter().map(|v| *v as f32 / 65535.0).collect();
                GrayImage::from_vec(w, h, data)
            }
            other => {
                let buf = other.to_luma8();
                let (w, h) = (buf.width() as usize, buf.height() as usize);
                let data = buf.into_raw().iter().map(|v| *v as f32 / 255.0).collect();
                GrayImage::from_vec(w, h, data)
            }
        })
    }

    pub fn save_png8(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf: Vec<u8> = self
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img =
            image::GrayImage::from_raw(self.width() as u32, self.height() as u32, buf).unwrap();
        img.save(path)?;
        Ok(())
    }

    pub fn save_png16(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf: Vec<u16> = self
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
            self.width() as u32,
            self.height() as u32,
            buf,
        )
        .unwrap();
        img.save(path)?;
        Ok(())
    }

    /// Load a binary PGM (P5) with maxval up to 65535.
    pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
        let mut raw = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
        parse_pgm(&raw)
    }

    /// Write a binary PGM (P5); maxval 255 or 65535.
    pub fn save_pgm(&self, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
        if maxval != 255 && maxval != 65535 {
            return Err(Error::invalid("PGM maxval must be 255 or 65535"));
        }
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P5\n{} {}\n{}\n", self.width(), self.height(), maxval)?;
        if maxval == 255 {
            let buf: Vec<u8> = self
                .data()
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            w.write_all(&buf)?;
        } else {
            for v in self.data() {
                let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
                w.write_all(&q.to_be_bytes())?;
            }
        }
        Ok(())
    }
}

fn parse_pgm(raw: &[u8]) -> Result<GrayImage> {
    let mut pos = 0usize;
    let mut fields = Vec::new();
    // Header: magic, width, height, maxval; '#' starts a comment.
    while fields.len() < 4 {
        while pos < raw.len() && (raw[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < raw.len() && raw[pos] == b'#' {
            while pos < raw.len() && raw[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < raw.len() && !(raw[pos] as char).is_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::invalid("truncated PGM header"));
        }
        fields.push(
            std::str::from_utf8(&raw[start..pos])
                .map_err(|_| Error::invalid("non-ascii PGM header"))?
                .to_string(),
        );
    }
    if fields[0] != "P5" {
        return Err(Error::invalid(format!("unsupported PGM magic {}", fields[0])));
    }
    let w: usize = fields[1].parse().map_err(|_| Error::invalid("bad PGM width"))?;
    let h: usize = fields[2].parse().map_err(|_| Error::invalid("bad PGM height"))?;
    let maxval: u32 = fields[3].parse().map_err(|_| Error::invalid("bad PGM maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::invalid("PGM maxval out of range"));
    }
    pos += 1; // single whitespace after maxval
    let data = if maxval < 256 {
        let body = raw
            .get(pos..pos + w * h)
            .ok_or_else(|| Error::invalid("truncated PGM body"))?;
        body.iter().map(|v| *v as f32 / maxval as f32).collect()
    } else {
        let body = raw
            .get(pos..pos + 2 * w * h)
            .ok_or_else(|| Error::invalid("truncated PGM body"))?;
        body.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / maxval as f32)
            .collect()
    };
    Ok(GrayImage::from_vec(w, h, data))
}

impl BinaryMask {
    /// Load from a grayscale PNG: nonzero means set.
    pub fn load_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
        let g = GrayImage::load_png(path)?;
        let bits = g.data().iter().map(|v| *v > 0.5).collect();
        Ok(BinaryMask::from_vec(g.width(), g.height(), bits))
    }

    /// Save as an 8-bit PNG with values {0, 255}.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf: Vec<u8> = self.bits().iter().map(|b| if *b { 255 } else { 0 }).collect();
        let img =
            image::GrayImage::from_raw(self.width() as u32, self.height() as u32, buf).unwrap();
        img.save(path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{BinaryMask, GrayImage};

    #[test]
    fn png_roundtrip_8_and_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..20).map(|i| i as f32 / 19.0).collect();
        let img = GrayImage::from_vec(5, 4, data);

        let p8 = dir.path().join("a.png");
        img.save_png8(&p8).unwrap();
        let r8 = GrayImage::load_png(&p8).unwrap();
        assert_eq!((r8.width(), r8.height()), (5, 4));
        for (a, b) in r8.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }

        let p16 = dir.path().join("b.png");
        img.save_png16(&p16).unwrap();
        let r16 = GrayImage::load_png(&p16).unwrap();
        for (a, b) in r16.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }

    #[test]
    fn pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..12).map(|i| i as f32 / 11.0).collect();
        let img = GrayImage::from_vec(4, 3, data);
        for maxval in [255u16, 65535] {
            let p = dir.path().join(format!("m{maxval}.pgm"));
            img.save_pgm(&p, maxval).unwrap();
            let r = GrayImage::load_pgm(&p).unwrap();
            assert_eq!((r.width(), r.height()), (4, 3));
            for (a, b) in r.data().iter().zip(img.data()) {
                assert!((a - b).abs() <= 0.5 / maxval as f32 + 1e-6);
            }
        }
    }

    #[test]
    fn mask_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = BinaryMask::new(6, 5, false);
        m.set(1, 1, true);
        m.set(4, 3, true);
        let p = dir.path().join("m.png");
        m.save_png(&p).unwrap();
        let r = BinaryMask::load_png(&p).unwrap();
        assert_eq!(r, m);
    }
}
