//! IDX tensors as published for the MNIST family of datasets.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    I8(Vec<i8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl IdxData {
    pub fn len(&self) -> usize {
        match self {
            IdxData::U8(v) => v.len(),
            IdxData::I8(v) => v.len(),
            IdxData::I16(v) => v.len(),
            IdxData::I32(v) => v.len(),
            IdxData::F32(v) => v.len(),
            IdxData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

fn chunks<const N: usize, T>(payload: &[u8], f: impl Fn([u8; N]) -> T) -> Vec<T> {
    payload.chunks_exact(N).map(|c| f(c.try_into().expect("chunk size"))).collect()
}

/// Decodes a big-endian IDX buffer.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::format("IDX header truncated"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format("IDX magic must start with two zero bytes"));
    }
    let type_code = bytes[2];
    let width = match type_code {
        0x08 | 0x09 => 1,
        0x0B => 2,
        0x0C | 0x0D => 4,
        0x0E => 8,
        other => return Err(Error::format(format!("unknown IDX type code 0x{other:02x}"))),
    };
    let ndim = bytes[3] as usize;
    if !(1..=3).contains(&ndim) {
        return Err(Error::format(format!("IDX dimension count {ndim} outside 1-3")));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::format("IDX dimension table truncated"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("IDX dimensions overflow"))?;
    let need = count
        .checked_mul(width)
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| Error::format("IDX dimensions overflow"))?;
    if bytes.len() < need {
        return Err(Error::format(format!(
            "IDX payload truncated: need {} bytes, have {}",
            need,
            bytes.len()
        )));
    }
    let payload = &bytes[header..need];
    let data = match type_code {
        0x08 => IdxData::U8(payload.to_vec()),
        0x09 => IdxData::I8(payload.iter().map(|&b| b as i8).collect()),
        0x0B => IdxData::I16(chunks(payload, i16::from_be_bytes)),
        0x0C => IdxData::I32(chunks(payload, i32::from_be_bytes)),
        0x0D => IdxData::F32(chunks(payload, f32::from_be_bytes)),
        _ => IdxData::F64(chunks(payload, f64::from_be_bytes)),
    };
    Ok(IdxTensor { dims, data })
}

/// Encodes an unsigned-byte IDX tensor.
pub fn write_idx_u8(dims: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    if !(1..=3).contains(&dims.len()) {
        return Err(Error::invalid("IDX supports 1-3 dimensions"));
    }
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::shape("IDX data length does not match dimensions"));
    }
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid("IDX dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(data);
    Ok(out)
}

/// Grayscale images in `[0, 1]` with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    images: Vec<f32>,
    labels: Vec<u32>,
    height: usize,
    width: usize,
    pub source_name: String,
}

impl LabeledImageSet {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<u32>,
        height: usize,
        width: usize,
        source_name: impl Into<String>,
    ) -> Result<Self> {
        if images.len() != labels.len() * height * width {
            return Err(Error::shape(format!(
                "{} pixels for {} labels of {}x{}",
                images.len(),
                labels.len(),
                height,
                width
            )));
        }
        if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image intensities must lie in [0, 1]"));
        }
        Ok(Self { images, labels, height, width, source_name: source_name.into() })
    }

    /// Pairs an `[N, H, W]` u8 image file with an `[N]` u8 label file.
    pub fn from_idx(image_bytes: &[u8], label_bytes: &[u8], source_name: &str) -> Result<Self> {
        let images = parse_idx(image_bytes)?;
        let labels = parse_idx(label_bytes)?;
        let (IdxData::U8(pixels), [n, h, w]) = (&images.data, images.dims.as_slice()) else {
            return Err(Error::format("image IDX must be a 3-D unsigned-byte tensor"));
        };
        let label_vals: Vec<u32> = match (&labels.data, labels.dims.as_slice()) {
            (IdxData::U8(v), [_]) => v.iter().map(|&l| l as u32).collect(),
            (IdxData::I32(v), [_]) => v.iter().map(|&l| l.max(0) as u32).collect(),
            _ => return Err(Error::format("label IDX must be a 1-D integer tensor")),
        };
        if label_vals.len() != *n {
            return Err(Error::shape(format!("{} images but {} labels", n, label_vals.len())));
        }
        let images = pixels.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(images, label_vals, *h, *w, source_name)
    }

    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        let name = images
            .as_ref()
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let ib = std::fs::read(images.as_ref())?;
        let lb = std::fs::read(labels.as_ref())?;
        Self::from_idx(&ib, &lb, &name)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// The first `n` samples (or all, when fewer).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let px = self.height * self.width;
        Self {
            images: self.images[..n * px].to_vec(),
            labels: self.labels[..n].to_vec(),
            height: self.height,
            width: self.width,
            source_name: self.source_name.clone(),
        }
    }

    /// Re-encodes the images and labels as u8 IDX buffers.
    pub fn to_idx(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let px: Vec<u8> = self.images.iter().map(|&v| (v * 255.0).round() as u8).collect();
        let labels: Vec<u8> = self
            .labels
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| Error::invalid("label exceeds 255")))
            .collect::<Result<_>>()?;
        Ok((
            write_idx_u8(&[self.len(), self.height, self.width], &px)?,
            write_idx_u8(&[self.len()], &labels)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds an IDX buffer by hand, byte for byte, following the published
    /// layout: 0x00 0x00, type, ndim, big-endian u32 dims, payload.
    fn handmade_images(n: u32, rows: u32, cols: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut v = vec![0x00, 0x00, 0x08, 0x03];
        for d in [n, rows, cols] {
            v.push((d >> 24) as u8);
            v.push((d >> 16) as u8);
            v.push((d >> 8) as u8);
            v.push(d as u8);
        }
        v.extend((0..(n * rows * cols) as usize).map(fill));
        v
    }

    #[test]
    fn mnist_style_header() {
        let bytes = handmade_images(3, 28, 28, |i| (i % 256) as u8);
        // magic 0x00000803 as in the MNIST training image file
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims, vec![3, 28, 28]);
        assert_eq!(t.data.len(), 3 * 28 * 28);
        let labels = [0u8, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1];
        let set = LabeledImageSet::from_idx(&bytes, &labels, "toy").unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!((set.height(), set.width()), (28, 28));
        assert_eq!(set.labels(), &[7, 2, 1]);
    }

    #[test]
    fn normalization_endpoints() {
        let bytes = handmade_images(1, 1, 2, |i| if i == 0 { 255 } else { 0 });
        let set = LabeledImageSet::from_idx(&bytes, &[0, 0, 8, 1, 0, 0, 0, 1, 4], "x").unwrap();
        assert_eq!(set.image(0), &[1.0, 0.0]);
    }

    #[test]
    fn truncated_payload() {
        let bytes = handmade_images(2, 4, 4, |_| 1);
        assert!(matches!(parse_idx(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(parse_idx(&bytes[..6]).is_err());
        assert!(parse_idx(&[0, 0]).is_err());
    }

    #[test]
    fn bad_type_and_dimension_count() {
        assert!(parse_idx(&[0, 0, 0x07, 1, 0, 0, 0, 0]).is_err());
        assert!(parse_idx(&[0, 0, 0x08, 0]).is_err());
        assert!(parse_idx(&[0, 0, 0x08, 4, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9]).is_err());
        assert!(parse_idx(&[1, 0, 0x08, 1, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn wider_types_are_big_endian() {
        let mut v = vec![0, 0, 0x0B, 1, 0, 0, 0, 2];
        v.extend_from_slice(&(-2i16).to_be_bytes());
        v.extend_from_slice(&300i16.to_be_bytes());
        assert_eq!(parse_idx(&v).unwrap().data, IdxData::I16(vec![-2, 300]));
        let mut f = vec![0, 0, 0x0D, 1, 0, 0, 0, 1];
        f.extend_from_slice(&1.5f32.to_be_bytes());
        assert_eq!(parse_idx(&f).unwrap().data, IdxData::F32(vec![1.5]));
    }

    #[test]
    fn write_then_parse() {
        let bytes = write_idx_u8(&[2, 3], &[1, 2, 3, 4, 5, 6]).unwrap();
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims, vec![2, 3]);
        assert_eq!(t.data, IdxData::U8(vec![1, 2, 3, 4, 5, 6]));
        assert!(write_idx_u8(&[2, 2], &[0; 3]).is_err());
    }
}
