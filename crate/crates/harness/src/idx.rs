//! Big-endian IDX files (the MNIST container format).

use std::path::Path;

use packed_core::Tensor;

use crate::data::{Split, Targets};
use crate::error::{HarnessError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

fn format_err<T>(path: &Path, offset: usize, reason: impl Into<String>) -> Result<T> {
    Err(HarnessError::Format {
        path: path.to_path_buf(),
        offset,
        reason: reason.into(),
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => format_err(path, bytes.len(), "truncated header"),
    }
}

/// Checks the magic and returns the dimensions and the payload offset.
fn header(bytes: &[u8], magic: u32, path: &Path) -> Result<(Vec<usize>, usize)> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return format_err(path, 0, format!("bad magic {found:#010x}, expected {magic:#010x}"));
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|d| be_u32(bytes, 4 + 4 * d, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let offset = 4 + 4 * ndim;
    let want = dims.iter().product::<usize>();
    if bytes.len() < offset + want {
        return format_err(path, bytes.len(), format!("truncated payload: {want} bytes expected after the header"));
    }
    if bytes.len() > offset + want {
        return format_err(path, offset + want, "trailing bytes after the payload");
    }
    Ok((dims, offset))
}

/// Reads an image file and a label file: images become `[N, 1, H, W]` in `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Split> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img = read(ip)?;
    let lab = read(lp)?;
    let (dims, off) = header(&img, IMAGE_MAGIC, ip)?;
    let (ldims, loff) = header(&lab, LABEL_MAGIC, lp)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if ldims[0] != n {
        return format_err(lp, 4, format!("{} labels for {n} images", ldims[0]));
    }
    let pixels = img[off..].iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = lab[loff..].iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Ok(Split::new(
        Tensor::new(vec![n, 1, h, w], pixels)?,
        Targets::Classes { labels, num_classes },
    )?)
}

/// Encodes images (`[N, 1, H, W]` or `[N, H, W]`, values in `[0, 1]`) as an IDX image file.
pub fn encode_images(images: &Tensor) -> Result<Vec<u8>> {
    let s = images.shape();
    let (n, h, w) = match s.len() {
        3 => (s[0], s[1], s[2]),
        4 if s[1] == 1 => (s[0], s[2], s[3]),
        _ => return Err(HarnessError::Data(format!("cannot encode shape {s:?} as IDX images"))),
    };
    let mut out = IMAGE_MAGIC.to_be_bytes().to_vec();
    for d in [n, h, w] {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = LABEL_MAGIC.to_be_bytes().to_vec();
    out.extend((labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| HarnessError::Data(format!("label {l} does not fit a byte")))?);
    }
    Ok(out)
}
