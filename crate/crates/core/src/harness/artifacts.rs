//! On-disk exchange of frames, stacks, uncertainty maps and labels.
//!
//! Frames and masks are numbered 8-bit PNGs (`0000.png`, ...). Real-valued
//! maps are `GBT1` blobs shaped `[channels, height, width]`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gesture::{PseudoLabel, UncertaintyMap};
use crate::image::{read_blob, read_png, write_blob, write_png, ImageBuffer, TensorBlob};

pub fn frame_name(index: usize, ext: &str) -> String {
    format!("{index:04}.{ext}")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Files in `dir` with extension `ext`, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn image_to_blob(img: &ImageBuffer) -> TensorBlob {
    TensorBlob::new(vec![img.channels(), img.height(), img.width()], img.data().to_vec())
        .expect("image dims are consistent")
}

pub fn image_from_blob(blob: &TensorBlob) -> Result<ImageBuffer> {
    match *blob.dims() {
        [c, h, w] => ImageBuffer::from_vec(h, w, c, blob.payload().to_vec()),
        [h, w] => ImageBuffer::from_vec(h, w, 1, blob.payload().to_vec()),
        _ => Err(Error::Format(format!("expected a [C,H,W] blob, got dims {:?}", blob.dims()))),
    }
}

/// Read an image from a `.png` or `.gbt` file.
pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("gbt") => image_from_blob(&read_blob(path)?),
        _ => read_png(path),
    }
}

pub fn write_png_dir(dir: &Path, images: &[ImageBuffer]) -> Result<()> {
    ensure_dir(dir)?;
    for (i, img) in images.iter().enumerate() {
        write_png(img, dir.join(frame_name(i, "png")))?;
    }
    Ok(())
}

pub fn write_blob_dir(dir: &Path, images: &[ImageBuffer]) -> Result<()> {
    ensure_dir(dir)?;
    for (i, img) in images.iter().enumerate() {
        write_blob(&image_to_blob(img), dir.join(frame_name(i, "gbt")))?;
    }
    Ok(())
}

/// Every `.png` in `dir`, or every `.gbt` if there are no PNGs.
pub fn read_image_dir(dir: &Path) -> Result<Vec<ImageBuffer>> {
    let mut files = list_files(dir, "png")?;
    if files.is_empty() {
        files = list_files(dir, "gbt")?;
    }
    files.iter().map(|p| read_image(p)).collect()
}

/// Label as a `[2, H, W]` blob: target then precision.
pub fn label_to_blob(label: &PseudoLabel) -> TensorBlob {
    let mut payload = label.t.clone();
    payload.extend(label.precision.iter().map(|&p| p as f32));
    TensorBlob::new(vec![2, label.height, label.width], payload).expect("label dims are consistent")
}

pub fn label_from_blob(blob: &TensorBlob) -> Result<PseudoLabel> {
    let [2, h, w] = *blob.dims() else {
        return Err(Error::Format(format!("expected a [2,H,W] label blob, got dims {:?}", blob.dims())));
    };
    let (t, p) = blob.payload().split_at(h * w);
    Ok(PseudoLabel {
        height: h,
        width: w,
        t: t.to_vec(),
        precision: p.iter().map(|&v| v as f64).collect(),
    })
}

/// The label exactly as it reads back from disk.
pub fn stored_label(label: &PseudoLabel) -> PseudoLabel {
    PseudoLabel {
        precision: label.precision.iter().map(|&p| p as f32 as f64).collect(),
        ..label.clone()
    }
}

pub fn write_labels(dir: &Path, labels: &[PseudoLabel]) -> Result<()> {
    ensure_dir(dir)?;
    for (i, l) in labels.iter().enumerate() {
        write_blob(&label_to_blob(l), dir.join(frame_name(i, "gbt")))?;
    }
    Ok(())
}

pub fn read_labels(dir: &Path) -> Result<Vec<PseudoLabel>> {
    list_files(dir, "gbt")?.iter().map(|p| label_from_blob(&read_blob(p)?)).collect()
}

/// Uncertainty maps as `[2, H, W]` blobs: mean then variance.
pub fn write_uncertainty(dir: &Path, maps: &[UncertaintyMap]) -> Result<()> {
    ensure_dir(dir)?;
    for (i, m) in maps.iter().enumerate() {
        let planes = ImageBuffer::from_planes(&[&m.mean_image(), &m.variance_image()])?;
        write_blob(&image_to_blob(&planes), dir.join(frame_name(i, "gbt")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_blob_roundtrip() {
        let label = PseudoLabel {
            height: 2,
            width: 3,
            t: vec![0.0, 1.0, 1.0, 0.0, 0.5, 1.0],
            precision: vec![0.1, 0.7, 1.3, 2.0, 0.9, 1.0 / 3.0],
        };
        let back = label_from_blob(&label_to_blob(&label)).unwrap();
        assert_eq!(back, stored_label(&label));
        assert_eq!(stored_label(&back), back);
    }

    #[test]
    fn dirs_roundtrip_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        let imgs: Vec<_> = (0..12).map(|k| ImageBuffer::filled(3, 4, 3, k as f32 / 255.0)).collect();
        write_png_dir(dir.path(), &imgs).unwrap();
        assert_eq!(read_image_dir(dir.path()).unwrap(), imgs);
        let sub = dir.path().join("b");
        let maps: Vec<_> = (0..3).map(|k| ImageBuffer::filled(2, 2, 3, k as f32 * 0.3337)).collect();
        write_blob_dir(&sub, &maps).unwrap();
        assert_eq!(read_image_dir(&sub).unwrap(), maps);
    }

    #[test]
    fn wrong_label_rank_is_format_error() {
        let blob = TensorBlob::new(vec![3, 1, 1], vec![0.0; 3]).unwrap();
        assert!(matches!(label_from_blob(&blob), Err(Error::Format(_))));
    }
}
