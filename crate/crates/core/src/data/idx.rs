//! IDX files as distributed for MNIST, Fashion-MNIST and Kuzushiji-MNIST.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::dataset::ImageDataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a whole file, transparently inflating gzip content.
pub(crate) fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(
                path,
                format!(
                    "truncated header: need 4 bytes at offset {offset}, file has {}",
                    bytes.len()
                ),
            )
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::format(
            path,
            format!("bad magic 0x{magic:08x} at offset 0, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::format(
            path,
            format!(
                "truncated: header at offset 4 declares {count} images of {rows}x{cols} \
                 ({need} bytes), file has {}",
                bytes.len()
            ),
        ));
    }
    Ok((count, rows, cols, bytes[16..need].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(Error::format(
            path,
            format!(
                "truncated: header at offset 4 declares {count} labels ({need} bytes), file has {}",
                bytes.len()
            ),
        ));
    }
    Ok(bytes[8..need].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label IDX pair.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    name: &str,
    class_count: usize,
) -> Result<ImageDataset> {
    let (count, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?, labels_path)?;
    if labels.len() != count {
        return Err(Error::format(
            labels_path,
            format!(
                "count field at offset 4 is {}, but {} declares {count} images",
                labels.len(),
                images_path.display()
            ),
        ));
    }
    if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
        return Err(Error::format(
            labels_path,
            format!("label {bad} at offset {} exceeds {class_count} classes", 8 + i),
        ));
    }
    ImageDataset::new(name, class_count, (1, rows, cols), pixels, labels)
}

/// Serializes images and labels in IDX layout (used for fixtures and exports).
pub fn encode_idx(ds: &ImageDataset) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + ds.len() * ds.image_len());
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    images.extend_from_slice(&(ds.height as u32).to_be_bytes());
    images.extend_from_slice(&(ds.width as u32).to_be_bytes());
    for i in 0..ds.len() {
        images.extend_from_slice(&ds.pixels(i)[..ds.height * ds.width]);
    }
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    labels.extend(ds.labels().iter().map(|&l| l as u8));
    (images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn round_trip_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGES_MAGIC, &[2, 2, 2]);
        img.extend_from_slice(&[1, 2, 3, 4, 5, 6, 7, 8]);
        let mut lab = header(LABELS_MAGIC, &[2]);
        lab.extend_from_slice(&[3, 9]);
        let ds = load_idx(
            &write(dir.path(), "i", &img),
            &write(dir.path(), "l", &lab),
            "t",
            10,
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.pixels(1), &[5, 6, 7, 8]);
        assert_eq!(ds.labels(), &[3, 9]);
        let (i2, l2) = encode_idx(&ds);
        assert_eq!((i2, l2), (img, lab));
    }

    #[test]
    fn wrong_label_magic_names_expected_value() {
        let dir = tempfile::tempdir().unwrap();
        let img = header(IMAGES_MAGIC, &[0, 28, 28]);
        let lab = header(IMAGES_MAGIC, &[0]);
        let err = load_idx(
            &write(dir.path(), "i", &img),
            &write(dir.path(), "l", &lab),
            "t",
            10,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("0x00000801"), "{err}");
    }

    #[test]
    fn empty_valid_file_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_idx(
            &write(dir.path(), "i", &header(IMAGES_MAGIC, &[0, 28, 28])),
            &write(dir.path(), "l", &header(LABELS_MAGIC, &[0])),
            "t",
            10,
        )
        .unwrap();
        assert!(ds.is_empty());
        assert_eq!((ds.height, ds.width), (28, 28));
    }

    #[test]
    fn truncation_and_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGES_MAGIC, &[2, 2, 2]);
        img.extend_from_slice(&[1, 2, 3]);
        let mut lab = header(LABELS_MAGIC, &[2]);
        lab.extend_from_slice(&[0, 1]);
        let l = write(dir.path(), "l", &lab);
        let err = load_idx(&write(dir.path(), "i", &img), &l, "t", 10).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let mut img = header(IMAGES_MAGIC, &[1, 1, 1]);
        img.push(0);
        let err = load_idx(&write(dir.path(), "i2", &img), &l, "t", 10).unwrap_err();
        assert!(err.to_string().contains("count"), "{err}");
        assert!(load_idx(&write(dir.path(), "i3", &[0, 0]), &l, "t", 10).is_err());
    }

    #[test]
    fn gzip_input_is_inflated() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGES_MAGIC, &[1, 1, 2]);
        img.extend_from_slice(&[9, 8]);
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&img).unwrap();
        let gz = enc.finish().unwrap();
        let mut lab = header(LABELS_MAGIC, &[1]);
        lab.push(4);
        let ds = load_idx(
            &write(dir.path(), "i.gz", &gz),
            &write(dir.path(), "l", &lab),
            "t",
            10,
        )
        .unwrap();
        assert_eq!(ds.pixels(0), &[9, 8]);
    }
}
