//! IDX container format (MNIST family).
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for `u8` images with three
//! dimensions, `0x00000801` for `u8` labels with one), one big-endian `u32`
//! per dimension, then the raw payload in row-major order.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::linalg::DenseMatrix;
use crate::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn read_header(bytes: &[u8], path: &Path, magic: u32, ndims: usize) -> Result<Vec<usize>> {
    let header_len = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(format_err(
            path,
            format!(
                "truncated header: expected at least 4 bytes, found {}",
                bytes.len()
            ),
        ));
    }
    let observed = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if observed != magic {
        return Err(format_err(
            path,
            format!(
                "bad magic number: expected {magic:#010x}, found bytes {:02x} {:02x} {:02x} {:02x}",
                bytes[0], bytes[1], bytes[2], bytes[3]
            ),
        ));
    }
    if bytes.len() < header_len {
        return Err(format_err(
            path,
            format!(
                "truncated header: expected {header_len} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    Ok((0..ndims)
        .map(|i| {
            let at = 4 + 4 * i;
            u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize
        })
        .collect())
}

fn check_payload(bytes: &[u8], path: &Path, header_len: usize, payload: usize) -> Result<()> {
    let expected = header_len + payload;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!(
                "{}: expected {expected} bytes, found {}",
                if bytes.len() < expected {
                    "truncated file"
                } else {
                    "trailing bytes"
                },
                bytes.len()
            ),
        ));
    }
    Ok(())
}

/// Parses an image file into an `n × (rows·cols)` matrix scaled by 1/255,
/// returning it with the image shape.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(DenseMatrix, (usize, usize))> {
    let dims = read_header(bytes, path, IMAGES_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    check_payload(bytes, path, 16, n * rows * cols)?;
    let data = bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((DenseMatrix::from_vec(n, rows * cols, data)?, (rows, cols)))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let dims = read_header(bytes, path, LABELS_MAGIC, 1)?;
    check_payload(bytes, path, 8, dims[0])?;
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label IDX pair. The class count is one more than the
/// largest label (zero for an empty set).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let label_bytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (features, _) = parse_idx_images(&image_bytes, ip)?;
    let labels = parse_idx_labels(&label_bytes, lp)?;
    if features.rows() != labels.len() {
        return Err(format_err(
            lp,
            format!(
                "{} labels for {} images in {}",
                labels.len(),
                features.rows(),
                ip.display()
            ),
        ));
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, class_count)
}

/// Writes a dataset as an IDX pair with the given image shape. Features are
/// stored as `round(255·x)`, so datasets loaded from IDX round-trip exactly.
pub fn write_idx(
    ds: &Dataset,
    image_shape: (usize, usize),
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (rows, cols) = image_shape;
    if rows * cols != ds.dim() && !ds.is_empty() {
        return Err(Error::invalid(format!(
            "image shape {rows}x{cols} does not match feature width {}",
            ds.dim()
        )));
    }
    if ds.labels.iter().any(|&l| l > 255) {
        return Err(Error::invalid("IDX labels must fit in a byte"));
    }
    let n = ds.len() as u32;
    let mut images = Vec::with_capacity(16 + ds.len() * rows * cols);
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&n.to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    images.extend(
        ds.features
            .as_slice()
            .iter()
            .map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    labels.extend(ds.labels.iter().map(|&l| l as u8));

    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, images).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, labels).map_err(|e| Error::io(lp, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two 2×2 images: [[0, 255], [51, 102]] and [[255, 0], [0, 255]].
    const IMAGES: [u8; 24] = [
        0x00, 0x00, 0x08, 0x03, // magic
        0x00, 0x00, 0x00, 0x02, // count
        0x00, 0x00, 0x00, 0x02, // rows
        0x00, 0x00, 0x00, 0x02, // cols
        0, 255, 51, 102, //
        255, 0, 0, 255,
    ];
    const LABELS: [u8; 10] = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 7, 3];

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn parses_hand_written_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let ip = write(dir.path(), "img", &IMAGES);
        let lp = write(dir.path(), "lbl", &LABELS);
        let ds = load_idx(&ip, &lp).unwrap();
        let expected = DenseMatrix::from_rows(&[&[0.0, 1.0, 0.2, 0.4], &[1.0, 0.0, 0.0, 1.0]]);
        assert_eq!(ds.features, expected);
        assert_eq!(ds.labels, vec![7, 3]);
        assert_eq!(ds.class_count, 8);
    }

    #[test]
    fn empty_payload() {
        let dir = tempfile::tempdir().unwrap();
        let ip = write(
            dir.path(),
            "img",
            &[0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 28, 0, 0, 0, 28],
        );
        let lp = write(dir.path(), "lbl", &[0, 0, 8, 1, 0, 0, 0, 0]);
        let ds = load_idx(&ip, &lp).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.dim(), 784);
    }

    #[test]
    fn count_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let ip = write(dir.path(), "img", &IMAGES);
        let lp = write(dir.path(), "lbl", &[0, 0, 8, 1, 0, 0, 0, 1, 4]);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_names_the_bytes() {
        let mut bytes = IMAGES;
        bytes[3] = 0x01;
        let err = parse_idx_images(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("00 00 08 01"), "{err}");
    }

    #[test]
    fn truncation_reports_lengths() {
        let err = parse_idx_images(&IMAGES[..20], Path::new("x")).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("expected 24") && msg.contains("found 20"),
            "{msg}"
        );
    }

    proptest! {
        #[test]
        fn write_then_load_round_trips(pixels in proptest::collection::vec(any::<u8>(), 0..5usize * 6), seed in 0usize..10) {
            let n = pixels.len() / 6;
            let data: Vec<f64> = pixels[..n * 6].iter().map(|&b| f64::from(b) / 255.0).collect();
            let labels: Vec<usize> = (0..n).map(|i| (i + seed) % 4).collect();
            let ds = Dataset {
                features: DenseMatrix::from_vec(n, 6, data).unwrap(),
                class_count: labels.iter().max().map_or(0, |m| m + 1),
                labels,
            };
            let dir = tempfile::tempdir().unwrap();
            let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
            write_idx(&ds, (2, 3), &ip, &lp).unwrap();
            let back = load_idx(&ip, &lp).unwrap();
            prop_assert_eq!(back.labels, ds.labels);
            prop_assert_eq!(back.features.as_slice(), ds.features.as_slice());
        }
    }
}
