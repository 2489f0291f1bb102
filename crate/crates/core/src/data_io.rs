//! Dataset loaders: MNIST IDX files and pre-extracted feature files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;
const FEATURE_MAGIC: &[u8; 4] = b"CTFF";
const FEATURE_VERSION: u32 = 1;

/// Row-major non-negative features with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    n_features: usize,
    n_classes: usize,
    features: Vec<f32>,
    labels: Vec<u16>,
}

impl LabeledDataset {
    pub fn new(
        n_features: usize,
        n_classes: usize,
        features: Vec<f32>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        if n_features == 0 || n_classes == 0 {
            return Err(Error::Format {
                what: "dataset",
                detail: format!("{n_features} features, {n_classes} classes"),
            });
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::Format {
                what: "dataset",
                detail: format!(
                    "{} feature values for {} samples of width {n_features}",
                    features.len(),
                    labels.len()
                ),
            });
        }
        if let Some(pos) = features.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NegativeFeature {
                sample: pos / n_features,
                feature: pos % n_features,
                value: features[pos],
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::Format {
                what: "dataset",
                detail: format!("label {l} outside {n_classes} classes"),
            });
        }
        Ok(Self {
            n_features,
            n_classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self, index: usize) -> &[f32] {
        &self.features[index * self.n_features..(index + 1) * self.n_features]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index] as usize
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            n_features: self.n_features,
            n_classes: self.n_classes,
            features: self.features[..n * self.n_features].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// FNV-1a digest of the little-endian payload, stable across platforms.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for v in &self.features {
            eat(&v.to_le_bytes());
        }
        for l in &self.labels {
            eat(&l.to_le_bytes());
        }
        h
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData(path.to_path_buf()),
            _ => Error::Io(e),
        })
}

fn read_be_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Format {
        what,
        detail: format!("truncated header: {e}"),
    })?;
    Ok(u32::from_be_bytes(b))
}

fn read_payload<R: Read>(r: &mut R, len: usize, what: &'static str) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(len);
    r.take(len as u64).read_to_end(&mut data)?;
    if data.len() != len {
        return Err(Error::Format {
            what,
            detail: format!("payload has {} bytes, header implies {len}", data.len()),
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format {
            what,
            detail: "trailing bytes after payload".into(),
        });
    }
    Ok(data)
}

/// Parses an IDX3 image stream into flattened rows scaled to `[0, 1]`.
pub fn parse_idx_images<R: Read>(mut r: R) -> Result<(usize, Vec<f32>)> {
    const WHAT: &str = "idx images";
    let magic = read_be_u32(&mut r, WHAT)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            what: WHAT,
            detail: format!("magic {magic}, expected {IDX_IMAGES_MAGIC}"),
        });
    }
    let count = read_be_u32(&mut r, WHAT)? as usize;
    let rows = read_be_u32(&mut r, WHAT)? as usize;
    let cols = read_be_u32(&mut r, WHAT)? as usize;
    let pixels = read_payload(&mut r, count * rows * cols, WHAT)?;
    let features = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Ok((rows * cols, features))
}

pub fn parse_idx_labels<R: Read>(mut r: R) -> Result<Vec<u16>> {
    const WHAT: &str = "idx labels";
    let magic = read_be_u32(&mut r, WHAT)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            what: WHAT,
            detail: format!("magic {magic}, expected {IDX_LABELS_MAGIC}"),
        });
    }
    let count = read_be_u32(&mut r, WHAT)? as usize;
    Ok(read_payload(&mut r, count, WHAT)?
        .into_iter()
        .map(u16::from)
        .collect())
}

/// Loads an MNIST split from its image and label IDX files.
pub fn load_mnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let (width, features) = parse_idx_images(open(images_path.as_ref())?)?;
    let labels = parse_idx_labels(open(labels_path.as_ref())?)?;
    if width == 0 || features.len() / width != labels.len() {
        return Err(Error::Format {
            what: "mnist",
            detail: format!(
                "{} images but {} labels",
                features.len() / width.max(1),
                labels.len()
            ),
        });
    }
    LabeledDataset::new(width, 10, features, labels)
}

/// Train and test splits from a directory holding the four standard files.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = dir.as_ref();
    let train = load_mnist(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist(
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Writes a feature file: `CTFF`, version, samples, features, classes
/// (`u32` each), row-major `f32` features, then `u16` labels; all little-endian.
pub fn write_features<W: Write>(data: &LabeledDataset, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(FEATURE_MAGIC)?;
    for v in [
        FEATURE_VERSION,
        data.len() as u32,
        data.n_features as u32,
        data.n_classes as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &data.features {
        w.write_all(&v.to_le_bytes())?;
    }
    for l in &data.labels {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_features_path(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    write_features(data, File::create(path)?)
}

pub fn parse_features<R: Read>(mut r: R) -> Result<LabeledDataset> {
    const WHAT: &str = "feature file";
    let mut header = [0u8; 20];
    r.read_exact(&mut header).map_err(|e| Error::Format {
        what: WHAT,
        detail: format!("truncated header: {e}"),
    })?;
    if &header[0..4] != FEATURE_MAGIC {
        return Err(Error::Format {
            what: WHAT,
            detail: format!("bad magic {:?}", &header[0..4]),
        });
    }
    let field = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, n_samples, n_features, n_classes) = (field(0), field(1), field(2), field(3));
    if version != FEATURE_VERSION {
        return Err(Error::Format {
            what: WHAT,
            detail: format!("unsupported version {version}"),
        });
    }
    if n_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    let (n, f) = (n_samples as usize, n_features as usize);
    let payload = read_payload(&mut r, n * f * 4 + n * 2, WHAT)?;
    let (feat_bytes, label_bytes) = payload.split_at(n * f * 4);
    let features = feat_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels = label_bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
        .collect();
    LabeledDataset::new(f, n_classes as usize, features, labels)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    parse_features(open(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_LABELS_MAGIC, labels.len() as u32] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_pixels_scale_to_unit_interval() {
        let mut pixels = vec![0u8; 8];
        pixels[5] = 255;
        let (width, features) = parse_idx_images(&idx_images(2, 2, 2, &pixels)[..]).unwrap();
        assert_eq!(width, 4);
        assert!(features[..4].iter().all(|&v| v == 0.0));
        assert_eq!(features[5], 1.0);
    }

    #[test]
    fn idx_rejects_bad_magic_and_truncation() {
        let mut bytes = idx_images(1, 2, 2, &[0, 1, 2, 3]);
        assert!(parse_idx_images(&bytes[..bytes.len() - 1]).is_err());
        bytes[3] = 0;
        assert!(parse_idx_images(&bytes[..]).is_err());
        assert!(parse_idx_labels(&idx_images(1, 1, 1, &[0])[..]).is_err());
    }

    #[test]
    fn mnist_count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        std::fs::write(&img, idx_images(2, 1, 2, &[0, 1, 2, 3])).unwrap();
        std::fs::write(&lab, idx_labels(&[1, 2, 3])).unwrap();
        assert!(load_mnist(&img, &lab).is_err());
        std::fs::write(&lab, idx_labels(&[1, 2])).unwrap();
        let ds = load_mnist(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.n_features(), 2);
        assert!(matches!(
            load_mnist(dir.path().join("missing"), &lab),
            Err(Error::MissingData(_))
        ));
    }

    #[test]
    fn empty_feature_file_is_rejected() {
        let mut b = Vec::new();
        b.extend_from_slice(FEATURE_MAGIC);
        for v in [FEATURE_VERSION, 0, 2048, 10] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(parse_features(&b[..]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn negative_feature_is_rejected() {
        let mut b = Vec::new();
        b.extend_from_slice(FEATURE_MAGIC);
        for v in [FEATURE_VERSION, 1, 2, 3] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&0.5f32.to_le_bytes());
        b.extend_from_slice(&(-0.1f32).to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes());
        assert!(matches!(
            parse_features(&b[..]),
            Err(Error::NegativeFeature {
                sample: 0,
                feature: 1,
                ..
            })
        ));
    }

    #[test]
    fn feature_header_arithmetic_is_exact() {
        let ds = LabeledDataset::new(3, 4, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![0, 3]).unwrap();
        let mut buf = Vec::new();
        write_features(&ds, &mut buf).unwrap();
        assert_eq!(buf.len(), 20 + 6 * 4 + 2 * 2);
        assert!(parse_features(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(parse_features(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn feature_file_round_trips(
            n in 1usize..20,
            f in 1usize..12,
            classes in 1usize..100,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let features = (0..n * f).map(|_| rng.random_range(0.0f32..10.0)).collect();
            let labels = (0..n).map(|_| rng.random_range(0..classes as u16)).collect();
            let ds = LabeledDataset::new(f, classes, features, labels).unwrap();
            let mut buf = Vec::new();
            write_features(&ds, &mut buf).unwrap();
            let back = parse_features(&buf[..]).unwrap();
            prop_assert_eq!(back.checksum(), ds.checksum());
            prop_assert_eq!(back, ds);
        }
    }
}
