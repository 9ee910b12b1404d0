//! MNIST IDX ingestion and the datasets fed to the models.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Unsigned-byte images exactly as stored in an IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image-major then row-major.
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }
}

/// Normalized images with their digit labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Matrix,
    labels: Vec<u8>,
    image_shape: (usize, usize),
}

impl Dataset {
    pub fn new(images: Matrix, labels: Vec<u8>, image_shape: (usize, usize)) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::Usage(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if image_shape.0 * image_shape.1 != images.cols() {
            return Err(Error::Usage(format!(
                "image shape {image_shape:?} does not cover {} pixels",
                images.cols()
            )));
        }
        if let Some(v) = images.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Usage(format!("pixel value {v} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|l| **l > 9) {
            return Err(Error::Usage(format!("label {l} outside 0-9")));
        }
        Ok(Self {
            images,
            labels,
            image_shape,
        })
    }

    pub fn images(&self) -> &Matrix {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// `(rows, cols)` of one image.
    pub fn image_shape(&self) -> (usize, usize) {
        self.image_shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    /// Keeps the listed samples in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            image_shape: self.image_shape,
        }
    }

    /// First `n` samples (all of them if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Samples of one digit, original order preserved.
pub fn filter_class(ds: &Dataset, digit: u8) -> Dataset {
    let idx: Vec<usize> = ds
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == digit)
        .map(|(i, _)| i)
        .collect();
    ds.subset(&idx)
}

/// Scales bytes into `[0, 1]` by dividing by 255.
pub fn normalize(raw: &RawImages) -> Matrix {
    let data = raw.pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    Matrix::from_vec(raw.count, raw.pixels_per_image(), data).expect("pixel count checked at parse")
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Parse {
                context: path.display().to_string(),
                offset: 0,
                message: format!("gzip: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            context: self.context.to_string(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(self.err(self.bytes.len(), format!("file ends inside {what}")));
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..end].try_into().expect("4 bytes"));
        self.pos = end;
        Ok(v)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let m = self.u32("magic number")?;
        if m != expected {
            return Err(self.err(0, format!("magic 0x{m:08x}, expected 0x{expected:08x}")));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let have = self.bytes.len() - self.pos;
        if have < len {
            return Err(self.err(
                self.bytes.len(),
                format!("payload truncated: need {len} bytes after header, have {have}"),
            ));
        }
        if have > len {
            return Err(self.err(self.pos + len, format!("{} trailing bytes", have - len)));
        }
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        Ok(out)
    }
}

pub fn parse_idx_images(bytes: &[u8], context: &str) -> Result<RawImages> {
    let mut r = Reader {
        bytes,
        pos: 0,
        context,
    };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| r.err(4, "dimension product overflows"))?;
    let pixels = r.payload(len)?.to_vec();
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8], context: &str) -> Result<Vec<u8>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        context,
    };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32("label count")? as usize;
    let labels = r.payload(count)?;
    if let Some(i) = labels.iter().position(|&l| l > 9) {
        return Err(r.err(8 + i, format!("label {} outside 0-9", labels[i])));
    }
    Ok(labels.to_vec())
}

/// Reads an IDX image file, raw or gzip-wrapped.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<RawImages> {
    let path = path.as_ref();
    parse_idx_images(&read_maybe_gzip(path)?, &path.display().to_string())
}

/// Reads an IDX label file, raw or gzip-wrapped.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(&read_maybe_gzip(path)?, &path.display().to_string())
}

fn dimension(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Usage(format!("dimension {v} does not fit in 32 bits")))
}

pub fn encode_idx_images(raw: &RawImages) -> Result<Vec<u8>> {
    if raw.pixels.len() != raw.count * raw.pixels_per_image() {
        return Err(Error::Usage(
            "pixel buffer does not match dimensions".into(),
        ));
    }
    let mut out = Vec::with_capacity(16 + raw.pixels.len());
    for v in [
        IMAGE_MAGIC,
        dimension(raw.count)?,
        dimension(raw.rows)?,
        dimension(raw.cols)?,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&raw.pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&dimension(labels.len())?.to_be_bytes());
    out.extend_from_slice(labels);
    Ok(out)
}

/// Converts a dataset back to IDX bytes, rounding each pixel to the nearest byte.
pub fn to_raw_images(ds: &Dataset) -> RawImages {
    RawImages {
        count: ds.len(),
        rows: ds.image_shape.0,
        cols: ds.image_shape.1,
        pixels: ds
            .images
            .as_slice()
            .iter()
            .map(|&v| (v * 255.0 + 0.5).floor() as u8)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} (or .gz) not found", plain.display()),
    )))
}

/// Loads one split of MNIST from `dir` using the standard file names.
pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let images = load_idx_images(find_file(
        dir,
        &format!("{}-images-idx3-ubyte", split.prefix()),
    )?)?;
    let labels = load_idx_labels(find_file(
        dir,
        &format!("{}-labels-idx1-ubyte", split.prefix()),
    )?)?;
    if images.count != labels.len() {
        return Err(Error::Parse {
            context: dir.display().to_string(),
            offset: 4,
            message: format!("{} images but {} labels", images.count, labels.len()),
        });
    }
    let shape = (images.rows, images.cols);
    Dataset::new(normalize(&images), labels, shape)
}

/// Writes `ds` as an IDX image/label pair named like an MNIST split.
pub fn write_idx_split(ds: &Dataset, dir: impl AsRef<Path>, split: Split) -> Result<()> {
    let dir = dir.as_ref();
    fs::write(
        dir.join(format!("{}-images-idx3-ubyte", split.prefix())),
        encode_idx_images(&to_raw_images(ds))?,
    )?;
    fs::write(
        dir.join(format!("{}-labels-idx1-ubyte", split.prefix())),
        encode_idx_labels(ds.labels())?,
    )?;
    Ok(())
}

/// Per-pixel noise of the synthetic blobs.
pub const FIXTURE_SIGMA: f64 = 0.05;

/// Two seeded Gaussian blobs labeled 0 and 1, alternating. Class 1's centre
/// sits `3 * FIXTURE_SIGMA` from class 0's along every coordinate.
pub fn synthetic_fixture(seed: u64, n: usize, dim: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.3..0.7)).collect();
    let c1: Vec<f64> = c0
        .iter()
        .map(|&c| {
            let dir = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            c + dir * 3.0 * FIXTURE_SIGMA
        })
        .collect();
    let noise = Normal::new(0.0, FIXTURE_SIGMA).expect("positive sigma");
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let centre = if label == 0 { &c0 } else { &c1 };
        data.extend(
            centre
                .iter()
                .map(|&c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0)),
        );
        labels.push(label);
    }
    let side = (dim as f64).sqrt().round() as usize;
    let shape = if side * side == dim {
        (side, side)
    } else {
        (1, dim)
    };
    Dataset::new(
        Matrix::from_vec(n, dim, data).expect("sized"),
        labels,
        shape,
    )
    .expect("valid fixture")
}
