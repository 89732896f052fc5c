//! Synthetic models M1–M4, the Gaussian source sampler and CSV ingestion.
//!
//! All four models push `Z ~ N(0, I₁₀)` through fixed construction matrices,
//! so a dataset is a deterministic function of `(model, n, seed, split)`.
//! Train and test splits draw from separate ChaCha streams of the same seed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numcore::{gemm, DenseMatrix, Trans};

pub const LATENT_DIM: usize = 10;
pub const AMBIENT_DIM: usize = 100;
pub const M2_HIDDEN: usize = 50;

/// The ten-value band shared by `W` (M1) and `W₂` (M2).
pub const BAND: [f64; 10] = [-1.0, -0.78, -0.56, -0.33, -0.11, 0.11, 0.33, 0.56, 0.78, 1.0];
/// The five-value band of `W₁` (M2).
pub const BAND_M2: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

/// Shift applied inside the M4 logarithm so nonpositive inputs stay finite.
pub const M4_LOG_SHIFT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SyntheticModel {
    M1,
    M2,
    M3,
    M4,
}

impl SyntheticModel {
    pub const ALL: [SyntheticModel; 4] = [Self::M1, Self::M2, Self::M3, Self::M4];

    /// Maps a batch of latent draws (`n × 10`) to ambient samples (`n × 100`).
    pub fn transform(self, z: &DenseMatrix) -> Result<DenseMatrix> {
        if z.cols() != LATENT_DIM {
            return Err(crate::error::shape(
                "SyntheticModel::transform",
                format!("latent width {} (expected {LATENT_DIM})", z.cols()),
            ));
        }
        Ok(match self {
            Self::M1 => linear_part(z)?,
            Self::M2 => {
                let h = gemm(z, Trans::No, &build_m2_first(), Trans::Yes)?.map(|v| v.max(0.0));
                gemm(&h, Trans::No, &build_m2_second(), Trans::Yes)?
            }
            Self::M3 => {
                let mut y = linear_part(z)?;
                y.row_iter_mut().for_each(m3_row);
                y
            }
            Self::M4 => {
                let mut y = linear_part(z)?;
                y.row_iter_mut().for_each(m4_row);
                y
            }
        })
    }
}

impl fmt::Display for SyntheticModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::M1 => "M1",
            Self::M2 => "M2",
            Self::M3 => "M3",
            Self::M4 => "M4",
        };
        f.write_str(s)
    }
}

impl FromStr for SyntheticModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(Self::M1),
            "M2" => Ok(Self::M2),
            "M3" => Ok(Self::M3),
            "M4" => Ok(Self::M4),
            _ => Err(Error::Config(format!("unknown synthetic model '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// ChaCha stream ids; every consumer of a run seed draws from its own stream.
pub const TRAIN_DATA_STREAM: u64 = 0;
pub const TEST_DATA_STREAM: u64 = 1;
pub const EVAL_NOISE_STREAM: u64 = 2;
pub const TRAINING_STREAM: u64 = 3;

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => TRAIN_DATA_STREAM,
            Split::Test => TEST_DATA_STREAM,
        }
    }
}

/// Seeded ChaCha generator on a given stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a run seed with a tag (SplitMix64 finalizer), for seeding independent components.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Synthetic {
        model: SyntheticModel,
        seed: u64,
        split: Split,
    },
    File(String),
    Generated(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Synthetic { model, seed, split } => {
                write!(f, "{model} seed={seed} split={split:?}")
            }
            Provenance::File(p) => write!(f, "file {p}"),
            Provenance::Generated(s) => write!(f, "generated {s}"),
        }
    }
}

/// An `n × D` sample matrix (`n ≥ 1`, all finite) with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: DenseMatrix,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(samples: DenseMatrix, provenance: Provenance) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::Contract("dataset must have at least one sample".into()));
        }
        if samples.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset samples"));
        }
        Ok(Self {
            samples,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// `max |X_ij|`, the default generator output bound.
    pub fn max_abs(&self) -> f64 {
        self.samples.max_abs()
    }
}

/// `W` of M1: column `j` holds [`BAND`] in rows `10j..10j+10` (0-based).
pub fn build_m1_matrix() -> DenseMatrix {
    DenseMatrix::from_fn(AMBIENT_DIM, LATENT_DIM, |i, j| {
        if i / 10 == j {
            BAND[i % 10]
        } else {
            0.0
        }
    })
}

/// `W₁` of M2 (`50 × 10`): column `j` holds [`BAND_M2`] in rows `5j..5j+5`.
pub fn build_m2_first() -> DenseMatrix {
    DenseMatrix::from_fn(M2_HIDDEN, LATENT_DIM, |i, j| {
        if i / 5 == j {
            BAND_M2[i % 5]
        } else {
            0.0
        }
    })
}

/// `W₂` of M2 (`100 × 50`): column `j` (0-based) has nonzeros in rows `2j`
/// and `2j + 1`, taking [`BAND`] entries `2j mod 10` and `(2j + 1) mod 10`.
pub fn build_m2_second() -> DenseMatrix {
    DenseMatrix::from_fn(AMBIENT_DIM, M2_HIDDEN, |i, j| {
        if i / 2 == j {
            BAND[i % 10]
        } else {
            0.0
        }
    })
}

fn linear_part(z: &DenseMatrix) -> Result<DenseMatrix> {
    gemm(z, Trans::No, &build_m1_matrix(), Trans::Yes)
}

fn m3_row(y: &mut [f64]) {
    for (i, v) in y.iter_mut().enumerate() {
        *v = match i {
            0..=19 => *v * *v / 4.0,
            20..=49 => *v,
            50..=69 => v.exp(),
            _ => (20.0 * *v).sin(),
        };
    }
}

fn m4_row(y: &mut [f64]) {
    for (i, v) in y.iter_mut().enumerate() {
        *v = match i {
            0..=19 => v.abs().sqrt() - 0.1,
            20..=49 => *v,
            50..=69 => (v.abs() + M4_LOG_SHIFT).ln() + 0.5,
            _ => (20.0 * *v).cos(),
        };
    }
}

/// `n × dim` matrix of i.i.d. standard normals.
pub fn gaussian_matrix<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, dim: usize) -> DenseMatrix {
    let data: Vec<f64> = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
    DenseMatrix::from_raw(n, dim, data)
}


/// Draws `n` samples of `model` from the given split's stream.
pub fn sample_synthetic(model: SyntheticModel, n: usize, seed: u64, split: Split) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Contract("sample count must be at least 1".into()));
    }
    let z = gaussian_matrix(&mut stream_rng(seed, split.stream()), n, LATENT_DIM);
    Dataset::new(model.transform(&z)?, Provenance::Synthetic { model, seed, split })
}

pub fn sample_m1(n: usize, seed: u64) -> Result<Dataset> {
    sample_synthetic(SyntheticModel::M1, n, seed, Split::Train)
}

pub fn sample_m2(n: usize, seed: u64) -> Result<Dataset> {
    sample_synthetic(SyntheticModel::M2, n, seed, Split::Train)
}

pub fn sample_m3(n: usize, seed: u64) -> Result<Dataset> {
    sample_synthetic(SyntheticModel::M3, n, seed, Split::Train)
}

pub fn sample_m4(n: usize, seed: u64) -> Result<Dataset> {
    sample_synthetic(SyntheticModel::M4, n, seed, Split::Train)
}

/// Train and held-out test sets from disjoint streams of one seed.
pub fn train_test(model: SyntheticModel, n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    Ok((
        sample_synthetic(model, n_train, seed, Split::Train)?,
        sample_synthetic(model, n_test, seed, Split::Test)?,
    ))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CsvOptions {
    pub has_header: bool,
    /// Rescale each column to `[0, 1]`; constant columns map to 0.
    pub min_max: bool,
}

fn ingest(path: &Path, detail: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Reads a rectangular numeric CSV.
pub fn load_csv(path: impl AsRef<Path>, opts: CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest(path, e.to_string()))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ingest(path, e.to_string()))?;
        let line = i + 1 + usize::from(opts.has_header);
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(ingest(
                    path,
                    format!("line {line}: {} fields, expected {c}", record.len()),
                ))
            }
            _ => {}
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                ingest(path, format!("line {line}, column {}: not a number: '{cell}'", j + 1))
            })?;
            if !v.is_finite() {
                return Err(ingest(path, format!("line {line}, column {}: non-finite value", j + 1)));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| ingest(path, "no data rows"))?;
    let mut samples = DenseMatrix::new(rows, cols, data)?;
    if opts.min_max {
        min_max_scale(&mut samples);
    }
    Dataset::new(samples, Provenance::File(path.display().to_string()))
}

/// Rescales each column to `[0, 1]` in place.
pub fn min_max_scale(x: &mut DenseMatrix) {
    for j in 0..x.cols() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..x.rows() {
            lo = lo.min(x.get(i, j));
            hi = hi.max(x.get(i, j));
        }
        let span = hi - lo;
        for i in 0..x.rows() {
            let v = if span > 0.0 { (x.get(i, j) - lo) / span } else { 0.0 };
            x.set(i, j, v);
        }
    }
}

/// Writes samples as CSV with an optional header of column names `x1..xD`.
pub fn write_csv(path: impl AsRef<Path>, samples: &DenseMatrix, header: bool) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| ingest(path, e.to_string()))?;
    let io = |e: csv::Error| ingest(path, e.to_string());
    if header {
        w.write_record((1..=samples.cols()).map(|j| format!("x{j}"))).map_err(io)?;
    }
    for row in samples.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
