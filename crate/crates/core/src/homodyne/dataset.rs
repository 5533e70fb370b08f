//! Binary training sets pairing simulated scans with labels.
//!
//! Layout (little-endian): `"SQZT"`, u32 version, u32 count, u32 seq_len,
//! u8 label kind (0 = params, 1 = cholesky), u32 m, f64 ranges[6], u64 seed,
//! then per record `f32 phases[seq_len]`, `f32 values[seq_len]`,
//! `f32 labels[label_len]`.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scan::{sample_scan, PhaseMode, QuadratureScan, MIN_SCAN_POINTS};
use crate::error::{Error, Result};
use crate::fock::{
    cholesky_factor, default_working_dim, squeezed_thermal_state, CholeskyFactor,
    SqueezedThermalParams,
};

pub const MAGIC: [u8; 4] = *b"SQZT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 4 + 4 + 4 + 4 + 1 + 4 + 6 * 8 + 8;
pub const PARAMS_LABEL_LEN: usize = 4;

/// Records generated per parallel batch before the single writer flushes them.
const WRITE_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    /// `(r/r_max, cos θ_s, sin θ_s, n_th/n_max)`.
    Params,
    /// Packed Cholesky factor of the state at dimension `m`.
    Cholesky,
}

impl LabelKind {
    fn code(self) -> u8 {
        match self {
            LabelKind::Params => 0,
            LabelKind::Cholesky => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(LabelKind::Params),
            1 => Ok(LabelKind::Cholesky),
            other => Err(Error::Format(format!("unknown label kind {other}"))),
        }
    }
}

impl std::str::FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "params" => Ok(LabelKind::Params),
            "cholesky" => Ok(LabelKind::Cholesky),
            other => Err(Error::InvalidParameter(format!("unknown label kind {other:?}"))),
        }
    }
}

/// Uniform sampling ranges for `(r, θ_s, n_th)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub r: (f64, f64),
    pub theta_s: (f64, f64),
    pub n_th: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            r: (0.0, 1.75),
            theta_s: (0.0, TAU),
            n_th: (0.0, 1.2),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("r", self.r), ("theta_s", self.theta_s), ("n_th", self.n_th)] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::InvalidParameter(format!("{name} range [{lo}, {hi}]")));
            }
        }
        if self.r.0 < 0.0 || self.n_th.0 < 0.0 {
            return Err(Error::InvalidParameter("r and n_th ranges must be nonnegative".into()));
        }
        Ok(())
    }

    /// Divisor used to normalize `r` in parameter labels.
    pub fn r_scale(&self) -> f64 {
        if self.r.1 > 0.0 {
            self.r.1
        } else {
            1.0
        }
    }

    pub fn n_scale(&self) -> f64 {
        if self.n_th.1 > 0.0 {
            self.n_th.1
        } else {
            1.0
        }
    }

    fn to_array(self) -> [f64; 6] {
        [self.r.0, self.r.1, self.theta_s.0, self.theta_s.1, self.n_th.0, self.n_th.1]
    }

    fn from_array(a: [f64; 6]) -> Self {
        Self {
            r: (a[0], a[1]),
            theta_s: (a[2], a[3]),
            n_th: (a[4], a[5]),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<SqueezedThermalParams> {
        let mut uniform = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        let r = uniform(self.r);
        let theta = uniform(self.theta_s);
        let n = uniform(self.n_th);
        SqueezedThermalParams::new(r, theta, n)
    }

    pub fn encode_params(&self, p: &SqueezedThermalParams) -> [f64; PARAMS_LABEL_LEN] {
        [
            p.r() / self.r_scale(),
            p.theta_s().cos(),
            p.theta_s().sin(),
            p.n_th() / self.n_scale(),
        ]
    }

    /// Inverse of [`ParamRanges::encode_params`], with the clamping applied to
    /// network outputs.
    pub fn decode_params(&self, label: &[f64]) -> Result<SqueezedThermalParams> {
        if label.len() != PARAMS_LABEL_LEN {
            return Err(Error::DimensionMismatch {
                expected: PARAMS_LABEL_LEN,
                got: label.len(),
            });
        }
        let r = self.r_scale() * label[0].clamp(0.0, 1.0);
        let theta = if label[1] == 0.0 && label[2] == 0.0 {
            0.0
        } else {
            label[2].atan2(label[1])
        };
        let n = self.n_scale() * label[3].clamp(0.0, 1.0);
        SqueezedThermalParams::new(r, theta, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub ranges: ParamRanges,
    pub count: usize,
    pub seq_len: usize,
    pub label_kind: LabelKind,
    /// Truncation for Cholesky labels; ignored for parameter labels.
    pub m: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub count: usize,
    pub seq_len: usize,
    pub label_kind: LabelKind,
    /// 0 unless labels are Cholesky factors.
    pub m: usize,
    pub ranges: ParamRanges,
    pub seed: u64,
}

impl DatasetHeader {
    pub fn label_len(&self) -> usize {
        match self.label_kind {
            LabelKind::Params => PARAMS_LABEL_LEN,
            LabelKind::Cholesky => CholeskyFactor::packed_len(self.m),
        }
    }

    pub fn record_len(&self) -> usize {
        2 * self.seq_len + self.label_len()
    }

    fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return Err(Error::Format("dataset count must be at least 1".into()));
        }
        if self.seq_len < MIN_SCAN_POINTS {
            return Err(Error::Format(format!("seq_len {} < {MIN_SCAN_POINTS}", self.seq_len)));
        }
        match self.label_kind {
            LabelKind::Cholesky if self.m == 0 => {
                Err(Error::Format("Cholesky labels need m >= 1".into()))
            }
            LabelKind::Params if self.m != 0 => {
                Err(Error::Format("parameter labels must carry m = 0".into()))
            }
            _ => Ok(()),
        }
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&(self.count as u32).to_le_bytes())?;
        w.write_all(&(self.seq_len as u32).to_le_bytes())?;
        w.write_all(&[self.label_kind.code()])?;
        w.write_all(&(self.m as u32).to_le_bytes())?;
        for v in self.ranges.to_array() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        Ok(())
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(r)? as usize;
        let seq_len = read_u32(r)? as usize;
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let label_kind = LabelKind::from_code(kind[0])?;
        let m = read_u32(r)? as usize;
        let mut ranges = [0f64; 6];
        for v in ranges.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let header = Self {
            version,
            count,
            seq_len,
            label_kind,
            m,
            ranges: ParamRanges::from_array(ranges),
            seed: u64::from_le_bytes(b),
        };
        header.validate()?;
        Ok(header)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// SplitMix64 finalizer over `(seed, index)`: per-record seeds independent of
/// generation order.
pub fn record_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub phases: Vec<f32>,
    pub values: Vec<f32>,
    pub labels: Vec<f32>,
}

impl Record {
    pub fn scan(&self) -> Result<QuadratureScan> {
        QuadratureScan::new(
            self.phases.iter().map(|&p| p as f64).collect(),
            self.values.iter().map(|&v| v as f64).collect(),
        )
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        for v in self.phases.iter().chain(&self.values).chain(&self.labels) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Ground-truth parameters of record `index`, reproducible in isolation.
pub fn record_params(header: &DatasetHeader, index: usize) -> Result<SqueezedThermalParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(header.seed, index as u64));
    header.ranges.draw(&mut rng)
}

/// Regenerates record `index` exactly as the dataset writer produced it.
pub fn generate_record(header: &DatasetHeader, index: usize) -> Result<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(header.seed, index as u64));
    let params = header.ranges.draw(&mut rng)?;
    let scan_seed: u64 = rng.random();
    let scan = sample_scan(&params, header.seq_len, PhaseMode::UniformRandomSorted, scan_seed)?;
    let labels: Vec<f64> = match header.label_kind {
        LabelKind::Params => header.ranges.encode_params(&params).to_vec(),
        LabelKind::Cholesky => {
            let m_work = default_working_dim(header.m, params.r());
            let rho = squeezed_thermal_state(&params, header.m, m_work)?;
            cholesky_factor(&rho)?.pack()
        }
    };
    Ok(Record {
        phases: scan.phases().iter().map(|&p| p as f32).collect(),
        values: scan.values().iter().map(|&v| v as f32).collect(),
        labels: labels.into_iter().map(|v| v as f32).collect(),
    })
}

/// Writes a dataset file. Records are produced in parallel and written in
/// index order by a single writer.
pub fn gen_dataset(spec: &DatasetSpec, path: &Path) -> Result<DatasetHeader> {
    spec.ranges.validate()?;
    if spec.count > u32::MAX as usize || spec.seq_len > u32::MAX as usize {
        return Err(Error::InvalidParameter("count or seq_len exceeds u32".into()));
    }
    let header = DatasetHeader {
        version: VERSION,
        count: spec.count,
        seq_len: spec.seq_len,
        label_kind: spec.label_kind,
        m: match spec.label_kind {
            LabelKind::Params => 0,
            LabelKind::Cholesky => spec.m,
        },
        ranges: spec.ranges,
        seed: spec.seed,
    };
    header
        .validate()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut w = BufWriter::new(File::create(path)?);
    header.write_to(&mut w)?;
    let mut start = 0;
    while start < header.count {
        let end = (start + WRITE_CHUNK).min(header.count);
        let chunk: Vec<Record> = (start..end)
            .into_par_iter()
            .map(|i| generate_record(&header, i))
            .collect::<Result<_>>()?;
        for rec in &chunk {
            rec.write_to(&mut w)?;
        }
        start = end;
    }
    w.flush()?;
    Ok(header)
}

/// Random-access reader over a dataset file.
pub struct DatasetReader {
    header: DatasetHeader,
    file: BufReader<File>,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = BufReader::new(File::open(path)?);
        let header = DatasetHeader::read_from(&mut file)?;
        let expected = HEADER_LEN + (header.count * header.record_len() * 4) as u64;
        let actual = file.get_ref().metadata()?.len();
        if actual != expected {
            return Err(Error::Format(format!(
                "file holds {actual} bytes, header implies {expected}"
            )));
        }
        Ok(Self { header, file })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn read_record(&mut self, index: usize) -> Result<Record> {
        if index >= self.header.count {
            return Err(Error::InvalidParameter(format!(
                "record {index} out of range ({} records)",
                self.header.count
            )));
        }
        let offset = HEADER_LEN + (index * self.header.record_len() * 4) as u64;
        self.file.seek(SeekFrom::Start(offset))?;
        let n = self.header.seq_len;
        Ok(Record {
            phases: read_f32s(&mut self.file, n)?,
            values: read_f32s(&mut self.file, n)?,
            labels: read_f32s(&mut self.file, self.header.label_len())?,
        })
    }

    /// Streams every record in order.
    pub fn for_each_record<F: FnMut(usize, Record) -> Result<()>>(&mut self, mut f: F) -> Result<()> {
        self.file.seek(SeekFrom::Start(HEADER_LEN))?;
        let n = self.header.seq_len;
        for i in 0..self.header.count {
            let rec = Record {
                phases: read_f32s(&mut self.file, n)?,
                values: read_f32s(&mut self.file, n)?,
                labels: read_f32s(&mut self.file, self.header.label_len())?,
            };
            f(i, rec)?;
        }
        Ok(())
    }
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; 4 * n];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
