//! Dataset files.
//!
//! Binary (`.hfp`), all integers and floats little-endian:
//! ```text
//! "HFP1"
//! u32 joint count N, u64 sample count
//! per sample:
//!   u32 action length, UTF-8 action (empty = no label)
//!   N × 2 f32 normalized 2D, N × 3 f32 root-relative 3D meters
//! ```
//! CSV: header `action,j0x2,j0y2,…,j0x3,j0y3,j0z3,…` (all 2D columns, then
//! all 3D columns), one sample per row.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{Dataset, PoseSample};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonGraph;

pub const HFP_MAGIC: &[u8; 4] = b"HFP1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    HfpBinary,
    Csv,
}

impl DataFormat {
    /// `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::HfpBinary,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hfp" | "hfp_binary" => Ok(DataFormat::HfpBinary),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

pub fn write_hfp(data: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(HFP_MAGIC);
    buf.extend_from_slice(&(data.joints as u32).to_le_bytes());
    buf.extend_from_slice(&(data.samples.len() as u64).to_le_bytes());
    for s in &data.samples {
        let label = s.action.as_deref().unwrap_or("");
        buf.extend_from_slice(&(label.len() as u32).to_le_bytes());
        buf.extend_from_slice(label.as_bytes());
        for &v in s.joints2d.iter().chain(&s.joints3d) {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Data(format!("truncated dataset at byte {} while reading {what}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// An empty byte string is an empty dataset of unknown joint count (0).
pub fn read_hfp(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() {
        return Ok(Dataset {
            joints: 0,
            samples: Vec::new(),
        });
    }
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != HFP_MAGIC {
        return Err(Error::Data("not an HFP1 dataset (bad magic)".into()));
    }
    let joints = c.u32("joint count")? as usize;
    let count = c.u64("sample count")?;
    let mut samples = Vec::with_capacity(count.min(1 << 20) as usize);
    for i in 0..count {
        let at = c.pos;
        let len = c.u32("action length")? as usize;
        let label = std::str::from_utf8(c.take(len, "action")?)
            .map_err(|_| Error::Data(format!("sample {i} at byte {at}: action is not UTF-8")))?;
        let mut coords = c.take(joints * 5 * 4, "coordinates")?.chunks_exact(4).map(|b| {
            f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64
        });
        let joints2d: Vec<f64> = coords.by_ref().take(joints * 2).collect();
        let joints3d: Vec<f64> = coords.collect();
        samples.push(PoseSample {
            joints2d,
            joints3d,
            action: (!label.is_empty()).then(|| label.to_string()),
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::Data(format!("{} trailing bytes after the last sample", bytes.len() - c.pos)));
    }
    Ok(Dataset { joints, samples })
}

fn csv_header(joints: usize) -> Vec<String> {
    let mut h = vec!["action".to_string()];
    for j in 0..joints {
        h.push(format!("j{j}x2"));
        h.push(format!("j{j}y2"));
    }
    for j in 0..joints {
        h.push(format!("j{j}x3"));
        h.push(format!("j{j}y3"));
        h.push(format!("j{j}z3"));
    }
    h
}

/// Values are written in shortest round-trip form, so reading back is exact.
pub fn write_csv(data: &Dataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("csv: {e}"));
    w.write_record(csv_header(data.joints)).map_err(csv_err)?;
    for s in &data.samples {
        let mut row = vec![s.action.clone().unwrap_or_default()];
        row.extend(s.joints2d.iter().chain(&s.joints3d).map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))
}

pub fn read_csv(bytes: &[u8]) -> Result<Dataset> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(Dataset {
            joints: 0,
            samples: Vec::new(),
        });
    }
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| Error::Data(format!("csv header: {e}")))?.clone();
    let width = header.len();
    if width < 1 || (width - 1) % 5 != 0 {
        return Err(Error::Data(format!("csv header has {width} columns; expected 1 + 5 per joint")));
    }
    let joints = (width - 1) / 5;
    let want = csv_header(joints);
    if header.iter().ne(want.iter().map(String::as_str)) {
        return Err(Error::Data("csv header does not match the documented column layout".into()));
    }
    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Data(format!("csv line {line}: {e}")))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("csv line {line}: bad number {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = rec.get(0).unwrap_or("");
        samples.push(PoseSample {
            joints2d: values[..2 * joints].to_vec(),
            joints3d: values[2 * joints..].to_vec(),
            action: (!label.is_empty()).then(|| label.to_string()),
        });
    }
    Ok(Dataset { joints, samples })
}

/// Load and validate against `skeleton`.
pub fn load_dataset(path: &Path, format: DataFormat, skeleton: &SkeletonGraph) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut data = match format {
        DataFormat::HfpBinary => read_hfp(&bytes),
        DataFormat::Csv => read_csv(&bytes),
    }
    .map_err(|e| e.in_file(path))?;
    if data.samples.is_empty() {
        data.joints = skeleton.num_joints();
        return Ok(data);
    }
    if data.joints != skeleton.num_joints() {
        return Err(Error::Data(format!(
            "{}: records have {} joints but the skeleton has {}",
            path.display(),
            data.joints,
            skeleton.num_joints()
        )));
    }
    data.validate(skeleton).map_err(|e| e.in_file(path))?;
    Ok(data)
}

pub fn save_dataset(path: &Path, format: DataFormat, data: &Dataset) -> Result<()> {
    let bytes = match format {
        DataFormat::HfpBinary => write_hfp(data),
        DataFormat::Csv => write_csv(data)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
