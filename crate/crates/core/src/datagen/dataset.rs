//! In-memory datasets and the `UMDS` binary file format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "UMDS" | u32 version | [u8; 32] scenario digest | u32 sample count
//! | u32 px | u32 py | u32 pz | u32 header length | header JSON
//! then per sample:
//! u32 flags (bit 0: test split) | f32 force[3*px*py*pz] | f32 displacement[3*px*py*pz]
//! | u32 meta length | meta JSON
//! ```
//!
//! Tensors are channel-major with x fastest.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::FieldTensor;
use crate::error::{Error, Result};
use crate::fem::ReportDigest;

pub const DATASET_MAGIC: &[u8; 4] = b"UMDS";
pub const DATASET_VERSION: u32 = 1;
const COUNT_OFFSET: u64 = 4 + 4 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One applied load: total `magnitude` (N) along `direction`, split equally
/// over the region's grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceSpec {
    pub region: Vec<[usize; 3]>,
    pub direction: [f64; 3],
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: usize,
    pub seed: u64,
    pub forces: Vec<ForceSpec>,
    pub report: ReportDigest,
    /// Magnitude halvings needed before the solve converged.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub split: Split,
    pub force: FieldTensor,
    pub displacement: FieldTensor,
    pub meta: SampleMeta,
}

/// Generation record stored in the file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderInfo {
    pub scenario: serde_json::Value,
    pub protocol: serde_json::Value,
    pub magnitude_max: f64,
    pub seed: u64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario_digest: [u8; 32],
    pub padded_dims: [usize; 3],
    pub info: HeaderInfo,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == which)
    }

    pub fn train(&self) -> impl Iterator<Item = &Sample> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &Sample> {
        self.split(Split::Test)
    }

    pub fn count(&self, which: Split) -> usize {
        self.split(which).count()
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("value {v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn encode_sample(s: &Sample, dims: [usize; 3]) -> Result<Vec<u8>> {
    for t in [&s.force, &s.displacement] {
        if t.dims() != dims {
            return Err(Error::ShapeMismatch {
                expected: format!("{dims:?}"),
                actual: format!("{:?}", t.dims()),
            });
        }
    }
    let meta = serde_json::to_vec(&s.meta)?;
    let mut buf = Vec::with_capacity(8 * s.force.as_slice().len() + meta.len() + 8);
    put_u32(&mut buf, matches!(s.split, Split::Test) as usize)?;
    for t in [&s.force, &s.displacement] {
        for v in t.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    put_u32(&mut buf, meta.len())?;
    buf.extend_from_slice(&meta);
    Ok(buf)
}

fn encode_header(ds: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&ds.scenario_digest);
    put_u32(&mut buf, ds.samples.len())?;
    for d in ds.padded_dims {
        put_u32(&mut buf, d)?;
    }
    let info = serde_json::to_vec(&ds.info)?;
    put_u32(&mut buf, info.len())?;
    buf.extend_from_slice(&info);
    Ok(buf)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&encode_header(ds)?).map_err(io)?;
    for s in &ds.samples {
        w.write_all(&encode_sample(s, ds.padded_dims)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Header {
    digest: [u8; 32],
    count: usize,
    dims: [usize; 3],
    info: HeaderInfo,
}

fn read_exact<R: Read>(r: &mut R, n: usize, path: &Path, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(path, format!("truncated while reading {what}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, path: &Path, what: &str) -> Result<usize> {
    let b = read_exact(r, 4, path, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
}

fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<Header> {
    let magic = read_exact(r, 4, path, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::format(path, "not a UMDS dataset (bad magic)"));
    }
    let version = read_u32(r, path, "version")?;
    if version != DATASET_VERSION as usize {
        return Err(Error::format(path, format!("unsupported dataset version {version}")));
    }
    let digest: [u8; 32] = read_exact(r, 32, path, "scenario digest")?.try_into().unwrap();
    let count = read_u32(r, path, "sample count")?;
    let mut dims = [0; 3];
    for d in &mut dims {
        *d = read_u32(r, path, "padded dims")?;
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::format(path, format!("invalid padded dims {dims:?}")));
    }
    let len = read_u32(r, path, "header length")?;
    let info = serde_json::from_slice(&read_exact(r, len, path, "header")?)
        .map_err(|e| Error::format(path, format!("header JSON: {e}")))?;
    Ok(Header {
        digest,
        count,
        dims,
        info,
    })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let h = read_header(&mut r, path)?;
    let n = 3 * h.dims.iter().product::<usize>();
    let mut samples = Vec::with_capacity(h.count);
    for i in 0..h.count {
        let what = format!("sample {i}");
        let split = match read_u32(&mut r, path, &what)? & 1 {
            0 => Split::Train,
            _ => Split::Test,
        };
        let mut tensors = Vec::with_capacity(2);
        for _ in 0..2 {
            let raw = read_exact(&mut r, 4 * n, path, &what)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(FieldTensor::from_vec(h.dims, data)?);
        }
        let len = read_u32(&mut r, path, &what)?;
        let meta = serde_json::from_slice(&read_exact(&mut r, len, path, &what)?)
            .map_err(|e| Error::format(path, format!("{what} meta JSON: {e}")))?;
        let displacement = tensors.pop().unwrap();
        let force = tensors.pop().unwrap();
        samples.push(Sample {
            split,
            force,
            displacement,
            meta,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after last sample"));
    }
    Ok(Dataset {
        scenario_digest: h.digest,
        padded_dims: h.dims,
        info: h.info,
        samples,
    })
}

/// Appends samples to an existing file after checking scenario and shape.
pub fn append_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut file = OpenOptions::new().read(true).write(true).open(path).map_err(io)?;
    let h = read_header(&mut BufReader::new(&mut file), path)?;
    if h.digest != ds.scenario_digest {
        return Err(Error::DigestMismatch("appended samples come from a different scenario".into()));
    }
    if h.dims != ds.padded_dims {
        return Err(Error::DigestMismatch(format!(
            "grid dims {:?} differ from file dims {:?}",
            ds.padded_dims, h.dims
        )));
    }
    let total = h.count + ds.samples.len();
    file.seek(SeekFrom::End(0)).map_err(io)?;
    let mut w = BufWriter::new(&mut file);
    for s in &ds.samples {
        w.write_all(&encode_sample(s, h.dims)?).map_err(io)?;
    }
    w.flush().map_err(io)?;
    drop(w);
    file.seek(SeekFrom::Start(COUNT_OFFSET)).map_err(io)?;
    let total = u32::try_from(total).map_err(|_| Error::Config("sample count exceeds u32".into()))?;
    file.write_all(&total.to_le_bytes()).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, digest: u8, dims: [usize; 3]) -> Dataset {
        let vox = 3 * dims.iter().product::<usize>();
        Dataset {
            scenario_digest: [digest; 32],
            padded_dims: dims,
            info: HeaderInfo {
                scenario: serde_json::json!({"dims": dims}),
                protocol: serde_json::json!({"lambda": 1}),
                magnitude_max: 2.5,
                seed: 7,
                skipped: 0,
            },
            samples: (0..n)
                .map(|i| Sample {
                    split: if i % 3 == 0 { Split::Test } else { Split::Train },
                    force: FieldTensor::from_vec(dims, (0..vox).map(|v| (v * i) as f32 * 0.5).collect()).unwrap(),
                    displacement: FieldTensor::from_vec(dims, (0..vox).map(|v| -(v as f32) / (i + 1) as f32).collect()).unwrap(),
                    meta: SampleMeta {
                        index: i,
                        seed: 7,
                        forces: vec![ForceSpec {
                            region: vec![[1, 2, 3]],
                            direction: [0.0, 0.6, 0.8],
                            magnitude: 0.1 * i as f64,
                        }],
                        report: ReportDigest {
                            newton_iterations: 4,
                            load_increments: 1,
                            final_residual: 1e-9,
                            cg_iterations: 100,
                        },
                        retries: 0,
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.umds");
        let ds = tiny(5, 1, [4, 2, 2]);
        write_dataset(&ds, &p).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), ds);
    }

    #[test]
    fn file_size_matches_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.umds");
        let ds = tiny(3, 1, [16, 8, 8]);
        write_dataset(&ds, &p).unwrap();
        let header = encode_header(&ds).unwrap().len();
        let meta: usize = ds.samples.iter().map(|s| serde_json::to_vec(&s.meta).unwrap().len() + 8).sum();
        let expected = header + 3 * 2 * 3 * 16 * 8 * 8 * 4 + meta;
        assert_eq!(std::fs::metadata(&p).unwrap().len() as usize, expected);
    }

    #[test]
    fn append_checks_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.umds");
        write_dataset(&tiny(2, 1, [4, 2, 2]), &p).unwrap();
        append_dataset(&p, &tiny(3, 1, [4, 2, 2])).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back.len(), 5);
        assert!(matches!(append_dataset(&p, &tiny(1, 2, [4, 2, 2])), Err(Error::DigestMismatch(_))));
        assert!(matches!(append_dataset(&p, &tiny(1, 1, [8, 2, 2])), Err(Error::DigestMismatch(_))));
        assert_eq!(read_dataset(&p).unwrap().len(), 5);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.umds");
        write_dataset(&tiny(2, 1, [4, 2, 2]), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format { .. })));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format { .. })));

        let mut bad = bytes.clone();
        bad[4] = 9;
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format { .. })));

        let mut extra = bytes;
        extra.push(0);
        std::fs::write(&p, &extra).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format { .. })));
    }
}
