//! `UMNN` model files.
//!
//! Layout (little-endian): `"UMNN"`, u32 version, u32 header length, header
//! JSON (`channels`, `steps`, `dims`, `force_scale`, `disp_scale`, `seed`),
//! u32 layer count, then per layer in [`UNet::layer_params`] order a u32
//! weight count, f32 weights, u32 bias count, f32 biases; finally the
//! SHA-256 of the layer section.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::unet::{UNet, UNetConfig};

pub const MODEL_MAGIC: &[u8; 4] = b"UMNN";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    channels: usize,
    steps: usize,
    dims: [usize; 3],
    force_scale: f64,
    disp_scale: f64,
    seed: u64,
}

fn layer_section(model: &UNet<f32>) -> Vec<u8> {
    let params = model.layer_params();
    let mut buf = Vec::new();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (w, b) in params {
        for t in [w, b] {
            buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

/// SHA-256 of the serialized weights.
pub fn weights_digest(model: &UNet<f32>) -> [u8; 32] {
    Sha256::digest(layer_section(model)).into()
}

pub fn model_bytes(model: &UNet<f32>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        channels: model.config.channels,
        steps: model.config.steps,
        dims: model.config.dims,
        force_scale: model.force_scale,
        disp_scale: model.disp_scale,
        seed: model.seed,
    })
    .map_err(|e| NnError::Config(e.to_string()))?;
    let layers = layer_section(model);
    let mut buf = Vec::with_capacity(12 + header.len() + layers.len() + 32);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    let digest: [u8; 32] = Sha256::digest(&layers).into();
    buf.extend_from_slice(&layers);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

pub fn save_model(model: &UNet<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_bytes(model)?).map_err(|e| NnError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(NnError::format(self.path, format!("truncated while reading {what}")));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<UNet<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| NnError::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(NnError::format(path, "not a UMNN model file"));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION as usize {
        return Err(NnError::format(path, format!("unsupported model version {version}")));
    }
    let len = r.u32("header length")?;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| NnError::format(path, format!("header JSON: {e}")))?;
    let config = UNetConfig::new(header.channels, header.steps, header.dims)?;
    let mut model = UNet::<f32>::zeros(config)?;
    model.force_scale = header.force_scale;
    model.disp_scale = header.disp_scale;
    model.seed = header.seed;

    let layers_start = r.pos;
    let count = r.u32("layer count")?;
    if count != model.layer_params().len() {
        return Err(NnError::format(path, format!("{count} layers stored, configuration has {}", model.layer_params().len())));
    }
    for (i, (w, b)) in model.layer_params_mut().into_iter().enumerate() {
        for t in [w, b] {
            let n = r.u32("blob length")?;
            if n != t.len() {
                return Err(NnError::format(path, format!("layer {i}: {n} values stored, {} expected", t.len())));
            }
            let raw = r.take(4 * n, "weights")?;
            for (dst, c) in t.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(c.try_into().unwrap());
            }
        }
    }
    let layers_end = r.pos;
    let stored = r.take(32, "digest")?;
    let computed: [u8; 32] = Sha256::digest(&bytes[layers_start..layers_end]).into();
    if stored != computed {
        return Err(NnError::format(path, "weight digest mismatch"));
    }
    if r.pos != bytes.len() {
        return Err(NnError::format(path, "trailing bytes after digest"));
    }
    Ok(model)
}

/// Loads a model and checks it was built for `dims`.
pub fn load_model_for(path: impl AsRef<Path>, dims: [usize; 3]) -> Result<UNet<f32>> {
    let model = load_model(&path)?;
    if model.config.dims != dims {
        return Err(NnError::Shape(format!(
            "model was trained on {:?}, grid is {dims:?}",
            model.config.dims
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_digest() {
        let mut m = UNet::<f32>::new(UNetConfig::new(2, 2, [8, 4, 4]).unwrap(), 4).unwrap();
        m.force_scale = 0.25;
        m.disp_scale = 3.5;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.umnn");
        save_model(&m, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[bytes.len() - 32..], &weights_digest(&m));
        assert!(load_model_for(&p, [8, 4, 4]).is_ok());
        assert!(matches!(load_model_for(&p, [16, 4, 4]), Err(NnError::Shape(_))));

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 40] ^= 1;
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(load_model(&p), Err(NnError::Format { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(load_model(&p), Err(NnError::Format { .. })));
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&p), Err(NnError::Format { .. })));
    }
}
