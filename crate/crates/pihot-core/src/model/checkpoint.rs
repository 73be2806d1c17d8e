//! Single-file training snapshots.
//!
//! One archive holds the step counter, the full configuration snapshot, and
//! every named tensor (parameters and optimizer moments) as row-major
//! little-endian 32-bit floats. The write is atomic (temp file + rename) so
//! an interrupted save never leaves a truncated archive behind.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;
use ndarray::{ArrayD, ArrayViewD, IxDyn};

use crate::config::RunConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PIHOTCKP";
const VERSION: u32 = 1;

/// Sanity bounds against allocating absurd amounts from a corrupt header.
const MAX_NAME: u32 = 4096;
const MAX_DIMS: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 30;

/// A loaded archive: training position, the exact configuration the run was
/// started with, and all tensors in their saved order.
#[derive(Debug)]
pub struct Checkpoint {
    pub step: u64,
    pub config: RunConfig,
    pub tensors: IndexMap<String, ArrayD<f32>>,
}

impl Checkpoint {
    /// Splits the archive into model parameters and optimizer state.
    pub fn split(self) -> (IndexMap<String, ArrayD<f32>>, Vec<(String, ArrayD<f32>)>) {
        let mut params = IndexMap::new();
        let mut optimizer = Vec::new();
        for (name, tensor) in self.tensors {
            if super::adam::Adam::<f32>::owns(&name) {
                optimizer.push((name, tensor));
            } else {
                params.insert(name, tensor);
            }
        }
        (params, optimizer)
    }
}

pub fn save_checkpoint<'a>(
    path: &Path,
    step: u64,
    config: &RunConfig,
    tensors: impl IntoIterator<Item = (&'a str, ArrayViewD<'a, f32>)>,
) -> Result<()> {
    let tensors: Vec<(&str, ArrayViewD<'a, f32>)> = tensors.into_iter().collect();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new()?,
    };
    {
        let mut out = BufWriter::new(tmp.as_file_mut());
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(VERSION)?;
        out.write_u64::<LittleEndian>(step)?;
        let snapshot = config.snapshot();
        out.write_u32::<LittleEndian>(snapshot.len() as u32)?;
        out.write_all(snapshot.as_bytes())?;
        out.write_u32::<LittleEndian>(tensors.len() as u32)?;
        for (name, tensor) in &tensors {
            out.write_u32::<LittleEndian>(name.len() as u32)?;
            out.write_all(name.as_bytes())?;
            out.write_u32::<LittleEndian>(tensor.ndim() as u32)?;
            for &d in tensor.shape() {
                out.write_u64::<LittleEndian>(d as u64)?;
            }
            for &x in tensor.iter() {
                out.write_f32::<LittleEndian>(x)?;
            }
        }
        out.flush()?;
    }
    tmp.persist(path)
        .map_err(|e| Error::Checkpoint(format!("cannot finalize {}: {}", path.display(), e.error)))?;
    Ok(())
}

fn truncated(what: &str) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint(format!("checkpoint truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)
        .map_err(|e| Error::file(path.display().to_string(), format!("cannot open: {e}")))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated("header"))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint archive (bad magic)",
            path.display()
        )));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(truncated("version"))?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads {VERSION})"
        )));
    }
    let step = r.read_u64::<LittleEndian>().map_err(truncated("step"))?;

    let config_len = r
        .read_u32::<LittleEndian>()
        .map_err(truncated("config length"))?;
    if config_len > 1 << 20 {
        return Err(Error::Checkpoint(format!(
            "config snapshot of {config_len} bytes exceeds the sane maximum"
        )));
    }
    let mut config_bytes = vec![0u8; config_len as usize];
    r.read_exact(&mut config_bytes)
        .map_err(truncated("config snapshot"))?;
    let snapshot = String::from_utf8(config_bytes)
        .map_err(|_| Error::Checkpoint("config snapshot is not UTF-8".into()))?;
    let config = RunConfig::from_snapshot(&snapshot)?;

    let count = r
        .read_u32::<LittleEndian>()
        .map_err(truncated("tensor count"))?;
    let mut tensors = IndexMap::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r
            .read_u32::<LittleEndian>()
            .map_err(truncated("tensor name length"))?;
        if name_len > MAX_NAME {
            return Err(Error::Checkpoint(format!(
                "tensor name of {name_len} bytes exceeds the sane maximum"
            )));
        }
        let mut name_bytes = vec![0u8; name_len as usize];
        r.read_exact(&mut name_bytes)
            .map_err(truncated("tensor name"))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = r
            .read_u32::<LittleEndian>()
            .map_err(truncated("tensor rank"))?;
        if ndim > MAX_DIMS {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has rank {ndim}, beyond the sane maximum"
            )));
        }
        let mut dims = Vec::with_capacity(ndim as usize);
        let mut elements: u64 = 1;
        for _ in 0..ndim {
            let d = r
                .read_u64::<LittleEndian>()
                .map_err(truncated("tensor shape"))?;
            elements = elements.saturating_mul(d.max(1));
            dims.push(d as usize);
        }
        if elements > MAX_ELEMENTS {
            return Err(Error::Checkpoint(format!(
                "tensor {name} claims {elements} elements, beyond the sane maximum"
            )));
        }
        let total: usize = dims.iter().product();
        let mut data = vec![0f32; total];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(truncated("tensor data"))?;
        let array = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|e| Error::Checkpoint(format!("tensor {name} has bad shape: {e}")))?;
        if tensors.insert(name.clone(), array).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    Ok(Checkpoint {
        step,
        config,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;
    use tempfile::TempDir;

    fn sample_tensors() -> Vec<(String, ArrayD<f32>)> {
        vec![
            (
                "layer.w".to_string(),
                ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.0, -2.5, 3.25, 0.0, 7.5, -0.125])
                    .unwrap(),
            ),
            (
                "layer.b".to_string(),
                ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.5, 0.25, -1.0]).unwrap(),
            ),
            (
                "adam.m.layer.w".to_string(),
                ArrayD::from_elem(IxDyn(&[2, 3]), 0.125f32),
            ),
        ]
    }

    fn save(path: &std::path::Path, step: u64, tensors: &[(String, ArrayD<f32>)]) {
        let config = RunConfig::default();
        save_checkpoint(
            path,
            step,
            &config,
            tensors.iter().map(|(n, a)| (n.as_str(), a.view())),
        )
        .unwrap();
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        let tensors = sample_tensors();
        save(&path, 42, &tensors);
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.step, 42);
        assert_eq!(loaded.config, RunConfig::default());
        assert_eq!(loaded.tensors.len(), tensors.len());
        for (i, (name, tensor)) in tensors.iter().enumerate() {
            let (got_name, got) = loaded.tensors.get_index(i).unwrap();
            assert_eq!(got_name, name, "order preserved");
            assert_eq!(got.shape(), tensor.shape());
            for (a, b) in got.iter().zip(tensor.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn split_separates_optimizer_state() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, 1, &sample_tensors());
        let (params, optimizer) = load_checkpoint(&path).unwrap().split();
        assert_eq!(params.len(), 2);
        assert!(params.contains_key("layer.w"));
        assert_eq!(optimizer.len(), 1);
        assert_eq!(optimizer[0].0, "adam.m.layer.w");
    }

    #[test]
    fn same_content_gives_identical_bytes() {
        let dir = TempDir::new().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let tensors = sample_tensors();
        save(&a, 7, &tensors);
        save(&b, 7, &tensors);
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTMYFMT the rest does not matter").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn rejects_future_version() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("future.ckpt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn reports_truncation() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, 3, &sample_tensors());
        let bytes = std::fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        let short = dir.path().join("short.ckpt");
        std::fs::write(&short, cut).unwrap();
        let err = load_checkpoint(&short).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_checkpoint(std::path::Path::new("/no/such/file.ckpt")).unwrap_err();
        assert!(err.to_string().contains("file.ckpt"), "{err}");
    }
}
