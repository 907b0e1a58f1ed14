//! Checkpoint container: one file holding every parameter tensor keyed by its
//! canonical path name, plus the JSON config blob that produced it.
//!
//! Layout (all little-endian):
//!   magic "MMCK" | u16 version | u32 config_len | config bytes (utf-8 JSON)
//!   | u32 n_params | per param: u16 name_len, name, u8 ndim, u32 dims..., f32 data

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::optim::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::NnError;

const MAGIC: &[u8; 4] = b"MMCK";
const VERSION: u16 = 1;

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    config_json: &str,
    store: &ParamStore<S>,
) -> Result<(), NnError> {
    let file = File::create(path).map_err(|e| NnError::Io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| NnError::Io(path.display().to_string(), e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    let cfg = config_json.as_bytes();
    w.write_all(&(cfg.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(cfg).map_err(io_err)?;
    let n = store.names().count() as u32;
    w.write_all(&n.to_le_bytes()).map_err(io_err)?;
    for (name, tensor) in store.iter_values() {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(nb).map_err(io_err)?;
        let dims = tensor.shape();
        w.write_all(&[dims.len() as u8]).map_err(io_err)?;
        for &d in dims {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
        }
        for v in tensor.data() {
            w.write_all(&(v.to_f64() as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub struct Checkpoint {
    pub config_json: String,
    pub params: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    /// Rebuilds a typed parameter store (casting from the stored f32).
    pub fn into_store<S: Scalar>(&self) -> ParamStore<S> {
        let mut store = ParamStore::new();
        for (name, t) in &self.params {
            let data = t.data().iter().map(|&v| S::from_f64(v as f64)).collect();
            store.register(name, Tensor::from_vec(t.shape().to_vec(), data));
        }
        store
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let file = File::open(path).map_err(|e| NnError::Io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| NnError::Io(path.display().to_string(), e);
    let fmt_err = |msg: &str| NnError::Format(format!("{}: {msg}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(fmt_err("bad magic bytes"));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2).map_err(io_err)?;
    if u16::from_le_bytes(b2) != VERSION {
        return Err(fmt_err("unsupported version"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io_err)?;
    let cfg_len = u32::from_le_bytes(b4) as usize;
    let mut cfg = vec![0u8; cfg_len];
    r.read_exact(&mut cfg).map_err(io_err)?;
    let config_json =
        String::from_utf8(cfg).map_err(|_| fmt_err("config is not valid utf-8"))?;

    r.read_exact(&mut b4).map_err(io_err)?;
    let n_params = u32::from_le_bytes(b4) as usize;
    let mut params = BTreeMap::new();
    for _ in 0..n_params {
        r.read_exact(&mut b2).map_err(io_err)?;
        let name_len = u16::from_le_bytes(b2) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|_| fmt_err("param name not utf-8"))?;
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1).map_err(io_err)?;
        let ndim = b1[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut b4).map_err(io_err)?;
            dims.push(u32::from_le_bytes(b4) as usize);
        }
        let numel: usize = dims.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            r.read_exact(&mut b4).map_err(io_err)?;
            data.push(f32::from_le_bytes(b4));
        }
        params.insert(name, Tensor::from_vec(dims, data));
    }
    Ok(Checkpoint {
        config_json,
        params,
    })
}
