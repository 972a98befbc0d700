use super::net::{ArchSpec, PolicyParams, TENSOR_NAMES};
use crate::codec::{DecodeError, Reader, Writer};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 16] = b"dronenav.policy\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error("parameter file is for {found} actions and {found_channels} input slices, expected {expected} and {expected_channels}")]
    Mismatch {
        expected: usize,
        found: usize,
        expected_channels: usize,
        found_channels: usize,
    },
}

impl From<DecodeError> for ParamsError {
    fn from(e: DecodeError) -> Self {
        ParamsError::Format(e.0)
    }
}

impl PolicyParams<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = self.arch;
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        for v in [
            a.in_channels,
            a.side,
            a.conv_channels,
            a.kernel,
            a.strides[0],
            a.strides[1],
            a.hidden,
            a.n_actions,
        ] {
            w.u32(v as u32);
        }
        let shapes = a.tensor_shapes();
        w.len(shapes.len());
        for (name, shape) in TENSOR_NAMES.iter().zip(&shapes) {
            w.len(name.len());
            w.bytes(name.as_bytes());
            w.len(shape.len());
            for &d in shape {
                w.u32(d as u32);
            }
        }
        w.u64(self.data.len() as u64);
        for &v in &self.data {
            w.f32(v);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ParamsError> {
        let mut r = Reader::new(bytes);
        if r.take(16)? != MAGIC {
            return Err(ParamsError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ParamsError::Format(format!("unsupported version {version}")));
        }
        let mut f = [0usize; 8];
        for v in f.iter_mut() {
            *v = r.u32()? as usize;
        }
        let arch = ArchSpec {
            in_channels: f[0],
            side: f[1],
            conv_channels: f[2],
            kernel: f[3],
            strides: [f[4], f[5]],
            hidden: f[6],
            n_actions: f[7],
        };
        arch.validate().map_err(|e| ParamsError::Format(e.to_string()))?;
        let shapes = arch.tensor_shapes();
        let n = r.len(8)?;
        if n != shapes.len() {
            return Err(ParamsError::Format(format!(
                "expected {} tensors, found {n}",
                shapes.len()
            )));
        }
        for (name, shape) in TENSOR_NAMES.iter().zip(&shapes) {
            let len = r.len(1)?;
            let got = r.take(len)?;
            if got != name.as_bytes() {
                return Err(ParamsError::Format(format!(
                    "expected tensor {name}, found {}",
                    String::from_utf8_lossy(got)
                )));
            }
            let nd = r.len(4)?;
            let dims = (0..nd)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            if &dims != shape {
                return Err(ParamsError::Format(format!(
                    "tensor {name} has shape {dims:?}, expected {shape:?}"
                )));
            }
        }
        let count = r.u64()? as usize;
        if count != arch.param_count() {
            return Err(ParamsError::Format(format!(
                "expected {} values, header says {count}",
                arch.param_count()
            )));
        }
        if r.remaining() != count * 4 {
            return Err(ParamsError::Format(format!(
                "expected {} data bytes, found {}",
                count * 4,
                r.remaining()
            )));
        }
        let data = (0..count).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        let params = PolicyParams { arch, data };
        if !params.is_finite() {
            return Err(ParamsError::Format("non-finite parameter".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamsError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ParamsError> {
        let bytes = std::fs::read(path).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Loads a file and checks it against an environment's observation slices and action count.
    pub fn load_for(path: &Path, slices: usize, n_actions: usize) -> Result<Self, ParamsError> {
        let p = Self::load(path)?;
        p.check_env(slices, n_actions)?;
        Ok(p)
    }

    pub fn check_env(&self, slices: usize, n_actions: usize) -> Result<(), ParamsError> {
        let a = self.arch;
        if a.n_actions != n_actions || a.in_channels != slices || a.side != crate::env::Observation::SIDE {
            return Err(ParamsError::Mismatch {
                expected: n_actions,
                found: a.n_actions,
                expected_channels: slices,
                found_channels: a.in_channels,
            });
        }
        Ok(())
    }
}
