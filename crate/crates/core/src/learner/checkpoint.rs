//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "SPINRLCK"
//! version    u32
//! config     32 bytes SHA-256 of the effective run configuration
//! arch       4 x u32  obs_dim, act_dim, width, depth
//! stage      u8
//! epoch      u64
//! n_params   u64, then n_params x f64
//! dim        u64, then count f64, dim x f64 mean, dim x f64 m2
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::moments::RunningMoments;
use super::net::{NetArch, PolicyNet};
use super::Policy;

pub const MAGIC: &[u8; 8] = b"SPINRLCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint is internally inconsistent: {0}")]
    Corrupt(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub stage: u8,
    pub epoch: u64,
    pub policy: Policy,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.policy.net;
        let arch = net.arch();
        let m = &self.policy.moments;
        let mut b = Vec::with_capacity(96 + 8 * (net.len() + 2 * m.dim()));
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&self.config_hash);
        for v in [arch.obs_dim, arch.act_dim, arch.width, arch.depth] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        b.push(self.stage);
        b.extend_from_slice(&self.epoch.to_le_bytes());
        b.extend_from_slice(&(net.len() as u64).to_le_bytes());
        for p in &net.params {
            b.extend_from_slice(&p.to_le_bytes());
        }
        b.extend_from_slice(&(m.dim() as u64).to_le_bytes());
        b.extend_from_slice(&m.count.to_le_bytes());
        for v in m.mean.iter().chain(&m.m2) {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let arch = NetArch { obs_dim: r.u32()? as usize, act_dim: r.u32()? as usize, width: r.u32()? as usize, depth: r.u32()? as usize };
        if !arch.is_valid() {
            return Err(CheckpointError::Corrupt("architecture"));
        }
        let stage = r.take(1)?[0];
        let epoch = r.u64()?;
        let n = r.u64()? as usize;
        if n != arch.param_count() {
            return Err(CheckpointError::Corrupt("parameter count does not match architecture"));
        }
        let params = r.f64s(n)?;
        let dim = r.u64()? as usize;
        if dim != arch.obs_dim {
            return Err(CheckpointError::Corrupt("moment dimension does not match observation size"));
        }
        let count = r.f64()?;
        let mean = r.f64s(dim)?;
        let m2 = r.f64s(dim)?;
        if r.at != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes"));
        }
        let net = PolicyNet::from_params(arch, params).ok_or(CheckpointError::Corrupt("parameters"))?;
        Ok(Self { config_hash, stage, epoch, policy: Policy { net, moments: RunningMoments { count, mean, m2 } } })
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("bin.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}
