//! Binary checkpoints.
//!
//! Little-endian layout: magic `CNCT2\0`, version u32, ledger hash (32
//! bytes), preset code u8, input size u32, epoch u32, seed u64, tensor count
//! u32, then tensor blocks (name length u16, name bytes, rank u8, extents u32
//! each, f32 payload). Network tensors come first in the order of
//! [`Network::state`]; optimizer velocities follow, named `velocity.<param>`.
//! The shuffle and augmentation streams are pure functions of seed and
//! epoch, so those two fields are the complete random state.

use std::path::Path;

use super::optimizer::OptimizerState;
use crate::error::{Error, Result};
use crate::net::{Network, Preset};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 6] = *b"CNCT2\0";
pub const FORMAT_VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub ledger_hash: [u8; 32],
    pub preset: Preset,
    pub input_size: u32,
    /// Completed epochs.
    pub epoch: u32,
    pub seed: u64,
    pub params: Vec<(String, Tensor)>,
    /// Keyed by parameter name, in trainable-parameter order.
    pub velocity: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(net: &Network, opt: &OptimizerState, epoch: u32, seed: u64) -> Result<Self> {
        let names = net.trainable_names();
        if names.len() != opt.velocity.len() {
            return Err(Error::shape(format!(
                "{} parameters but {} velocity tensors",
                names.len(),
                opt.velocity.len()
            )));
        }
        Ok(Checkpoint {
            version: FORMAT_VERSION,
            ledger_hash: net.ledger_hash(),
            preset: net.preset,
            input_size: net.input_size() as u32,
            epoch,
            seed,
            params: net.state(),
            velocity: names.into_iter().zip(opt.velocity.iter().cloned()).collect(),
        })
    }

    /// Loads weights and optimizer state into `net`, refusing a network with
    /// a different architecture.
    pub fn restore(&self, net: &mut Network) -> Result<OptimizerState> {
        if self.ledger_hash != net.ledger_hash() {
            return Err(Error::LedgerMismatch);
        }
        net.load_state(&self.params)?;
        let mut velocity = Vec::new();
        for (name, like) in net.trainable_names().iter().zip(net.trainable_tensors()) {
            let v = self
                .velocity
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks velocity for {name}")))?;
            like.require_same_shape(v)?;
            velocity.push(v.clone());
        }
        Ok(OptimizerState { velocity })
    }

    /// Rebuilds the preset network this checkpoint was taken from.
    pub fn to_network(&self) -> Result<(Network, OptimizerState)> {
        if self.preset == Preset::Custom {
            return Err(Error::Config(
                "checkpoint holds a custom architecture; build the network explicitly".to_string(),
            ));
        }
        let mut net = Network::build_preset(self.preset, self.input_size as usize, 0)?;
        let opt = self.restore(&mut net)?;
        Ok((net, opt))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.ledger_hash);
        out.push(self.preset.code());
        out.extend_from_slice(&self.input_size.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let count = (self.params.len() + self.velocity.len()) as u32;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.params {
            write_block(&mut out, name, t);
        }
        for (name, t) in &self.velocity {
            write_block(&mut out, &format!("{VELOCITY_PREFIX}{name}"), t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::BadMagic("checkpoint".to_string()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let ledger_hash: [u8; 32] = r.take(32, "ledger hash")?.try_into().unwrap();
        let code = r.take(1, "preset")?[0];
        let preset = Preset::from_code(code)
            .ok_or_else(|| Error::Config(format!("unknown preset code {code}")))?;
        let input_size = r.u32("input size")?;
        let epoch = r.u32("epoch")?;
        let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().unwrap());
        let count = r.u32("tensor count")?;
        let mut params = Vec::new();
        let mut velocity = Vec::new();
        for i in 0..count {
            let (name, t) = read_block(&mut r, i)?;
            match name.strip_prefix(VELOCITY_PREFIX) {
                Some(p) => velocity.push((p.to_string(), t)),
                None if velocity.is_empty() => params.push((name, t)),
                None => {
                    return Err(Error::Config(format!(
                        "network tensor {name} after optimizer state"
                    )))
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Config(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            version,
            ledger_hash,
            preset,
            input_size,
            epoch,
            seed,
            params,
            velocity,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::BadMagic(_) => Error::BadMagic(path.display().to_string()),
        Error::Truncated(what) => Error::Truncated(format!("{}: {what}", path.display())),
        other => other,
    })
}

fn write_block(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_block(r: &mut Reader<'_>, index: u32) -> Result<(String, Tensor)> {
    let ctx = format!("tensor {index}");
    let len = u16::from_le_bytes(r.take(2, &ctx)?.try_into().unwrap()) as usize;
    let name = String::from_utf8(r.take(len, &ctx)?.to_vec())
        .map_err(|_| Error::Config(format!("{ctx}: name is not UTF-8")))?;
    let rank = r.take(1, &name)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32(&name)? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Truncated(format!("{name}: absurd extents {shape:?}")))?;
    let payload = r.take(n, &name)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((name, Tensor::new(shape, data)?))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (Network, OptimizerState) {
        let net = Network::build_preset(Preset::S, 32, 3).unwrap();
        let mut opt = OptimizerState::zeros_like(net.trainable_tensors());
        for (i, v) in opt.velocity.iter_mut().enumerate() {
            v.data_mut()[0] = i as f32 * 0.5;
        }
        (net, opt)
    }

    #[test]
    fn round_trip_is_lossless() {
        let (net, opt) = small();
        let ck = Checkpoint::capture(&net, &opt, 4, 99).unwrap();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let (net2, opt2) = back.to_network().unwrap();
        assert_eq!(net2.state(), net.state());
        assert_eq!(opt2, opt);
    }

    #[test]
    fn distinct_failures() {
        let (net, opt) = small();
        let bytes = Checkpoint::capture(&net, &opt, 0, 1).unwrap().to_bytes();
        for cut in [0, 5, 20, 60, bytes.len() - 1] {
            assert!(
                matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Truncated(_)) | Err(Error::BadMagic(_))),
                "cut {cut}"
            );
        }
        assert!(matches!(Checkpoint::from_bytes(&bytes[..60]), Err(Error::Truncated(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic(_))));
        let mut old = bytes.clone();
        old[6..10].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&old),
            Err(Error::Version { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn wrong_architecture_is_refused() {
        let (net, opt) = small();
        let ck = Checkpoint::capture(&net, &opt, 0, 1).unwrap();
        let mut large = Network::build_preset(Preset::L, 32, 3).unwrap();
        assert!(matches!(ck.restore(&mut large), Err(Error::LedgerMismatch)));
    }
}
