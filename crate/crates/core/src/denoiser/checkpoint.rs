//! Binary checkpoint: header, model config, a tensor directory and
//! little-endian `f32` payloads.
//!
//! ```text
//! magic "UCKPT\0\0\0" | version u32 | reserved u32
//! config: count u32, values u32 x count
//! step u64 | dataset seed u64
//! tensors u32, then per tensor: name len u16, name, ndims u32, dims u32.., offset u64
//! payload (offsets are in bytes from the payload start)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::model::{Model, ToyModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UCKPT\0\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const OPTIMIZER_PREFIX: &str = "optim.rms/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ToyModelConfig,
    pub step: u64,
    pub dataset_seed: u64,
    pub params: Vec<f32>,
    /// Optimizer second-moment state, same layout as `params`.
    pub optimizer: Option<Vec<f32>>,
}

fn config_words(c: &ToyModelConfig) -> Vec<u32> {
    [
        c.panel_height,
        c.panel_width,
        c.channels,
        c.patch_size,
        c.layers,
        c.heads,
        c.dim,
        c.ffn_mult,
        c.time_dim,
        c.positional as usize,
    ]
    .iter()
    .map(|&v| v as u32)
    .collect()
}

fn config_from_words(w: &[u32]) -> Result<ToyModelConfig> {
    if w.len() != 10 {
        return Err(Error::format(
            "checkpoint",
            format!("expected 10 config words, got {}", w.len()),
        ));
    }
    let u = |i: usize| w[i] as usize;
    let cfg = ToyModelConfig {
        panel_height: u(0),
        panel_width: u(1),
        channels: u(2),
        patch_size: u(3),
        layers: u(4),
        heads: u(5),
        dim: u(6),
        ffn_mult: u(7),
        time_dim: u(8),
        positional: w[9] != 0,
    };
    cfg.validate()
        .map_err(|e| Error::format("checkpoint", format!("invalid config: {e}")))?;
    Ok(cfg)
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, step: u64, dataset_seed: u64, optimizer: Option<Vec<f32>>) -> Self {
        Self {
            config: model.config().clone(),
            step,
            dataset_seed,
            params: model.params().to_vec(),
            optimizer,
        }
    }

    pub fn model(&self) -> Result<Model<f32>> {
        Model::from_parts(self.config.clone(), self.params.clone())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let model = self.model()?;
        if let Some(o) = &self.optimizer {
            if o.len() != self.params.len() {
                return Err(Error::shape("optimizer state does not match the parameters"));
            }
        }
        let mut entries: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        for spec in model.specs() {
            let range = spec.offset..spec.offset + spec.len();
            entries.push((spec.name.clone(), spec.shape.clone(), &self.params[range.clone()]));
            if let Some(o) = &self.optimizer {
                entries.push((
                    format!("{OPTIMIZER_PREFIX}{}", spec.name),
                    spec.shape.clone(),
                    &o[range],
                ));
            }
        }

        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        let words = config_words(&self.config);
        w.write_all(&(words.len() as u32).to_le_bytes())?;
        for v in words {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.dataset_seed.to_le_bytes())?;
        w.write_all(&(entries.len() as u32).to_le_bytes())?;
        let mut offset = 0u64;
        for (name, dims, data) in &entries {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for &d in dims {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&offset.to_le_bytes())?;
            offset += 4 * data.len() as u64;
        }
        for (_, _, data) in &entries {
            for v in data.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        read_u32(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        if count > 64 {
            return Err(Error::format("checkpoint", "implausible config block"));
        }
        let words = (0..count).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let config = config_from_words(&words)?;
        let step = read_u64(&mut r)?;
        let dataset_seed = read_u64(&mut r)?;

        let tensors = read_u32(&mut r)? as usize;
        let mut dir = Vec::with_capacity(tensors.min(4096));
        for _ in 0..tensors {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?;
            let nd = read_u32(&mut r)? as usize;
            if nd > 8 {
                return Err(Error::format("checkpoint", format!("tensor {name} has {nd} dims")));
            }
            let dims = (0..nd)
                .map(|_| read_u32(&mut r).map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let offset = read_u64(&mut r)?;
            dir.push((name, dims, offset));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;

        let template = Model::<f32>::init(config.clone(), 0)?;
        let mut params = vec![0.0f32; template.param_count()];
        let mut optimizer: Option<Vec<f32>> = None;
        let mut seen = vec![false; template.specs().len()];
        for (name, dims, offset) in dir {
            let (base, target_is_optim) = match name.strip_prefix(OPTIMIZER_PREFIX) {
                Some(b) => (b, true),
                None => (name.as_str(), false),
            };
            let Some(si) = template.specs().iter().position(|s| s.name == base) else {
                return Err(Error::format("checkpoint", format!("unknown tensor {name}")));
            };
            let spec = &template.specs()[si];
            if dims != spec.shape {
                return Err(Error::format(
                    "checkpoint",
                    format!("tensor {name} has dims {dims:?}, expected {:?}", spec.shape),
                ));
            }
            let start = offset as usize;
            let end = start + 4 * spec.len();
            if end > payload.len() {
                return Err(Error::format(
                    "checkpoint",
                    format!("tensor {name} runs past the payload"),
                ));
            }
            let dst = if target_is_optim {
                &mut optimizer.get_or_insert_with(|| vec![0.0; params.len()])[spec.offset..spec.offset + spec.len()]
            } else {
                seen[si] = true;
                &mut params[spec.offset..spec.offset + spec.len()]
            };
            for (o, chunk) in dst.iter_mut().zip(payload[start..end].chunks_exact(4)) {
                *o = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::format(
                "checkpoint",
                format!("missing tensor {}", template.specs()[i].name),
            ));
        }
        Ok(Self {
            config,
            step,
            dataset_seed,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> ToyModelConfig {
        ToyModelConfig {
            panel_height: 8,
            panel_width: 8,
            patch_size: 4,
            layers: 1,
            heads: 2,
            dim: 16,
            ffn_mult: 2,
            time_dim: 4,
            ..ToyModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = Model::<f32>::init(small(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        m.params_mut()
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-1.0f32..1.0));
        let opt: Vec<f32> = (0..m.param_count()).map(|i| i as f32 * 1e-3).collect();
        let ck = Checkpoint::from_model(&m, 42, 7, Some(opt));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert!(back
            .params
            .iter()
            .zip(&ck.params)
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        let plain = Checkpoint::from_model(&m, 1, 2, None);
        let mut buf = Vec::new();
        plain.write_to(&mut buf).unwrap();
        assert_eq!(Checkpoint::read_from(buf.as_slice()).unwrap(), plain);
    }

    #[test]
    fn rejects_corruption() {
        let m = Model::<f32>::init(small(), 5).unwrap();
        let mut buf = Vec::new();
        Checkpoint::from_model(&m, 0, 0, None).write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(bad.as_slice()).is_err());
        let truncated = &buf[..buf.len() - 8];
        assert!(Checkpoint::read_from(truncated).is_err());
    }
}
