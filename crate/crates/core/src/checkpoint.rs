//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "MASQCKPT" | version u32 | config sha256 [32] | config TOML (u64 len + utf8)
//! | mode u8 | update u64 | actor store | critic store | actor adam | critic adam
//! | actor norm | critic norm | curriculum levels [u32; 4] + ema [f64; 4]
//! | sha256 of everything above [32]
//! ```
//!
//! A store is `layers u32, (rows u32, cols u32, activation u8)*, logstd u32,
//! values (u64 len + f64*)`. Floats are stored as raw bits, so a round trip
//! is bit-exact.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::algo::{Mode, Optimizers, Policy};
use crate::config::RunConfig;
use crate::error::{MasqError, Result};
use crate::nn::{Activation, AdamHyper, AdamState, LayerSpec, ParamStore};
use crate::obs::RunningNorm;
use crate::schedule::CurriculumState;

pub const MAGIC: &[u8; 8] = b"MASQCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub update: u64,
    pub policy: Policy,
    pub opt: Optimizers,
    pub curriculum: CurriculumState,
}

fn ckpt_err(msg: impl Into<String>) -> MasqError {
    MasqError::Checkpoint(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
    fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.0.extend_from_slice(v);
    }
    fn store(&mut self, p: &ParamStore) {
        self.u32(p.layout().len() as u32);
        for l in p.layout() {
            self.u32(l.rows as u32);
            self.u32(l.cols as u32);
            self.u8(l.activation.code());
        }
        self.u32(p.logstd_len() as u32);
        self.f64s(&p.values);
    }
    fn adam(&mut self, a: &AdamState) {
        self.u64(a.step_count);
        for h in [a.hyper.lr, a.hyper.beta1, a.hyper.beta2, a.hyper.eps] {
            self.f64(h);
        }
        self.f64s(&a.m);
        self.f64s(&a.v);
    }
    fn norm(&mut self, n: &RunningNorm) {
        self.f64s(&n.mean);
        self.f64s(&n.var);
        self.f64(n.count);
        self.f64(n.clip);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ckpt_err("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(ckpt_err("length field exceeds data"));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }
    fn store(&mut self) -> Result<ParamStore> {
        let layers = self.u32()? as usize;
        let mut layout = Vec::with_capacity(layers.min(64));
        for _ in 0..layers {
            let rows = self.u32()? as usize;
            let cols = self.u32()? as usize;
            let activation = Activation::from_code(self.u8()?)
                .ok_or_else(|| ckpt_err("unknown activation code"))?;
            layout.push(LayerSpec {
                rows,
                cols,
                activation,
            });
        }
        let logstd = self.u32()? as usize;
        let mut p = ParamStore::new(layout, logstd)?;
        let values = self.f64s()?;
        if values.len() != p.len() {
            return Err(ckpt_err("parameter count does not match layout"));
        }
        p.values = values;
        Ok(p)
    }
    fn adam(&mut self, len: usize) -> Result<AdamState> {
        let step_count = self.u64()?;
        let hyper = AdamHyper {
            lr: self.f64()?,
            beta1: self.f64()?,
            beta2: self.f64()?,
            eps: self.f64()?,
        };
        let m = self.f64s()?;
        let v = self.f64s()?;
        if m.len() != len || v.len() != len {
            return Err(ckpt_err("optimizer state does not match network"));
        }
        Ok(AdamState {
            m,
            v,
            step_count,
            hyper,
        })
    }
    fn norm(&mut self) -> Result<RunningNorm> {
        let mean = self.f64s()?;
        let var = self.f64s()?;
        if mean.len() != var.len() {
            return Err(ckpt_err("normaliser mean/var lengths differ"));
        }
        Ok(RunningNorm {
            mean,
            var,
            count: self.f64()?,
            clip: self.f64()?,
        })
    }
}

fn mode_code(m: Mode) -> u8 {
    match m {
        Mode::Masq => 0,
        Mode::PpoSingle => 1,
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let text = self.config.to_toml_string()?;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.0.extend_from_slice(&Sha256::digest(text.as_bytes()));
        w.bytes(text.as_bytes());
        w.u8(mode_code(self.policy.mode));
        w.u64(self.update);
        w.store(&self.policy.actor);
        w.store(&self.policy.critic);
        w.adam(&self.opt.actor);
        w.adam(&self.opt.critic);
        w.norm(&self.policy.actor_norm);
        w.norm(&self.policy.critic_norm);
        for l in self.curriculum.levels {
            w.u32(l);
        }
        for e in self.curriculum.ema {
            w.f64(e);
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        Ok(w.0)
    }

    /// Parse a checkpoint. The trailing digest is verified before any field
    /// is decoded, so damaged data never yields a partial checkpoint.
    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < MAGIC.len() + 4 + 32 + 32 || &data[..8] != MAGIC {
            return Err(ckpt_err("not a checkpoint (bad magic or truncated header)"));
        }
        let version = u32::from_le_bytes(data[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(ckpt_err(format!(
                "unsupported format version {version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let (body, digest) = data.split_at(data.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ckpt_err(
                "integrity check failed (truncated or corrupted file)",
            ));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let text = std::str::from_utf8(r.bytes()?).map_err(|_| ckpt_err("config is not utf-8"))?;
        if Sha256::digest(text.as_bytes()).as_slice() != hash {
            return Err(ckpt_err("config hash mismatch"));
        }
        let config = RunConfig::from_toml_str(text)?;
        let mode = match r.u8()? {
            0 => Mode::Masq,
            1 => Mode::PpoSingle,
            c => return Err(ckpt_err(format!("unknown mode code {c}"))),
        };
        if mode != config.mode {
            return Err(ckpt_err("mode disagrees with embedded config"));
        }
        let update = r.u64()?;
        let actor = r.store()?;
        let critic = r.store()?;
        let opt = Optimizers {
            actor: r.adam(actor.len())?,
            critic: r.adam(critic.len())?,
        };
        let policy = Policy {
            mode,
            actor,
            critic,
            actor_norm: r.norm()?,
            critic_norm: r.norm()?,
        };
        policy.validate()?;
        let mut curriculum = CurriculumState::new(config.task.curriculum.clone());
        for l in &mut curriculum.levels {
            *l = r.u32()?;
        }
        for e in &mut curriculum.ema {
            *e = r.f64()?;
        }
        if r.pos != body.len() {
            return Err(ckpt_err("trailing bytes after checkpoint body"));
        }
        Ok(Self {
            config,
            update,
            policy,
            opt,
            curriculum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| MasqError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| MasqError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| MasqError::io(path, e))?;
        Self::from_bytes(&data)
    }
}
