//! Versioned checkpoint container and plain-text training log.
//!
//! Layout: magic `PASICKPT`, `u32` version, `u32` metadata length, JSON
//! metadata, `u32` section count, then per section a `u32` name length, the
//! name, a `u64` value count and little-endian `f32` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelSpec, TrainState};
use crate::channel::ResourcePlan;
use crate::codec::SemanticCodec;
use crate::error::{Error, Result};
use crate::nn::{Param, Parameterized};
use crate::separator::{Discriminator, Generator};

const MAGIC: &[u8; 8] = b"PASICKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: ModelSpec,
    completed: Vec<u8>,
    alternations: usize,
}

fn collect(net: &dyn Parameterized, prefix: &str, out: &mut Vec<(String, Vec<f32>)>) {
    net.visit(prefix, &mut |name, p| out.push((name.to_string(), p.value.clone())));
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let meta = Meta { spec: state.spec, completed: state.completed.clone(), alternations: state.alternations };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut sections = Vec::new();
    collect(&state.codec, "codec", &mut sections);
    if let Some(g) = &state.generator {
        collect(g, "generator", &mut sections);
    }
    if let Some(d) = &state.discriminator {
        collect(d, "discriminator", &mut sections);
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, values) in &sections {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn fill(net: &mut dyn Parameterized, prefix: &str, sections: &mut std::collections::BTreeMap<String, Vec<f32>>) -> Result<()> {
    let mut err = None;
    net.visit_mut(prefix, &mut |name, p: &mut Param| match sections.remove(name) {
        Some(v) if v.len() == p.len() => p.value = v,
        Some(v) => err = Some(format!("section {name} holds {} values, expected {}", v.len(), p.len())),
        None => err = Some(format!("section {name} missing")),
    });
    err.map_or(Ok(()), |e| Err(Error::Checkpoint(e)))
}

/// Loads a checkpoint; `expected` rejects files trained under another plan.
pub fn load_checkpoint(path: &Path, expected: Option<&ResourcePlan>) -> Result<TrainState> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(plan) = expected {
        if *plan != meta.spec.plan {
            return Err(Error::PlanInconsistent(format!("checkpoint plan {:?} differs from requested {plan:?}", meta.spec.plan)));
        }
    }
    let mut sections = std::collections::BTreeMap::new();
    for _ in 0..r.u32()? {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = r.u64()? as usize;
        let bytes = r.take(count.checked_mul(4).ok_or_else(|| Error::Checkpoint("section too large".into()))?)?;
        let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        sections.insert(name, values);
    }
    // Shapes come from the stored spec; initial values are overwritten below.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = meta.spec;
    let mut codec = SemanticCodec::new(spec.codec, &mut rng);
    fill(&mut codec, "codec", &mut sections)?;
    let has_sep = sections.keys().any(|k| k.starts_with("generator"));
    let (generator, discriminator) = if has_sep {
        let mut g = Generator::new(&spec.plan, &spec.separator, &mut rng)?;
        let mut d = Discriminator::new(spec.plan.common, &spec.separator, &mut rng)?;
        fill(&mut g, "generator", &mut sections)?;
        fill(&mut d, "discriminator", &mut sections)?;
        (Some(g), Some(d))
    } else {
        (None, None)
    };
    if let Some(extra) = sections.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected section {extra}")));
    }
    Ok(TrainState::from_parts(spec, codec, generator, discriminator, meta.completed, meta.alternations))
}

/// One line per record: `phase step name value`.
pub fn write_training_log(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in &state.history {
        writeln!(f, "{} {} {} {}", r.phase, r.step, r.name, r.value)?;
    }
    f.flush()?;
    Ok(())
}
