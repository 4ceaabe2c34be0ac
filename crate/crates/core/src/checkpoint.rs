//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes   "STPG" (generator) or "STPC" (classifier)
//! version      u32       currently 1
//! header_len   u32
//! header       UTF-8 JSON {"model": <config>, "skeleton": {...}}
//! n_params     u32
//! params       n_params tensor records, sorted by name
//! n_buffers    u32
//! buffers      n_buffers tensor records, sorted by name
//!
//! tensor record:
//! name_len     u16
//! name         UTF-8
//! rank         u32
//! dims         rank × u64
//! data         prod(dims) × f64
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, ClassifierConfig};
use crate::error::{Error, Result};
use crate::io::Cursor;
use crate::params::ParamStore;
use crate::skeleton::SkeletonTopology;
use crate::stepgen::{Generator, GeneratorConfig};
use crate::tensor::Tensor;

pub const GENERATOR_MAGIC: &[u8; 4] = b"STPG";
pub const CLASSIFIER_MAGIC: &[u8; 4] = b"STPC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonDoc {
    joints: Vec<String>,
    edges: Vec<(usize, usize)>,
    rest_pose: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header<C> {
    model: C,
    skeleton: SkeletonDoc,
}

fn skeleton_doc(topo: &SkeletonTopology) -> SkeletonDoc {
    SkeletonDoc {
        joints: topo.names().to_vec(),
        edges: topo.edges().to_vec(),
        rest_pose: topo.rest_pose().to_vec(),
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{} too large", what)))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Format(format!("tensor name `{}` too long", name)))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len(), "tensor rank")?;
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn get_tensor(cur: &mut Cursor<'_>) -> Result<(String, Tensor)> {
    let len = cur.u16()? as usize;
    let name = std::str::from_utf8(cur.take(len)?)
        .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
        .to_string();
    let rank = cur.u32()? as usize;
    let mut shape = Vec::with_capacity(rank.min(16));
    let mut count: usize = 1;
    for _ in 0..rank {
        let d =
            usize::try_from(cur.u64()?).map_err(|_| Error::Format("dimension overflow".into()))?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::Format("dimension overflow".into()))?;
        shape.push(d);
    }
    if count.checked_mul(8).is_none_or(|b| b > cur.remaining()) {
        return Err(Error::Format(format!(
            "tensor `{}` runs past end of file",
            name
        )));
    }
    let data = (0..count).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
    Ok((name, Tensor::new(shape, data)?))
}

fn encode<C: Serialize>(
    magic: &[u8; 4],
    model: &C,
    topo: &SkeletonTopology,
    store: &ParamStore,
) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        model,
        skeleton: skeleton_doc(topo),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, header.len(), "header")?;
    out.extend_from_slice(&header);
    for map in [store.params(), store.buffers()] {
        put_u32(&mut out, map.len(), "tensor count")?;
        for (name, t) in map {
            put_tensor(&mut out, name, t)?;
        }
    }
    Ok(out)
}

fn decode<C: DeserializeOwned>(
    magic: &[u8; 4],
    bytes: &[u8],
) -> Result<(C, SkeletonTopology, ParamStore)> {
    let mut cur = Cursor::new(bytes);
    let found = cur.take(4)?;
    if found != magic {
        return Err(Error::Format(format!(
            "expected {} checkpoint magic, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(found)
        )));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            version
        )));
    }
    let len = cur.u32()? as usize;
    let header: Header<C> = serde_json::from_slice(cur.take(len)?)?;
    let sk = header.skeleton;
    let topo = SkeletonTopology::new(sk.joints, &sk.edges, sk.rest_pose)?;
    let mut store = ParamStore::new();
    for buffers in [false, true] {
        let n = cur.u32()?;
        for _ in 0..n {
            let (name, t) = get_tensor(&mut cur)?;
            if buffers {
                store.insert_buffer(name, t);
            } else {
                store.insert_param(name, t);
            }
        }
    }
    if cur.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            cur.remaining()
        )));
    }
    Ok((header.model, topo, store))
}

pub fn encode_generator(gen: &Generator, topo: &SkeletonTopology) -> Result<Vec<u8>> {
    encode(GENERATOR_MAGIC, gen.config(), topo, gen.store())
}

pub fn decode_generator(bytes: &[u8]) -> Result<(Generator, SkeletonTopology)> {
    let (cfg, topo, store): (GeneratorConfig, _, _) = decode(GENERATOR_MAGIC, bytes)?;
    Ok((Generator::from_parts(cfg, store, &topo)?, topo))
}

pub fn save_generator(
    gen: &Generator,
    topo: &SkeletonTopology,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, encode_generator(gen, topo)?)?;
    Ok(())
}

pub fn load_generator(path: impl AsRef<Path>) -> Result<(Generator, SkeletonTopology)> {
    decode_generator(&fs::read(path)?)
}

pub fn encode_classifier(clf: &Classifier) -> Result<Vec<u8>> {
    encode(CLASSIFIER_MAGIC, clf.config(), clf.topology(), clf.store())
}

pub fn decode_classifier(bytes: &[u8]) -> Result<Classifier> {
    let (cfg, topo, store): (ClassifierConfig, _, _) = decode(CLASSIFIER_MAGIC, bytes)?;
    Classifier::from_parts(cfg, store, &topo)
}

pub fn save_classifier(clf: &Classifier, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_classifier(clf)?)?;
    Ok(())
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<Classifier> {
    decode_classifier(&fs::read(path)?)
}
