//! On-disk gait formats: one-gait JSON documents and the packed `EGT1` batch
//! format. Byte layouts are documented in `docs/formats.md`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::{Emotion, GaitSequence, COORDS};
use crate::skeleton::{default_topology, SkeletonTopology};

pub const GAIT_JSON_VERSION: u32 = 1;
pub const BATCH_MAGIC: &[u8; 4] = b"EGT1";
pub const BATCH_VERSION: u32 = 1;
const NO_LABEL: u8 = 0xFF;

#[derive(Serialize, Deserialize)]
struct GaitDocument {
    version: u32,
    joints: Vec<String>,
    frame_rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    frames: Vec<Vec<Vec<f64>>>,
}

pub fn save_gait(gait: &GaitSequence, path: impl AsRef<Path>) -> Result<()> {
    save_gait_with(gait, &default_topology(), path)
}

pub fn save_gait_with(
    gait: &GaitSequence,
    topo: &SkeletonTopology,
    path: impl AsRef<Path>,
) -> Result<()> {
    check_joints(gait.joints(), topo)?;
    let doc = GaitDocument {
        version: GAIT_JSON_VERSION,
        joints: topo.names().to_vec(),
        frame_rate_hz: gait.frame_rate(),
        label: gait.label().map(|l| l.as_str().to_string()),
        frames: gait
            .to_frames()
            .into_iter()
            .map(|f| f.into_iter().map(|p| p.to_vec()).collect())
            .collect(),
    };
    let w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(w, &doc)?;
    Ok(())
}

pub fn load_gait(path: impl AsRef<Path>) -> Result<GaitSequence> {
    load_gait_with(path, &default_topology())
}

pub fn load_gait_with(path: impl AsRef<Path>, topo: &SkeletonTopology) -> Result<GaitSequence> {
    let doc: GaitDocument = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
    if doc.version != GAIT_JSON_VERSION {
        return Err(Error::Format(format!(
            "unsupported gait version {}",
            doc.version
        )));
    }
    let v = topo.num_joints();
    if doc.joints.len() != v {
        return Err(Error::Dimension {
            what: "V",
            expected: v,
            found: doc.joints.len(),
        });
    }
    if doc.joints != topo.names() {
        return Err(Error::Format(format!(
            "joint names {:?} do not match the skeleton",
            doc.joints
        )));
    }
    let mut frames = Vec::with_capacity(doc.frames.len());
    for frame in &doc.frames {
        if frame.len() != v {
            return Err(Error::Dimension {
                what: "V",
                expected: v,
                found: frame.len(),
            });
        }
        let mut pts = Vec::with_capacity(v);
        for p in frame {
            if p.len() != COORDS {
                return Err(Error::Dimension {
                    what: "C",
                    expected: COORDS,
                    found: p.len(),
                });
            }
            pts.push([p[0], p[1], p[2]]);
        }
        frames.push(pts);
    }
    let label = doc.label.as_deref().map(str::parse).transpose()?;
    GaitSequence::from_frames(&frames, doc.frame_rate_hz, label)
}

fn check_joints(v: usize, topo: &SkeletonTopology) -> Result<()> {
    if v != topo.num_joints() {
        return Err(Error::Dimension {
            what: "V",
            expected: topo.num_joints(),
            found: v,
        });
    }
    Ok(())
}

/// Write gaits to an `EGT1` batch file.
pub fn write_batch(gaits: &[GaitSequence], path: impl AsRef<Path>) -> Result<()> {
    let topo = default_topology();
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_batch(gaits, &topo)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_batch(path: impl AsRef<Path>) -> Result<Vec<GaitSequence>> {
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
    decode_batch(&bytes, &default_topology())
}

pub fn encode_batch(gaits: &[GaitSequence], topo: &SkeletonTopology) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(BATCH_MAGIC);
    out.extend_from_slice(&BATCH_VERSION.to_le_bytes());
    out.extend_from_slice(&(topo.num_joints() as u32).to_le_bytes());
    for name in topo.names() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out.extend_from_slice(&(COORDS as u32).to_le_bytes());
    out.extend_from_slice(&(gaits.len() as u32).to_le_bytes());
    for g in gaits {
        check_joints(g.joints(), topo)?;
        out.extend_from_slice(&(g.frames() as u32).to_le_bytes());
        out.extend_from_slice(&g.frame_rate().to_le_bytes());
        out.push(g.label().map_or(NO_LABEL, |l| l.index() as u8));
        for t in 0..g.frames() {
            for v in 0..g.joints() {
                for c in g.joint(t, v) {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_batch(bytes: &[u8], topo: &SkeletonTopology) -> Result<Vec<GaitSequence>> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4)? != BATCH_MAGIC {
        return Err(Error::Format("missing EGT1 magic".into()));
    }
    let version = cur.u32()?;
    if version != BATCH_VERSION {
        return Err(Error::Format(format!(
            "unsupported batch version {}",
            version
        )));
    }
    let v = cur.u32()? as usize;
    if v != topo.num_joints() {
        return Err(Error::Dimension {
            what: "V",
            expected: topo.num_joints(),
            found: v,
        });
    }
    for expected in topo.names() {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Format("joint name is not UTF-8".into()))?;
        if name != expected {
            return Err(Error::Format(format!(
                "joint `{}` where `{}` was expected",
                name, expected
            )));
        }
    }
    let c = cur.u32()? as usize;
    if c != COORDS {
        return Err(Error::Dimension {
            what: "C",
            expected: COORDS,
            found: c,
        });
    }
    let count = cur.u32()? as usize;
    let mut gaits = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let t = cur.u32()? as usize;
        let rate = cur.f64()?;
        let label = match cur.u8()? {
            NO_LABEL => None,
            i => Some(
                Emotion::from_index(i as usize)
                    .ok_or_else(|| Error::Format(format!("label code {}", i)))?,
            ),
        };
        let mut frames = Vec::with_capacity(t);
        for _ in 0..t {
            let mut pts = Vec::with_capacity(v);
            for _ in 0..v {
                pts.push([cur.f64()?, cur.f64()?, cur.f64()?]);
            }
            frames.push(pts);
        }
        gaits.push(GaitSequence::from_frames(&frames, rate, label)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after last gait".into()));
    }
    Ok(gaits)
}
