use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Listener, Speaker};
use crate::error::{Error, Result};
use crate::grad::{ParameterStore, Tensor};

const MAGIC: &[u8; 8] = b"DYNPOPCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Speaker,
    Listener,
}

/// A speaker or listener on disk.
///
/// Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header
/// (kind, architecture, world hash, free-form metadata, segment names and
/// shapes), then every segment as little-endian `f64` in declared order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: AgentKind,
    pub arch: Architecture,
    pub world_hash: String,
    pub metadata: serde_json::Map<String, serde_json::Value>,
    pub params: ParameterStore,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: AgentKind,
    arch: Architecture,
    world_hash: String,
    metadata: serde_json::Map<String, serde_json::Value>,
    segments: Vec<SegmentHeader>,
}

#[derive(Serialize, Deserialize)]
struct SegmentHeader {
    name: String,
    shape: [usize; 2],
}

impl Checkpoint {
    pub fn speaker(s: &Speaker, world_hash: &str) -> Self {
        Self {
            kind: AgentKind::Speaker,
            arch: s.arch.clone(),
            world_hash: world_hash.to_owned(),
            metadata: Default::default(),
            params: s.params.clone(),
        }
    }

    pub fn listener(l: &Listener, world_hash: &str) -> Self {
        Self {
            kind: AgentKind::Listener,
            arch: l.arch.clone(),
            world_hash: world_hash.to_owned(),
            metadata: Default::default(),
            params: l.params.clone(),
        }
    }

    pub fn with_metadata(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.metadata.insert(key.to_owned(), value.into());
        self
    }

    pub fn into_speaker(self) -> Result<Speaker> {
        if self.kind != AgentKind::Speaker {
            return Err(Error::Checkpoint("checkpoint holds a listener, not a speaker".into()));
        }
        Speaker::from_parts(self.arch, self.params)
    }

    pub fn into_listener(self) -> Result<Listener> {
        if self.kind != AgentKind::Listener {
            return Err(Error::Checkpoint("checkpoint holds a speaker, not a listener".into()));
        }
        Listener::from_parts(self.arch, self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind,
            arch: self.arch.clone(),
            world_hash: self.world_hash.clone(),
            metadata: self.metadata.clone(),
            segments: self
                .params
                .segments()
                .iter()
                .map(|s| SegmentHeader {
                    name: s.name.clone(),
                    shape: s.value.shape(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.flat_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for s in self.params.segments() {
            for v in s.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_owned());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut at = 20 + hlen;
        let mut params = ParameterStore::new();
        for seg in header.segments {
            let n = seg.shape[0] * seg.shape[1];
            let raw = bytes
                .get(at..at + 8 * n)
                .ok_or_else(|| bad("truncated parameter data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(seg.name, Tensor::new(seg.shape[0], seg.shape[1], data)?)?;
            at += 8 * n;
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok(Self {
            kind: header.kind,
            arch: header.arch,
            world_hash: header.world_hash,
            metadata: header.metadata,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Load and require a given world.
    pub fn load_for_world(path: &Path, world_hash: &str) -> Result<Self> {
        let c = Self::load(path)?;
        if c.world_hash != world_hash {
            return Err(Error::WorldMismatch {
                expected: world_hash.to_owned(),
                found: c.world_hash,
            });
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::WorldSpec;

    fn arch() -> Architecture {
        Architecture::for_world(&WorldSpec::uniform(2, 3, 0), 6, 3)
    }

    #[test]
    fn round_trip_speaker() {
        let s = Speaker::new(arch(), &mut crate::rng::seeded(0)).unwrap();
        let c = Checkpoint::speaker(&s, "abc").with_metadata("iteration", 3);
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.into_speaker().unwrap(), s);
    }

    #[test]
    fn round_trip_listener_file() {
        let l = Listener::new(arch(), &mut crate::rng::seeded(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.ckpt");
        Checkpoint::listener(&l, "w").save(&p).unwrap();
        let back = Checkpoint::load_for_world(&p, "w").unwrap();
        assert_eq!(back.params.content_hash(), l.params.content_hash());
        assert!(Checkpoint::load_for_world(&p, "other").is_err());
        assert!(Checkpoint::load(&p).unwrap().into_speaker().is_err());
    }

    #[test]
    fn rejects_corruption() {
        let l = Listener::new(arch(), &mut crate::rng::seeded(1)).unwrap();
        let bytes = Checkpoint::listener(&l, "w").to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
