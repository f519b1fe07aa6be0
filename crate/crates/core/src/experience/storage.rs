//! Binary dataset files.
//!
//! Layout (little endian):
//! `magic[8] | version u32 | header_len u32 | header json | observations f64* | records`
//! where each record is `state u64 | action u32 | reward f64 | next u64 | trajectory u64 | step u64`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetMeta, ObsId, ReplayDataset, TransitionRecord};
use crate::diffcore::Tensor;
use crate::envs::Observation;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 8] = *b"EQPLDSET";
pub const DATASET_VERSION: u32 = 1;
const RECORD_BYTES: usize = 44;

#[derive(Serialize, Deserialize)]
struct Header {
    meta: DatasetMeta,
    num_observations: usize,
}

impl ReplayDataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header { meta: self.meta.clone(), num_observations: self.observations.len() })
            .expect("dataset header serializes");
        let obs_len: usize = self.meta.observation_shape.iter().product();
        let mut out = Vec::with_capacity(16 + header.len() + self.observations.len() * obs_len * 8 + self.records.len() * RECORD_BYTES);
        out.extend_from_slice(&DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for o in &self.observations {
            for v in o.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for r in &self.records {
            out.extend_from_slice(&(r.state.0 as u64).to_le_bytes());
            out.extend_from_slice(&(r.action as u32).to_le_bytes());
            out.extend_from_slice(&r.reward.to_le_bytes());
            out.extend_from_slice(&(r.next_state.0 as u64).to_le_bytes());
            out.extend_from_slice(&(r.trajectory_id as u64).to_le_bytes());
            out.extend_from_slice(&(r.step_index as u64).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != DATASET_MAGIC {
            return Err(Error::format(0, "not a dataset file (bad magic)"));
        }
        let version = cur.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::format(8, format!("unsupported dataset version {version}")));
        }
        let header_len = cur.u32()? as usize;
        let header_at = cur.pos as u64;
        let header: Header = serde_json::from_slice(cur.take(header_len)?)
            .map_err(|e| Error::format(header_at, format!("bad header: {e}")))?;
        let meta = header.meta;
        let obs_len: usize = meta.observation_shape.iter().product();
        let mut observations = Vec::with_capacity(header.num_observations);
        for _ in 0..header.num_observations {
            let mut data = Vec::with_capacity(obs_len);
            for _ in 0..obs_len {
                data.push(cur.f64()?);
            }
            let t = Tensor::new(meta.observation_shape.clone(), data)?;
            observations.push(Observation::new(t, meta.encoding));
        }
        let mut records = Vec::with_capacity(meta.num_records);
        for _ in 0..meta.num_records {
            let at = cur.pos as u64;
            let state = cur.u64()? as usize;
            let action = cur.u32()? as usize;
            let reward = cur.f64()?;
            let next_state = cur.u64()? as usize;
            let trajectory_id = cur.u64()? as usize;
            let step_index = cur.u64()? as usize;
            if !reward.is_finite() {
                return Err(Error::format(at, "non-finite reward"));
            }
            records.push(TransitionRecord {
                state: ObsId(state),
                action,
                reward,
                next_state: ObsId(next_state),
                trajectory_id,
                step_index,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::format(cur.pos as u64, "trailing bytes after last record"));
        }
        let end = cur.pos as u64;
        ReplayDataset::from_parts(meta, observations, records).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(end, message),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex sha256 of the serialized dataset; checkpoints remember it to detect stale pairings.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_grid_dataset;
    use super::super::{DatasetBuilder, ExplorationPolicy};
    use super::*;
    use crate::envs::Encoding;

    #[test]
    fn round_trip_is_exact() {
        let ds = small_grid_dataset(4, 11);
        let back = ReplayDataset::from_bytes(&ds.to_bytes()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }

    #[test]
    fn empty_dataset_round_trips() {
        let meta = DatasetMeta {
            env_id: "empty".into(),
            seed: 0,
            policy: ExplorationPolicy::UniformRandom,
            num_trajectories: 0,
            num_records: 0,
            num_actions: 4,
            episode_cap: 100,
            observation_shape: vec![3],
            encoding: Encoding::Symbolic,
        };
        let ds = DatasetBuilder::new(meta).finish().unwrap();
        let back = ReplayDataset::from_bytes(&ds.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back, ds);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = small_grid_dataset(2, 1).to_bytes();
        let cut = &bytes[..bytes.len() - 10];
        match ReplayDataset::from_bytes(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, cut.len() as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = small_grid_dataset(1, 1).to_bytes();
        bytes[8] = 9;
        assert!(matches!(ReplayDataset::from_bytes(&bytes), Err(Error::Format { offset: 8, .. })));
        bytes[0] = b'X';
        assert!(matches!(ReplayDataset::from_bytes(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let ds = small_grid_dataset(3, 5);
        ds.save(&path).unwrap();
        assert_eq!(ReplayDataset::load(&path).unwrap(), ds);
        assert!(matches!(ReplayDataset::load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
