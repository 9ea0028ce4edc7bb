use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub value: Tensor,
}

/// Named parameter segments with a flat view for vectorised updates.
///
/// Cloning yields an independent copy; the population buffers rely on that
/// to hold immutable snapshots.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    segments: Vec<Segment>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter segment `{name}`"
            )));
        }
        self.segments.push(Segment { name, value });
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.segments.iter().find(|s| s.name == name).map(|s| &s.value)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.segments.iter().map(|s| s.value.clone()).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().map(|s| s.name.as_str())
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn flat_len(&self) -> usize {
        self.segments.iter().map(|s| s.value.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for s in &self.segments {
            out.extend_from_slice(s.value.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::shape(
                "set_flat",
                format!("expected {} values, got {}", self.flat_len(), flat.len()),
            ));
        }
        let mut offset = 0;
        for s in &mut self.segments {
            let n = s.value.len();
            s.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Replace values segment by segment; shapes must match.
    pub fn set_tensors(&mut self, values: &[Tensor]) -> Result<()> {
        self.check_aligned(values)?;
        for (s, v) in self.segments.iter_mut().zip(values) {
            s.value = v.clone();
        }
        Ok(())
    }

    pub fn check_aligned(&self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.segments.len()
            || self
                .segments
                .iter()
                .zip(values)
                .any(|(s, v)| s.value.shape() != v.shape())
        {
            return Err(Error::shape(
                "parameter alignment",
                format!(
                    "store has {} segments, got {} tensors with mismatched shapes",
                    self.segments.len(),
                    values.len()
                ),
            ));
        }
        Ok(())
    }

    /// Record every segment on the tape, as leaves or as constants.
    pub fn on_tape(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.segments
            .iter()
            .map(|s| {
                if trainable {
                    tape.leaf(s.value.clone())
                } else {
                    tape.constant(s.value.clone())
                }
            })
            .collect()
    }

    /// SHA-256 over names, shapes and the little-endian bytes of every value.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.segments {
            h.update(s.name.as_bytes());
            for d in s.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in s.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub fn flatten(grads: &[Tensor]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.data().iter().copied()).collect()
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        s.insert("b", Tensor::row(vec![5.0, 6.0])).unwrap();
        s
    }

    #[test]
    fn flat_view_round_trip() {
        let mut s = store();
        assert_eq!(s.flat_len(), 6);
        assert_eq!(s.to_flat(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        s.set_flat(&[0.0; 6]).unwrap();
        assert_eq!(s.get("b").unwrap().data(), &[0.0, 0.0]);
        assert!(s.set_flat(&[0.0; 5]).is_err());
    }

    #[test]
    fn names_are_unique() {
        let mut s = store();
        assert!(s.insert("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn clones_are_independent() {
        let a = store();
        let mut b = a.clone();
        assert_eq!(a, b);
        b.set_flat(&[9.0; 6]).unwrap();
        assert_eq!(a.get("w").unwrap().data()[0], 1.0);
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
