use crate::error::{Error, Result};

/// Index groups in compressed-row form: group `j` is
/// `indices[offsets[j]..offsets[j + 1]]`, read from a flattened source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    shape: Vec<usize>,
    source_len: usize,
}

impl Segments {
    /// Groups laid out as a tensor of `shape`.
    pub fn new(groups: &[Vec<usize>], shape: Vec<usize>, source_len: usize) -> Result<Self> {
        if shape.iter().product::<usize>() != groups.len() {
            return Err(Error::ShapeMismatch(format!("{} groups for shape {shape:?}", groups.len())));
        }
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for g in groups {
            if let Some(&bad) = g.iter().find(|&&k| k >= source_len) {
                return Err(Error::ShapeMismatch(format!("index {bad} into {source_len} entries")));
            }
            indices.extend_from_slice(g);
            offsets.push(indices.len());
        }
        Ok(Self { offsets, indices, shape, source_len })
    }

    /// One-dimensional grouping.
    pub fn flat(groups: &[Vec<usize>], source_len: usize) -> Result<Self> {
        Self::new(groups, vec![groups.len()], source_len)
    }

    /// A gather where `None` produces a zero entry under `segment_sum`.
    pub fn gather(index: &[Option<usize>], shape: Vec<usize>, source_len: usize) -> Result<Self> {
        let groups: Vec<Vec<usize>> = index.iter().map(|i| i.iter().copied().collect()).collect();
        Self::new(&groups, shape, source_len)
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn get(&self, j: usize) -> &[usize] {
        &self.indices[self.offsets[j]..self.offsets[j + 1]]
    }

    pub(crate) fn check_source(&self, len: usize) -> Result<()> {
        if len != self.source_len {
            return Err(Error::ShapeMismatch(format!(
                "segments expect {} source entries, got {len}",
                self.source_len
            )));
        }
        Ok(())
    }
}
