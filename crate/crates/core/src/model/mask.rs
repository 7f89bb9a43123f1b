use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-layer sets of MLP units whose coefficients are zeroed before the
/// value projection. Indices are 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    layers: Vec<Vec<usize>>,
    skip_layers: usize,
}

impl MaskSpec {
    /// Builds a mask after checking every index against `d_mlp` and that
    /// the first `skip_layers` sets are empty. Indices are sorted and
    /// deduplicated.
    pub fn new(mut layers: Vec<Vec<usize>>, skip_layers: usize, d_mlp: usize) -> Result<Self> {
        for (l, set) in layers.iter_mut().enumerate() {
            if let Some(&bad) = set.iter().find(|&&j| j >= d_mlp) {
                return Err(Error::Mask(format!("layer {l}: index {bad} >= d_mlp {d_mlp}")));
            }
            if l < skip_layers && !set.is_empty() {
                return Err(Error::Mask(format!("layer {l} is below skip_layers {skip_layers}")));
            }
            set.sort_unstable();
            set.dedup();
        }
        Ok(Self { layers, skip_layers })
    }

    /// Mask with no indices in any layer.
    pub fn empty(n_layers: usize, skip_layers: usize) -> Self {
        Self {
            layers: vec![Vec::new(); n_layers],
            skip_layers,
        }
    }

    /// Every unit of every layer at or after `skip_layers`.
    pub fn all(n_layers: usize, skip_layers: usize, d_mlp: usize) -> Self {
        let layers = (0..n_layers)
            .map(|l| if l < skip_layers { Vec::new() } else { (0..d_mlp).collect() })
            .collect();
        Self { layers, skip_layers }
    }

    pub fn skip_layers(&self) -> usize {
        self.skip_layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &[usize] {
        self.layers.get(l).map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Vec::is_empty)
    }

    /// Total number of masked units.
    pub fn count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Per-unit keep flags for layer `l`, or `None` when nothing is masked.
    pub(crate) fn keep_flags(&self, l: usize, d_mlp: usize) -> Option<Vec<bool>> {
        let set = self.layer(l);
        if set.is_empty() {
            return None;
        }
        let mut keep = vec![true; d_mlp];
        for &j in set {
            keep[j] = false;
        }
        Some(keep)
    }

    /// True when every set of `self` is contained in the matching set of `other`.
    pub fn is_subset_of(&self, other: &MaskSpec) -> bool {
        (0..self.layers.len()).all(|l| {
            let theirs = other.layer(l);
            self.layer(l).iter().all(|j| theirs.binary_search(j).is_ok())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_indices_and_skip() {
        assert!(matches!(MaskSpec::new(vec![vec![], vec![8]], 1, 8), Err(Error::Mask(_))));
        assert!(matches!(MaskSpec::new(vec![vec![1], vec![]], 1, 8), Err(Error::Mask(_))));
        let m = MaskSpec::new(vec![vec![], vec![3, 1, 3]], 1, 8).unwrap();
        assert_eq!(m.layer(1), &[1, 3]);
        assert_eq!(m.count(), 2);
    }

    #[test]
    fn all_respects_skip() {
        let m = MaskSpec::all(3, 1, 4);
        assert!(m.layer(0).is_empty());
        assert_eq!(m.layer(2), &[0, 1, 2, 3]);
        assert!(MaskSpec::empty(3, 1).is_subset_of(&m));
        assert!(!m.is_subset_of(&MaskSpec::empty(3, 1)));
    }
}
