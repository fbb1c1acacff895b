//! Ground-truth instance labels.
//!
//! A label map assigns every pixel an instance id: 0 is background, ids 1..K
//! are instances. Ids must be contiguous — every id in 1..K occurs at least
//! once — which construction validates, so downstream code can index
//! per-instance data by `id - 1` without gaps. An instance's pixel set may
//! be disconnected (occlusion does that).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// H x W map of instance ids, 0 = background, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceLabelMap {
    height: usize,
    width: usize,
    ids: Vec<u16>,
    num_instances: u16,
}

impl InstanceLabelMap {
    /// Validates contiguity: with K = max id, every id in 1..=K must appear.
    pub fn new(height: usize, width: usize, ids: Vec<u16>) -> Result<InstanceLabelMap, String> {
        if ids.len() != height * width {
            return Err(format!(
                "label data length {} does not match {height}x{width}",
                ids.len()
            ));
        }
        let k = ids.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; k as usize + 1];
        for &id in &ids {
            seen[id as usize] = true;
        }
        for id in 1..=k {
            if !seen[id as usize] {
                return Err(format!(
                    "instance ids must be contiguous: id {id} missing but max id is {k}"
                ));
            }
        }
        Ok(InstanceLabelMap {
            height,
            width,
            ids,
            num_instances: k,
        })
    }

    pub fn empty(height: usize, width: usize) -> InstanceLabelMap {
        InstanceLabelMap {
            height,
            width,
            ids: vec![0; height * width],
            num_instances: 0,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// K, the number of instances.
    pub fn num_instances(&self) -> u16 {
        self.num_instances
    }

    pub fn ids(&self) -> &[u16] {
        &self.ids
    }

    pub fn id_at(&self, r: usize, c: usize) -> u16 {
        self.ids[r * self.width + c]
    }

    /// Linear pixel indices (row-major, ascending) of instance `id`.
    pub fn pixels_of(&self, id: u16) -> Vec<u32> {
        self.ids
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == id)
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Pixel sets of all instances, indexed by `id - 1`. Single pass.
    pub fn all_instance_pixels(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.num_instances as usize];
        for (i, &id) in self.ids.iter().enumerate() {
            if id > 0 {
                out[id as usize - 1].push(i as u32);
            }
        }
        out
    }

    /// Linear indices of background pixels.
    pub fn background_pixels(&self) -> Vec<u32> {
        self.ids
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 0)
            .map(|(i, _)| i as u32)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_gappy_ids() {
        // id 2 missing while 3 present
        let err = InstanceLabelMap::new(1, 4, vec![0, 1, 3, 3]).unwrap_err();
        assert!(err.contains("id 2 missing"), "{err}");
    }

    #[test]
    fn counts_and_pixel_sets() {
        let m = InstanceLabelMap::new(2, 3, vec![0, 1, 1, 2, 0, 2]).unwrap();
        assert_eq!(m.num_instances(), 2);
        assert_eq!(m.pixels_of(1), vec![1, 2]);
        assert_eq!(m.pixels_of(2), vec![3, 5]);
        assert_eq!(m.background_pixels(), vec![0, 4]);
        assert_eq!(m.all_instance_pixels(), vec![vec![1, 2], vec![3, 5]]);
    }

    #[test]
    fn empty_map_has_no_instances() {
        let m = InstanceLabelMap::empty(4, 4);
        assert_eq!(m.num_instances(), 0);
        assert_eq!(m.background_pixels().len(), 16);
    }
}
