//! Label permutations: the current "concept" mapping raw classes to served
//! labels.

use crate::error::{Error, Result};
use crate::nn::NUM_CLASSES;

/// A bijection on the class indices `0..10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelPermutation {
    map: [u8; NUM_CLASSES],
}

impl Default for LabelPermutation {
    fn default() -> Self {
        Self::identity()
    }
}

impl LabelPermutation {
    pub fn identity() -> Self {
        let mut map = [0u8; NUM_CLASSES];
        for (i, m) in map.iter_mut().enumerate() {
            *m = i as u8;
        }
        LabelPermutation { map }
    }

    pub fn from_map(map: [u8; NUM_CLASSES]) -> Result<Self> {
        let mut seen = [false; NUM_CLASSES];
        for &v in &map {
            let v = v as usize;
            if v >= NUM_CLASSES || seen[v] {
                return Err(Error::Permutation(format!("{map:?} is not a bijection")));
            }
            seen[v] = true;
        }
        Ok(LabelPermutation { map })
    }

    pub fn map(&self) -> &[u8; NUM_CLASSES] {
        &self.map
    }

    /// Exchanges the labels served for raw classes `a` and `b`.
    pub fn swap_pair(&mut self, a: u8, b: u8) -> Result<()> {
        if a == b {
            return Err(Error::Permutation(format!("cannot swap class {a} with itself")));
        }
        if a as usize >= NUM_CLASSES || b as usize >= NUM_CLASSES {
            return Err(Error::Permutation(format!("class pair ({a}, {b}) out of range")));
        }
        self.map.swap(a as usize, b as usize);
        Ok(())
    }

    pub fn swapped(mut self, a: u8, b: u8) -> Result<Self> {
        self.swap_pair(a, b)?;
        Ok(self)
    }

    #[inline]
    pub fn relabel(&self, label: u8) -> u8 {
        self.map[label as usize]
    }

    pub fn is_bijection(&self) -> bool {
        Self::from_map(self.map).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_is_noop() {
        let id = LabelPermutation::identity();
        assert_eq!(id.map(), &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert!((0..10).all(|l| id.relabel(l) == l));
        assert!(id.is_bijection());
    }

    #[test]
    fn zero_nine_swap() {
        let p = LabelPermutation::identity().swapped(0, 9).unwrap();
        assert_eq!(p.relabel(0), 9);
        assert_eq!(p.relabel(9), 0);
        assert_eq!(p.relabel(4), 4);
    }

    #[test]
    fn rejects_degenerate_swaps() {
        let mut p = LabelPermutation::identity();
        assert!(p.swap_pair(3, 3).is_err());
        assert!(p.swap_pair(3, 10).is_err());
        assert_eq!(p, LabelPermutation::identity());
        assert!(LabelPermutation::from_map([0, 0, 2, 3, 4, 5, 6, 7, 8, 9]).is_err());
    }

    proptest! {
        #[test]
        fn swaps_preserve_bijection(pairs in prop::collection::vec((0u8..10, 0u8..10), 0..200)) {
            let mut p = LabelPermutation::identity();
            for (a, b) in pairs {
                if a != b {
                    p.swap_pair(a, b).unwrap();
                }
                prop_assert!(p.is_bijection());
            }
            let mut labels: Vec<u8> = (0..10).map(|l| p.relabel(l)).collect();
            labels.sort_unstable();
            prop_assert_eq!(labels, (0..10).collect::<Vec<u8>>());
        }

        #[test]
        fn double_swap_is_involution(start in prop::collection::vec((0u8..10, 0u8..10), 0..20), a in 0u8..10, b in 0u8..10) {
            prop_assume!(a != b);
            let mut p = LabelPermutation::identity();
            for (x, y) in start {
                if x != y {
                    p.swap_pair(x, y).unwrap();
                }
            }
            let q = p.swapped(a, b).unwrap().swapped(a, b).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
