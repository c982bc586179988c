use std::fmt;

/// Set of word indices drawn from a universe `0..universe`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WordSet {
    universe: usize,
    blocks: Vec<u64>,
}

impl WordSet {
    pub fn empty(universe: usize) -> Self {
        WordSet { universe, blocks: vec![0; universe.div_ceil(64)] }
    }

    pub fn full(universe: usize) -> Self {
        Self::span(universe, 0, universe)
    }

    /// Contiguous range `lo..hi`.
    pub fn span(universe: usize, lo: usize, hi: usize) -> Self {
        let mut s = Self::empty(universe);
        for i in lo..hi {
            s.insert(i);
        }
        s
    }

    pub fn from_indices(universe: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(universe);
        for i in indices {
            s.insert(i);
        }
        s
    }

    /// Bit `i` of `mask` marks word `i`. Universe must be at most 64.
    pub fn from_mask(universe: usize, mask: u64) -> Self {
        assert!(universe <= 64);
        let mut s = Self::empty(universe);
        if universe > 0 {
            s.blocks[0] = mask;
        }
        s
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.universe, "word {i} outside universe {}", self.universe);
        self.blocks[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.universe && self.blocks[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.universe).filter(move |&i| self.contains(i))
    }

    pub fn union(&self, other: &WordSet) -> WordSet {
        assert_eq!(self.universe, other.universe);
        WordSet {
            universe: self.universe,
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a | b).collect(),
        }
    }

    pub fn is_disjoint(&self, other: &WordSet) -> bool {
        self.blocks.iter().zip(&other.blocks).all(|(a, b)| a & b == 0)
    }

    /// Keep-mask over the universe.
    pub fn to_mask(&self) -> Vec<bool> {
        (0..self.universe).map(|i| self.contains(i)).collect()
    }
}

impl fmt::Debug for WordSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for WordSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_ops() {
        let a = WordSet::span(70, 2, 5);
        let b = WordSet::from_indices(70, [65, 5]);
        assert_eq!(a.len(), 3);
        assert!(a.is_disjoint(&b));
        let u = a.union(&b);
        assert_eq!(u.iter().collect::<Vec<_>>(), vec![2, 3, 4, 5, 65]);
        assert_eq!(u.to_string(), "{2,3,4,5,65}");
        assert!(WordSet::empty(3).is_empty());
        assert_eq!(WordSet::from_mask(3, 0b101), WordSet::from_indices(3, [0, 2]));
    }
}
