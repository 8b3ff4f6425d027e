//! Order-statistic index for move-to-front.
//!
//! Each particle owns an integer key; rank is the number of occupied keys
//! below it, answered by a Fenwick tree over keys. Move-to-front gives the
//! particle a fresh key below the current front. Keys start in the upper
//! half of a `2N` range, so the lower half absorbs `N` moves before the
//! keys are compacted back up (amortized `O(log N)` per move).

use crate::error::{Error, Result};

const EMPTY: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct RankIndex {
    key_of: Vec<u32>,
    owner: Vec<u32>,
    tree: Vec<u32>,
    front: usize,
}

impl RankIndex {
    /// Builds the index from initial ranks, which must be a permutation of
    /// `0..N`.
    pub fn new(ranks: &[u32]) -> Result<Self> {
        let n = ranks.len();
        if n == 0 || n > (u32::MAX / 2) as usize {
            return Err(Error::domain("rank index", format!("unsupported size {n}")));
        }
        let mut owner = vec![EMPTY; 2 * n];
        for (i, &r) in ranks.iter().enumerate() {
            let slot = n + r as usize;
            if r as usize >= n || owner[slot] != EMPTY {
                return Err(Error::domain(
                    "rank index",
                    "initial ranks are not a permutation",
                ));
            }
            owner[slot] = i as u32;
        }
        let mut idx = Self {
            key_of: vec![0; n],
            owner,
            tree: Vec::new(),
            front: n,
        };
        idx.rebuild();
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.key_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key_of.is_empty()
    }

    fn rebuild(&mut self) {
        let cap = self.owner.len();
        self.tree = vec![0; cap + 1];
        for (key, &p) in self.owner.iter().enumerate() {
            if p != EMPTY {
                self.key_of[p as usize] = key as u32;
                self.tree[key + 1] = 1;
            }
        }
        // linear-time Fenwick construction
        for i in 1..=cap {
            let parent = i + (i & i.wrapping_neg());
            if parent <= cap {
                self.tree[parent] += self.tree[i];
            }
        }
    }

    #[inline]
    fn add(&mut self, key: usize, delta: i32) {
        let mut i = key + 1;
        while i < self.tree.len() {
            self.tree[i] = self.tree[i].wrapping_add_signed(delta);
            i += i & i.wrapping_neg();
        }
    }

    /// Occupied keys strictly below `key`.
    #[inline]
    fn count_below(&self, key: usize) -> u32 {
        let mut i = key;
        let mut acc = 0;
        while i > 0 {
            acc += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        acc
    }

    fn check(&self, particle: usize) -> Result<()> {
        if particle >= self.len() {
            return Err(Error::UnknownParticle(particle));
        }
        Ok(())
    }

    /// Current rank (0 is the top).
    pub fn rank_of(&self, particle: usize) -> Result<u32> {
        self.check(particle)?;
        Ok(self.count_below(self.key_of[particle] as usize))
    }

    /// Moves `particle` to rank 0; every particle above it shifts down one
    /// slot. Returns the rank held before the move.
    pub fn move_to_front(&mut self, particle: usize) -> Result<u32> {
        let rank = self.rank_of(particle)?;
        if rank == 0 {
            return Ok(0);
        }
        if self.front == 0 {
            self.compact();
        }
        let old = self.key_of[particle] as usize;
        self.owner[old] = EMPTY;
        self.add(old, -1);
        self.front -= 1;
        self.owner[self.front] = particle as u32;
        self.key_of[particle] = self.front as u32;
        self.add(self.front, 1);
        Ok(rank)
    }

    /// Packs the occupied keys into the upper half, preserving order.
    fn compact(&mut self) {
        let n = self.len();
        let order: Vec<u32> = self.owner.iter().copied().filter(|&p| p != EMPTY).collect();
        self.owner.fill(EMPTY);
        for (r, p) in order.into_iter().enumerate() {
            self.owner[n + r] = p;
        }
        self.front = n;
        self.rebuild();
    }

    /// Particles listed from rank 0 downwards.
    pub fn order(&self) -> Vec<u32> {
        self.owner.iter().copied().filter(|&p| p != EMPTY).collect()
    }

    /// Rank of every particle.
    pub fn ranks(&self) -> Vec<u32> {
        let mut ranks = vec![0; self.len()];
        for (r, p) in self.order().into_iter().enumerate() {
            ranks[p as usize] = r as u32;
        }
        ranks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_particle_example() {
        let mut idx = RankIndex::new(&[0, 1, 2]).unwrap();
        assert_eq!(idx.move_to_front(2).unwrap(), 2);
        assert_eq!(idx.ranks(), vec![1, 2, 0]);
        assert_eq!(idx.move_to_front(2).unwrap(), 0);
        assert_eq!(idx.ranks(), vec![1, 2, 0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RankIndex::new(&[0, 0]).is_err());
        assert!(RankIndex::new(&[1, 2]).is_err());
        let idx = RankIndex::new(&[0]).unwrap();
        assert!(matches!(idx.rank_of(3), Err(Error::UnknownParticle(3))));
    }

    #[test]
    fn agrees_with_naive_list() {
        let n = 37;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ranks: Vec<u32> = (0..n as u32).collect();
        ranks.reverse();
        let mut idx = RankIndex::new(&ranks).unwrap();
        let mut list: Vec<usize> = (0..n).rev().collect();
        for _ in 0..5_000 {
            let p = rng.random_range(0..n);
            let pos = list.iter().position(|&q| q == p).unwrap();
            assert_eq!(idx.move_to_front(p).unwrap() as usize, pos);
            list.remove(pos);
            list.insert(0, p);
        }
        let order: Vec<usize> = idx.order().into_iter().map(|p| p as usize).collect();
        assert_eq!(order, list);
    }
}
