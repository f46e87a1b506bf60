use super::rng::SplitMix64;
use crate::error::{Error, Result};

/// A bijection of `0..V`, stored as `order[position] = token id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<u32>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n as u32).collect(),
        }
    }

    /// Wraps `order` after checking every id appears exactly once.
    pub fn from_order(order: Vec<u32>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &id in &order {
            let slot = seen
                .get_mut(id as usize)
                .ok_or_else(|| Error::Input(format!("id {id} out of range")))?;
            if *slot {
                return Err(Error::Input(format!("id {id} repeated")));
            }
            *slot = true;
        }
        Ok(Self { order })
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `positions()[id]` is the index of `id` within the order.
    pub fn positions(&self) -> Vec<u32> {
        let mut pos = vec![0u32; self.order.len()];
        for (i, &id) in self.order.iter().enumerate() {
            pos[id as usize] = i as u32;
        }
        pos
    }
}

/// Fisher–Yates shuffle of `0..vocab_size` driven by splitmix64 seeded with `seed`.
pub fn seeded_permutation(seed: u64, vocab_size: usize) -> Permutation {
    let mut order: Vec<u32> = (0..vocab_size as u32).collect();
    let mut rng = SplitMix64::new(seed);
    for i in (1..order.len()).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    Permutation { order }
}

/// Green/red split of the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    is_green: Vec<bool>,
    gamma: f64,
    green_count: usize,
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must be in (0, 1), got {gamma}")))
    }
}

/// Number of green tokens for a vocabulary of `vocab_size` at ratio `gamma`.
pub fn green_list_size(vocab_size: usize, gamma: f64) -> usize {
    (gamma * vocab_size as f64).round() as usize
}

/// The first `round(gamma * V)` ids of [`seeded_permutation`] are green.
pub fn seeded_partition(seed: u64, vocab_size: usize, gamma: f64) -> Result<Partition> {
    check_gamma(gamma)?;
    let perm = seeded_permutation(seed, vocab_size);
    let green_count = green_list_size(vocab_size, gamma);
    let mut is_green = vec![false; vocab_size];
    for &id in &perm.order[..green_count] {
        is_green[id as usize] = true;
    }
    Ok(Partition {
        is_green,
        gamma,
        green_count,
    })
}

impl Partition {
    /// Builds a partition from an explicit green set.
    pub fn from_green(vocab_size: usize, green: &[u32], gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let mut is_green = vec![false; vocab_size];
        for &id in green {
            *is_green
                .get_mut(id as usize)
                .ok_or_else(|| Error::Input(format!("id {id} out of range")))? = true;
        }
        let green_count = is_green.iter().filter(|g| **g).count();
        Ok(Self {
            is_green,
            gamma,
            green_count,
        })
    }

    #[inline]
    pub fn is_green(&self, id: u32) -> bool {
        self.is_green.get(id as usize).copied().unwrap_or(false)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn vocab_size(&self) -> usize {
        self.is_green.len()
    }

    pub fn green_count(&self) -> usize {
        self.green_count
    }

    pub fn green(&self) -> Vec<u32> {
        self.ids_where(true)
    }

    pub fn red(&self) -> Vec<u32> {
        self.ids_where(false)
    }

    fn ids_where(&self, green: bool) -> Vec<u32> {
        self.is_green
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == green)
            .map(|(i, _)| i as u32)
            .collect()
    }
}
