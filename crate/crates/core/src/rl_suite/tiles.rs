//! Hashed tile coding with asymmetric tiling offsets.
//!
//! Tiling `t` displaces dimension `i` by `t * (2i + 1) / num_tilings` of a
//! tile, and grid cells are interned in an index table in first-seen order.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::mountain_car::{self, MountainCarState};

/// What to do once the index table is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overflow {
    /// Fail with [`Error::TableFull`].
    Reject,
    /// Fall back to hashing into the table, counting each such lookup.
    Hash,
}

#[derive(Debug, Clone)]
pub struct TileCoder {
    num_tilings: usize,
    tiles_per_dim: usize,
    bounds: Vec<(f64, f64)>,
    capacity: usize,
    overflow: Overflow,
    table: HashMap<Vec<i64>, usize>,
    collisions: u64,
}

impl TileCoder {
    pub fn new(
        num_tilings: usize,
        tiles_per_dim: usize,
        bounds: Vec<(f64, f64)>,
        capacity: usize,
        overflow: Overflow,
    ) -> Result<Self> {
        if num_tilings == 0 || tiles_per_dim == 0 || capacity == 0 || bounds.is_empty() {
            return Err(Error::Config(
                "tile coder needs tilings, tiles, capacity and at least one dimension".into(),
            ));
        }
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config(format!("empty tiling range [{lo}, {hi}]")));
        }
        Ok(Self {
            num_tilings,
            tiles_per_dim,
            bounds,
            capacity,
            overflow,
            table: HashMap::new(),
            collisions: 0,
        })
    }

    /// 16 tilings of 8×8 tiles over position × velocity, 4096 indices.
    pub fn mountain_car() -> Self {
        Self::mountain_car_with(16, Overflow::Reject)
    }

    pub fn mountain_car_with(num_tilings: usize, overflow: Overflow) -> Self {
        let bounds = vec![
            (mountain_car::MIN_POSITION, mountain_car::MAX_POSITION),
            (-mountain_car::MAX_SPEED, mountain_car::MAX_SPEED),
        ];
        Self::new(num_tilings, 8, bounds, 4096, overflow).expect("valid mountain car tiling")
    }

    pub fn num_tilings(&self) -> usize {
        self.num_tilings
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Distinct cells interned so far.
    pub fn used(&self) -> usize {
        self.table.len()
    }

    /// Lookups that had to share an index because the table was full.
    pub fn collisions(&self) -> u64 {
        self.collisions
    }

    /// One active index per tiling, in tiling order.
    pub fn encode(&mut self, point: &[f64]) -> Result<Vec<usize>> {
        if point.len() != self.bounds.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bounds.len(),
                got: point.len(),
            });
        }
        let n = self.num_tilings as i64;
        let quantized: Vec<i64> = point
            .iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| {
                let scaled = self.tiles_per_dim as f64 * (v - lo) / (hi - lo);
                (scaled * n as f64).floor() as i64
            })
            .collect();
        let mut active = Vec::with_capacity(self.num_tilings);
        let mut coords = Vec::with_capacity(point.len() + 1);
        for tiling in 0..n {
            coords.clear();
            coords.push(tiling);
            let mut b = tiling;
            for &q in &quantized {
                coords.push((q + b).div_euclid(n));
                b += 2 * tiling;
            }
            active.push(self.intern(&coords)?);
        }
        Ok(active)
    }

    pub fn encode_state(&mut self, s: &MountainCarState) -> Result<Vec<usize>> {
        if !s.in_bounds() {
            return Err(Error::StateOutOfBounds {
                position: s.position,
                velocity: s.velocity,
            });
        }
        self.encode(&[s.position, s.velocity])
    }

    /// Dense binary vector of length `capacity`.
    pub fn to_dense(&self, active: &[usize]) -> Vec<f64> {
        let mut x = vec![0.0; self.capacity];
        for &i in active {
            x[i] = 1.0;
        }
        x
    }

    fn intern(&mut self, coords: &[i64]) -> Result<usize> {
        if let Some(&i) = self.table.get(coords) {
            return Ok(i);
        }
        if self.table.len() < self.capacity {
            let i = self.table.len();
            self.table.insert(coords.to_vec(), i);
            return Ok(i);
        }
        match self.overflow {
            Overflow::Reject => Err(Error::TableFull {
                capacity: self.capacity,
            }),
            Overflow::Hash => {
                self.collisions += 1;
                Ok((fnv1a(coords) % self.capacity as u64) as usize)
            }
        }
    }
}

fn fnv1a(coords: &[i64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for c in coords {
        for b in c.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
