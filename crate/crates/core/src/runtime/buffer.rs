use serde::{Deserialize, Serialize};

use crate::dataset::sample::ChunkRows;
use crate::error::{Error, Result};
use crate::magsim::ArmVec;
use crate::CHUNK_LEN;

pub const DEFAULT_LAMBDA: f64 = 0.01;

/// A chunk issued at step `t_r`, in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub t_r: i64,
    pub chunk: ChunkRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ensembled {
    pub action: ArmVec,
    /// Sum of the weights of the contributing chunks.
    pub weight_mass: f64,
    pub n_active: usize,
}

/// Active overlapping chunks and their exponential fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkBuffer {
    entries: Vec<ChunkEntry>,
    lambda: f64,
}

impl Default for ChunkBuffer {
    fn default() -> Self {
        ChunkBuffer::new(DEFAULT_LAMBDA)
    }
}

/// `exp(-lambda * i)` for aligned index `i`.
pub fn ensemble_weight(lambda: f64, i: usize) -> f64 {
    (-lambda * i as f64).exp()
}

impl ChunkBuffer {
    pub fn new(lambda: f64) -> Self {
        ChunkBuffer {
            entries: Vec::new(),
            lambda,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn entries(&self) -> &[ChunkEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn push_chunk(&mut self, t_r: i64, chunk: ChunkRows) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if t_r <= last.t_r {
                return Err(Error::NonMonotonicChunk {
                    last: last.t_r,
                    got: t_r,
                });
            }
        }
        self.entries.push(ChunkEntry { t_r, chunk });
        Ok(())
    }

    /// Drops chunks that no longer cover step `t`.
    pub fn prune(&mut self, t: i64) {
        self.entries.retain(|e| t - e.t_r < CHUNK_LEN as i64);
    }

    /// Weighted mean of the rows aligned with step `t`.
    pub fn ensemble_action(&self, t: i64) -> Result<Ensembled> {
        let mut num = [0.0; 4];
        let mut mass = 0.0;
        let mut n_active = 0;
        let mut common: Option<ArmVec> = None;
        let mut uniform = true;
        for e in &self.entries {
            let i = t - e.t_r;
            if !(0..CHUNK_LEN as i64).contains(&i) {
                continue;
            }
            let row = e.chunk[i as usize];
            match common {
                None => common = Some(row),
                Some(c) => uniform &= c == row,
            }
            let w = ensemble_weight(self.lambda, i as usize);
            for (n, a) in num.iter_mut().zip(&e.chunk[i as usize]) {
                *n += w * a;
            }
            mass += w;
            n_active += 1;
        }
        let Some(common) = common else {
            return Err(Error::NoAction(t));
        };
        // The weighted mean of equal rows is that row; skip the rounding.
        let action = if uniform {
            common
        } else {
            num.map(|n| n / mass)
        };
        Ok(Ensembled {
            action,
            weight_mass: mass,
            n_active,
        })
    }
}
