//! Projection keys: the secret spreading matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Prng, GENERATOR_ID};

/// The watermarking key: an `l x v` matrix of independent standard-normal
/// entries, regenerated on demand from its seed. Row `j` is the spreading
/// direction for message bit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionKey {
    seed: u64,
    rows: usize,
    cols: usize,
    /// Row-major, rows * cols values.
    matrix: Vec<f64>,
}

impl ProjectionKey {
    /// Generate the key matrix for `(seed, l, v)`. Entries are drawn row by
    /// row from the seeded generator, so the same triple always yields
    /// bit-identical values.
    pub fn generate(seed: u64, l: usize, v: usize) -> Self {
        assert!(l >= 1 && v >= 1, "key dimensions must be positive");
        let mut rng = Prng::seed_from_u64(seed);
        ProjectionKey {
            seed,
            rows: l,
            cols: v,
            matrix: rng.normal_vec(l * v),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.matrix[j * self.cols..(j + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.matrix
    }

    /// Mutable access to the matrix, for building special-purpose keys
    /// (identity or basis rows) whose projections can be read off by hand.
    /// A key edited this way no longer matches its seed, so it must not be
    /// round-tripped through a key file.
    pub fn matrix_mut(&mut self) -> &mut [f64] {
        &mut self.matrix
    }
}

/// What a key file stores: the generating triple, never the matrix. Keeping
/// files seed-only forces the generator to stay portable and makes a key a
/// few dozen bytes regardless of `l * v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile {
    pub generator: String,
    pub seed: u64,
    pub l: usize,
    pub v: usize,
}

impl KeyFile {
    pub fn new(seed: u64, l: usize, v: usize) -> Self {
        KeyFile {
            generator: GENERATOR_ID.to_string(),
            seed,
            l,
            v,
        }
    }

    pub fn to_key(&self) -> Result<ProjectionKey> {
        if self.generator != GENERATOR_ID {
            return Err(Error::Format(format!(
                "key file generator {:?} is not the supported {:?}",
                self.generator, GENERATOR_ID
            )));
        }
        if self.l == 0 || self.v == 0 {
            return Err(Error::Format("key dimensions must be positive".into()));
        }
        Ok(ProjectionKey::generate(self.seed, self.l, self.v))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
