//! Seeded synthetic classification datasets.
//!
//! Feature vectors are flat and interpreted by the network as channels-last
//! (h, w, c) grids, so `features` must equal h*w*c of the consuming network.
//!
//! Generative formulas (one Prng stream, draws in documented order):
//!
//! - gaussian-blobs: class centers mu_c ~ N(0, I) are drawn first
//!   (class-major, feature-minor); each sample is mu_c + noise * N(0, I).
//! - spirals: sample s of class c sits at parameter t = (s + 0.5) / per_class
//!   on an Archimedean spiral: radius t, angle 2*pi*(turns*t + c/classes)
//!   with turns = 1.5; features 0 and 1 are the spiral coordinates, all
//!   remaining features are pure noise; noise * N(0,1) is added to every
//!   feature.
//!
//! The train/test split interleaves samples within each class (a Bresenham
//! walk of the train fraction), so both splits cover the same regions; both
//! are exactly class-balanced.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    GaussianBlobs,
    Spirals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub classes: usize,
    pub per_class: usize,
    pub features: usize,
    pub noise: f64,
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.75
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if self.per_class < 2 {
            return Err(Error::InvalidConfig(
                "need at least 2 samples per class to split".into(),
            ));
        }
        if self.features < 2 {
            return Err(Error::InvalidConfig("need at least 2 features".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig("noise must be finite and >= 0".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "train_fraction must be strictly between 0 and 1".into(),
            ));
        }
        let train_n = (self.per_class as f64 * self.train_fraction).floor() as usize;
        if train_n == 0 || train_n == self.per_class {
            return Err(Error::InvalidConfig(
                "train fraction leaves an empty split".into(),
            ));
        }
        Ok(())
    }
}

/// Row-major sample matrices; row i of `train_x` is `dim` consecutive reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    pub train_x: Vec<f64>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<f64>,
    pub test_y: Vec<usize>,
}

impl Dataset {
    pub fn train_len(&self) -> usize {
        self.train_y.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_y.len()
    }
}

pub fn synth_dataset(cfg: &DataConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = Prng::seed_from_u64(cfg.seed);
    let f = cfg.features;
    let mut sample = vec![0.0; f];

    let centers = match cfg.kind {
        DatasetKind::GaussianBlobs => rng.normal_vec(cfg.classes * f),
        DatasetKind::Spirals => Vec::new(),
    };

    let mut out = Dataset {
        dim: f,
        classes: cfg.classes,
        train_x: Vec::new(),
        train_y: Vec::new(),
        test_x: Vec::new(),
        test_y: Vec::new(),
    };

    const TURNS: f64 = 1.5;
    for class in 0..cfg.classes {
        let mut train_count = 0usize;
        for s in 0..cfg.per_class {
            match cfg.kind {
                DatasetKind::GaussianBlobs => {
                    let mu = &centers[class * f..(class + 1) * f];
                    for (x, &m) in sample.iter_mut().zip(mu) {
                        *x = m + cfg.noise * rng.standard_normal();
                    }
                }
                DatasetKind::Spirals => {
                    let t = (s as f64 + 0.5) / cfg.per_class as f64;
                    let phi = std::f64::consts::TAU
                        * (TURNS * t + class as f64 / cfg.classes as f64);
                    sample[0] = t * phi.cos();
                    sample[1] = t * phi.sin();
                    for x in sample.iter_mut().skip(2) {
                        *x = 0.0;
                    }
                    for x in sample.iter_mut() {
                        *x += cfg.noise * rng.standard_normal();
                    }
                }
            }
            // Interleaved split: sample s trains iff the cumulative train
            // quota advances at s.
            let quota_before = (s as f64 * cfg.train_fraction).floor() as usize;
            let quota_after = ((s + 1) as f64 * cfg.train_fraction).floor() as usize;
            if quota_after > quota_before {
                out.train_x.extend_from_slice(&sample);
                out.train_y.push(class);
                train_count += 1;
            } else {
                out.test_x.extend_from_slice(&sample);
                out.test_y.push(class);
            }
        }
        debug_assert!(train_count > 0 && train_count < cfg.per_class);
    }
    Ok(out)
}
