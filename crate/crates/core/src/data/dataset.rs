use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::idx::{load_idx_images, load_idx_labels};
use crate::error::{Error, Result};
use crate::forward::predict_class;
use crate::linalg::{apply_affine, AffineMap, Vector};

/// Labelled images, unraveled, pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Vector>,
    pub labels: Vec<usize>,
    pub name: String,
}

impl Dataset {
    pub fn new(images: Vec<Vector>, labels: Vec<usize>, name: impl Into<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::dim("Dataset::new", images.len(), labels.len()));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|x| x.len() != first.len()) {
                return Err(Error::Format("images of different sizes in one dataset".into()));
            }
        }
        if images.iter().flat_map(|x| x.iter()).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Range("pixel outside [0, 1]".into()));
        }
        Ok(Dataset {
            images,
            labels,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-class counts for labels below `classes`.
    pub fn histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &l in &self.labels {
            if l < classes {
                h[l] += 1;
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Read `<dir>/{train,t10k}-{images-idx3,labels-idx1}-ubyte`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let read = |suffix: &str| -> Result<Vec<u8>> {
        let path = dir.join(format!("{}-{suffix}", split.prefix()));
        fs::read(&path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })
    };
    let images = load_idx_images(&read("images-idx3-ubyte")?)?;
    let labels = load_idx_labels(&read("labels-idx1-ubyte")?)?;
    if images.images.len() != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            images.images.len(),
            labels.len()
        )));
    }
    Ok(Dataset {
        images: images.images,
        labels,
        name: format!("mnist-{}", split.prefix()),
    })
}

/// `n` samples drawn without replacement, in draw order.
pub fn subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > ds.len() {
        return Err(Error::Range(format!("subset of {n} from a dataset of {}", ds.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, ds.len(), n);
    Ok(Dataset {
        images: picks.iter().map(|i| ds.images[i].clone()).collect(),
        labels: picks.iter().map(|i| ds.labels[i]).collect(),
        name: format!("{}[{n}@{seed}]", ds.name),
    })
}

/// Uniform inputs labelled by the argmax of `map x + noise`.
pub fn synthetic_affine_dataset(map: &AffineMap, n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::Range(format!("noise sd {noise_sd}")));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Range(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = map.input_len();
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vector = (0..d).map(|_| rng.gen::<f64>()).collect();
        let mut y = apply_affine(map, &x)?;
        if noise_sd > 0.0 {
            for v in y.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        labels.push(predict_class(&y));
        images.push(x);
    }
    Ok(Dataset {
        images,
        labels,
        name: format!("synthetic[{n}@{seed}]"),
    })
}
