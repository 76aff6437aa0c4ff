//! Dataset synthesis, IDX ingestion, train/test split and Dirichlet non-IID
//! client partitioning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::LabeledDataset;
use crate::seed;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Default fraction of each mini-batch poisoned by the query attack.
pub fn poison_rate_default() -> f64 {
    0.015
}

/// Samples poisoned in a batch of `batch_len` rows at `rate`.
pub fn poisoned_per_batch(rate: f64, batch_len: usize) -> usize {
    if rate <= 0.0 || batch_len == 0 {
        return 0;
    }
    ((rate * batch_len as f64).ceil() as usize).min(batch_len)
}

/// Gaussian-mixture classification data.
///
/// Each class mean is a random direction scaled to radius `class_sep`; samples
/// add unit-variance isotropic noise. Labels cycle through the classes and the
/// rows are shuffled.
pub fn generate_synthetic(
    classes: usize,
    dim: usize,
    n_samples: usize,
    class_sep: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || dim < 2 || n_samples < classes {
        return Err(Error::InvalidParameter(format!(
            "synthetic data needs C >= 2, d >= 2, n >= C (got C={classes}, d={dim}, n={n_samples})"
        )));
    }
    if !(class_sep >= 0.0) || !class_sep.is_finite() {
        return Err(Error::InvalidParameter("class_sep must be >= 0".into()));
    }
    let mut rng = seed::rng_from(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.iter().map(|v| v / norm * class_sep).collect()
        })
        .collect();

    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n_samples * dim);
    for &y in &labels {
        for &mean in &means[y] {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(mean + noise);
        }
    }
    LabeledDataset::new(features, dim, labels)
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("truncated {what} header")))
}

/// Parses an IDX image/label pair already in memory.
pub fn parse_idx(images: &[u8], labels: &[u8], max_samples: usize) -> Result<LabeledDataset> {
    let magic = read_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Idx(format!("bad images magic {magic:#010x}")));
    }
    let count = read_u32(images, 4, "images")? as usize;
    let rows = read_u32(images, 8, "images")? as usize;
    let cols = read_u32(images, 12, "images")? as usize;

    let magic = read_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Idx(format!("bad labels magic {magic:#010x}")));
    }
    let label_count = read_u32(labels, 4, "labels")? as usize;
    if label_count != count {
        return Err(Error::Idx(format!(
            "count mismatch: {count} images vs {label_count} labels"
        )));
    }

    let pixels = rows * cols;
    if pixels == 0 {
        return Err(Error::Idx("zero-sized images".into()));
    }
    if images.len() < 16 + count * pixels {
        return Err(Error::Idx("truncated images payload".into()));
    }
    if labels.len() < 8 + count {
        return Err(Error::Idx("truncated labels payload".into()));
    }

    let take = count.min(max_samples);
    let features = images[16..16 + take * pixels]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let ys = labels[8..8 + take].iter().map(|&b| b as usize).collect();
    LabeledDataset::new(features, pixels, ys)
}

/// Loads at most `max_samples` rows from an IDX image/label file pair.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    max_samples: usize,
) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels, max_samples)
}

/// Shuffled split into `(train, test)`; the test size is `round(n * test_fraction)`.
pub fn train_test_split(
    data: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::rng_from(seed));
    let n_test = (data.len() as f64 * test_fraction).round() as usize;
    let (test_idx, train_idx) = order.split_at(n_test);
    Ok((data.subset(train_idx), data.subset(test_idx)))
}

/// Per-client sample indices into a training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    /// Aggregation weights proportional to client data size.
    pub fn lambdas(&self) -> Vec<f64> {
        let total = self.total() as f64;
        if total == 0.0 {
            return vec![0.0; self.n_clients()];
        }
        self.assignments
            .iter()
            .map(|a| a.len() as f64 / total)
            .collect()
    }

    /// `counts[client][class]`.
    pub fn class_counts(&self, data: &LabeledDataset, classes: usize) -> Vec<Vec<usize>> {
        self.assignments
            .iter()
            .map(|idx| {
                let mut counts = vec![0; classes];
                for &i in idx {
                    counts[data.label(i)] += 1;
                }
                counts
            })
            .collect()
    }

    pub fn client_data(&self, data: &LabeledDataset, client: usize) -> LabeledDataset {
        data.subset(&self.assignments[client])
    }
}

/// For each class, draws client proportions from `Dirichlet(beta, ..., beta)`
/// and sends each of that class's samples to a client drawn from those
/// proportions.
pub fn dirichlet_partition(
    data: &LabeledDataset,
    n_clients: usize,
    beta: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    if n_clients < 2 {
        return Err(Error::InvalidParameter("need at least 2 clients".into()));
    }
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = seed::rng_from(seed);
    let classes = data.labels().iter().max().map_or(0, |m| m + 1);
    let mut assignments = vec![Vec::new(); n_clients];

    for class in 0..classes {
        let mut weights: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = weights.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            weights.iter_mut().for_each(|w| *w /= sum);
        } else {
            // every gamma draw underflowed; fall back to uniform proportions
            weights = vec![1.0 / n_clients as f64; n_clients];
        }
        let mut cumulative = Vec::with_capacity(n_clients);
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        for (i, _) in data.labels().iter().enumerate().filter(|(_, &y)| y == class) {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(n_clients - 1);
            assignments[k].push(i);
        }
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(PartitionPlan { assignments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(images: &[[u8; 4]]) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend((images.len() as u32).to_be_bytes());
        bytes.extend(2u32.to_be_bytes());
        bytes.extend(2u32.to_be_bytes());
        for img in images {
            bytes.extend(img);
        }
        bytes
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend(IDX_LABELS_MAGIC.to_be_bytes());
        bytes.extend((labels.len() as u32).to_be_bytes());
        bytes.extend(labels);
        bytes
    }

    #[test]
    fn poison_rate_matches_one_sample_per_batch() {
        assert_eq!(poison_rate_default(), 0.015);
        assert_eq!(poisoned_per_batch(0.015, 64), 1);
        assert_eq!(poisoned_per_batch(0.0, 64), 0);
    }

    #[test]
    fn synthetic_shape_and_classes() {
        let d = generate_synthetic(10, 20, 4000, 3.0, 1).unwrap();
        assert_eq!(d.len(), 4000);
        assert_eq!(d.dim(), 20);
        let mut seen = [false; 10];
        d.labels().iter().for_each(|&y| seen[y] = true);
        assert!(seen.iter().all(|&s| s));
        assert_eq!(d, generate_synthetic(10, 20, 4000, 3.0, 1).unwrap());
        assert!(generate_synthetic(1, 20, 10, 1.0, 1).is_err());
        assert!(generate_synthetic(3, 1, 10, 1.0, 1).is_err());
        assert!(generate_synthetic(3, 2, 2, 1.0, 1).is_err());
    }

    #[test]
    fn idx_hand_built_fixture() {
        let images = idx_images(&[[0, 255, 51, 102], [1, 2, 3, 4], [255, 255, 0, 0]]);
        let labels = idx_labels(&[7, 0, 3]);
        let d = parse_idx(&images, &labels, usize::MAX).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 4);
        assert_eq!(d.labels(), &[7, 0, 3]);
        assert_eq!(d.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.row(2), &[1.0, 1.0, 0.0, 0.0]);

        let one = parse_idx(&images, &labels, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.row(0), d.row(0));
    }

    #[test]
    fn idx_errors() {
        let images = idx_images(&[[0; 4], [1; 4], [2; 4]]);
        assert!(matches!(
            parse_idx(&images, &idx_labels(&[1, 2]), 10),
            Err(Error::Idx(msg)) if msg.contains("count mismatch")
        ));
        let mut bad = images.clone();
        bad[3] = 0x01;
        assert!(parse_idx(&bad, &idx_labels(&[1, 2, 3]), 10).is_err());
        assert!(parse_idx(&images[..20], &idx_labels(&[1, 2, 3]), 10).is_err());
        assert!(parse_idx(&images, &idx_labels(&[1, 2, 3])[..9], 10).is_err());
    }

    #[test]
    fn idx_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lbl.idx");
        std::fs::write(&ip, idx_images(&[[10; 4], [20; 4]])).unwrap();
        std::fs::write(&lp, idx_labels(&[1, 2])).unwrap();
        let d = load_idx(&ip, &lp, 5).unwrap();
        assert_eq!(d.labels(), &[1, 2]);
        assert!(load_idx(&dir.path().join("missing"), &lp, 5).is_err());
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let features: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let data = LabeledDataset::new(features, 1, vec![0; 100]).unwrap();
        let (train, test) = train_test_split(&data, 0.2, 3).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        let mut all: Vec<i64> = train
            .features()
            .iter()
            .chain(test.features())
            .map(|&v| v as i64)
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(train_test_split(&data, 0.2, 3).unwrap(), (train, test));

        let two = LabeledDataset::new(vec![1.0, 2.0], 1, vec![0, 1]).unwrap();
        let (a, b) = train_test_split(&two, 0.5, 0).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(train_test_split(&two, 0.0, 0).is_err());
        assert!(train_test_split(&two, 1.0, 0).is_err());
    }

    #[test]
    fn dirichlet_partition_covers_everything_once() {
        let data = generate_synthetic(10, 4, 1000, 1.0, 5).unwrap();
        for beta in [0.1, 1.0, 10.0] {
            let plan = dirichlet_partition(&data, 40, beta, 9).unwrap();
            let mut all: Vec<usize> = plan.assignments.concat();
            all.sort_unstable();
            assert_eq!(all, (0..1000).collect::<Vec<_>>());
            assert!((plan.lambdas().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(plan, dirichlet_partition(&data, 40, beta, 9).unwrap());
        }
        assert!(dirichlet_partition(&data, 40, 0.0, 1).is_err());
        assert!(dirichlet_partition(&data, 1, 1.0, 1).is_err());
    }
}
