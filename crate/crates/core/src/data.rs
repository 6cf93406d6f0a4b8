//! Datasets and their distribution across clients.
//!
//! Corpora are classification sets: row-major feature matrix plus one label
//! per row. They come from either a seeded Gaussian-cluster generator or a
//! pair of IDX-format files (the MNIST container layout). Client shards are
//! produced by a two-level Dirichlet scheme: one draw skews shard sizes,
//! one draw per client skews its class mixture, so label heterogeneity and
//! size heterogeneity are controlled independently.

use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Batch, LossKind};
use crate::rng;

/// In-memory classification corpus. `inputs` is `n × input_dim` row-major;
/// every label is below `class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    input_dim: usize,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        input_dim: usize,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("dataset input_dim must be >= 1".into()));
        }
        if labels.is_empty() || inputs.len() != labels.len() * input_dim {
            return Err(Error::LengthMismatch {
                left: labels.len() * input_dim,
                right: inputs.len(),
            });
        }
        if class_count == 0 {
            return Err(Error::InvalidArgument("dataset class_count must be >= 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "dataset label {bad} out of range for {class_count} classes"
            )));
        }
        if !inputs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "dataset inputs" });
        }
        Ok(Dataset { inputs, input_dim, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Builds a training batch from the given rows, shaping targets for the
    /// loss: class indices for cross-entropy, one-hot rows for squared
    /// error.
    pub fn batch_of(&self, indices: &[usize], loss: LossKind) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::Empty("batch indices"));
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "batch index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        match loss {
            LossKind::CrossEntropy => Batch::classification(inputs, self.input_dim, labels),
            LossKind::SquaredError => {
                let mut values = vec![0.0; labels.len() * self.class_count];
                for (s, &l) in labels.iter().enumerate() {
                    values[s * self.class_count + l] = 1.0;
                }
                Batch::regression(inputs, self.input_dim, values, self.class_count)
            }
        }
    }

    /// Batch over every row, in row order.
    pub fn full_batch(&self, loss: LossKind) -> Result<Batch> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch_of(&all, loss)
    }
}

/// Seeded Gaussian-cluster corpus: one cluster center per class, uniform in
/// `[-2, 2]^d`, samples at `center + spread · N(0, I)`. Labels round-robin
/// so every class is populated whenever `n_samples >= class_count`.
pub fn generate_classification(
    seed: u64,
    n_samples: usize,
    input_dim: usize,
    class_count: usize,
    cluster_spread: f64,
) -> Result<Dataset> {
    if n_samples == 0 || input_dim == 0 || class_count == 0 {
        return Err(Error::InvalidArgument(
            "dataset.n_samples, input_dim, and class_count must be >= 1".into(),
        ));
    }
    if n_samples < class_count {
        return Err(Error::InvalidArgument(format!(
            "dataset.n_samples ({n_samples}) must be >= class_count ({class_count})"
        )));
    }
    if !cluster_spread.is_finite() || cluster_spread < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dataset.cluster_spread must be finite and >= 0, got {cluster_spread}"
        )));
    }
    let mut rng = rng::stream(&[seed, rng::STREAM_DATA_GEN]);
    let mut centers = vec![0.0; class_count * input_dim];
    for c in centers.iter_mut() {
        *c = rng.gen_range(-2.0..=2.0);
    }
    let mut inputs = Vec::with_capacity(n_samples * input_dim);
    let mut labels = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let class = s % class_count;
        let center = &centers[class * input_dim..(class + 1) * input_dim];
        for &c in center {
            let noise: f64 = StandardNormal.sample(&mut rng);
            inputs.push(c + cluster_spread * noise);
        }
        labels.push(class);
    }
    Dataset::new(inputs, input_dim, labels, class_count)
}

/// One client's slice of a dataset: row indices into the parent corpus and
/// the aggregation weight `p_k = n_k / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
    pub p_k: f64,
}

/// Largest-remainder apportionment of `total` units proportional to
/// `weights`. Ties break toward lower index; zero total weight splits
/// evenly. The result always sums to `total` exactly.
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum * total as f64).collect()
    } else {
        vec![total as f64 / weights.len() as f64; weights.len()]
    };
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Dirichlet draw as normalized Gamma samples; `k = 1` is the point mass.
/// Returns None when underflow degenerates the draw (caller retries).
fn dirichlet<R: Rng>(rng: &mut R, alpha: f64, k: usize) -> Option<Vec<f64>> {
    if k == 1 {
        return Some(vec![1.0]);
    }
    let gamma = rand_distr::Gamma::new(alpha, 1.0).ok()?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return None;
    }
    let out: Vec<f64> = draws.iter().map(|d| d / sum).collect();
    if out.iter().all(|v| v.is_finite()) {
        Some(out)
    } else {
        None
    }
}

/// Splits a dataset into `n_clients` disjoint, covering shards.
///
/// `size_alpha` drives a Dirichlet draw over shard sizes, `label_alpha` one
/// over each client's class mixture; small alphas mean heavy skew. Each
/// class pool is shuffled once and dealt out by largest-remainder
/// apportionment, so shards partition the row set exactly. Draws leaving
/// any client empty are rejected and retried up to 100 times.
pub fn partition_noniid(
    dataset: &Dataset,
    n_clients: usize,
    label_alpha: f64,
    size_alpha: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("partition.n_clients must be >= 1".into()));
    }
    if n_clients > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "partition.n_clients ({n_clients}) exceeds dataset size ({})",
            dataset.len()
        )));
    }
    for (name, alpha) in [("label_alpha", label_alpha), ("size_alpha", size_alpha)] {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "partition.{name} must be finite and > 0, got {alpha}"
            )));
        }
    }

    let n = dataset.len();
    let k = dataset.class_count();
    // Per-class pools, in row order; shuffled fresh each attempt.
    let mut class_pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &label) in dataset.labels().iter().enumerate() {
        class_pools[label].push(i);
    }

    const MAX_ATTEMPTS: usize = 100;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng::stream(&[seed, rng::STREAM_PARTITION, attempt as u64]);
        let Some(size_share) = dirichlet(&mut rng, size_alpha, n_clients) else {
            continue;
        };
        let target_sizes = apportion(&size_share, n);
        let mut mixtures = Vec::with_capacity(n_clients);
        let mut degenerate = false;
        for _ in 0..n_clients {
            match dirichlet(&mut rng, label_alpha, k) {
                Some(m) => mixtures.push(m),
                None => {
                    degenerate = true;
                    break;
                }
            }
        }
        if degenerate {
            continue;
        }

        let mut shard_indices: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for (class, pool) in class_pools.iter_mut().enumerate() {
            pool.shuffle(&mut rng);
            let weights: Vec<f64> =
                (0..n_clients).map(|c| mixtures[c][class] * target_sizes[c] as f64).collect();
            let counts = apportion(&weights, pool.len());
            let mut cursor = 0;
            for (client, &count) in counts.iter().enumerate() {
                shard_indices[client].extend_from_slice(&pool[cursor..cursor + count]);
                cursor += count;
            }
        }

        if shard_indices.iter().any(|s| s.is_empty()) {
            continue;
        }
        let shards = shard_indices
            .into_iter()
            .enumerate()
            .map(|(client_id, mut indices)| {
                indices.sort_unstable();
                let p_k = indices.len() as f64 / n as f64;
                ClientShard { client_id, indices, p_k }
            })
            .collect();
        return Ok(shards);
    }
    Err(Error::RetryExhausted {
        attempts: MAX_ATTEMPTS,
        context: format!(
            "partition left at least one of {n_clients} clients empty every attempt \
             (n = {n}, size_alpha = {size_alpha}, label_alpha = {label_alpha})"
        ),
    })
}

/// Seeded split into (train, holdout) with `max(1, round(fraction · n))`
/// holdout rows. Both sides stay non-empty.
pub fn split_holdout(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !fraction.is_finite() || fraction <= 0.0 || fraction >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if dataset.len() < 2 {
        return Err(Error::InvalidArgument("holdout split needs at least 2 samples".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(&[seed, rng::STREAM_HOLDOUT]));
    let eval_n = ((fraction * dataset.len() as f64).round() as usize).max(1).min(dataset.len() - 1);
    let (eval_idx, train_idx) = order.split_at(eval_n);
    let extract = |idx: &[usize]| -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(idx.len() * dataset.input_dim());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            inputs.extend_from_slice(dataset.row(i));
            labels.push(dataset.labels()[i]);
        }
        Dataset::new(inputs, dataset.input_dim(), labels, dataset.class_count())
    };
    Ok((extract(train_idx)?, extract(eval_idx)?))
}

// ── IDX files ───────────────────────────────────────────────────────────

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

fn read_u32_be(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::IdxFormat {
            path: path.into(),
            message: format!("truncated header: need {end} bytes, have {}", bytes.len()),
        });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Loads an IDX image/label file pair (the MNIST container format):
/// big-endian headers, magic 2051 for a 3-d byte tensor of images and 2049
/// for a 1-d byte vector of labels. Pixels are scaled to `[0, 1]`; rows are
/// flattened row-major; `class_count` is the largest label plus one.
pub fn load_idx(images_path: &std::path::Path, labels_path: &std::path::Path) -> Result<Dataset> {
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();
    let img = std::fs::read(images_path)?;
    let lbl = std::fs::read(labels_path)?;

    let magic = read_u32_be(&img, 0, &img_name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxFormat {
            path: img_name,
            message: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC} (images)"),
        });
    }
    let count = read_u32_be(&img, 4, &img_name)? as usize;
    let rows = read_u32_be(&img, 8, &img_name)? as usize;
    let cols = read_u32_be(&img, 12, &img_name)? as usize;
    let expected = 16 + count * rows * cols;
    if img.len() != expected {
        return Err(Error::IdxFormat {
            path: img_name,
            message: format!("payload size {} does not match header ({expected} bytes)", img.len()),
        });
    }

    let magic = read_u32_be(&lbl, 0, &lbl_name)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxFormat {
            path: lbl_name,
            message: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC} (labels)"),
        });
    }
    let lbl_count = read_u32_be(&lbl, 4, &lbl_name)? as usize;
    if lbl.len() != 8 + lbl_count {
        return Err(Error::IdxFormat {
            path: lbl_name,
            message: format!(
                "payload size {} does not match header ({} bytes)",
                lbl.len(),
                8 + lbl_count
            ),
        });
    }
    if count != lbl_count {
        return Err(Error::IdxFormat {
            path: lbl_name,
            message: format!("{count} images but {lbl_count} labels"),
        });
    }
    if count == 0 {
        return Err(Error::IdxFormat { path: img_name, message: "empty image set".into() });
    }

    let inputs: Vec<f64> = img[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lbl[8..].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().unwrap() + 1;
    Dataset::new(inputs, rows * cols, labels, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Targets;

    #[test]
    fn generator_is_deterministic_and_covers_classes() {
        let a = generate_classification(7, 1000, 4, 10, 0.5).unwrap();
        let b = generate_classification(7, 1000, 4, 10, 0.5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_classification(8, 1000, 4, 10, 0.5).unwrap());
        let mut counts = [0usize; 10];
        for &l in a.labels() {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 100));
    }

    #[test]
    fn generator_rejects_bad_arguments() {
        assert!(generate_classification(1, 5, 2, 10, 0.5).is_err());
        assert!(generate_classification(1, 10, 2, 10, -1.0).is_err());
        assert!(generate_classification(1, 0, 2, 1, 0.5).is_err());
    }

    #[test]
    fn apportion_sums_exactly() {
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 10).iter().sum::<usize>(), 10);
        assert_eq!(apportion(&[0.0, 0.0], 7).iter().sum::<usize>(), 7);
        assert_eq!(apportion(&[5.0, 3.0, 2.0], 10), vec![5, 3, 2]);
    }

    #[test]
    fn partition_is_disjoint_and_covering() {
        let data = generate_classification(1, 600, 3, 5, 0.8).unwrap();
        let shards = partition_noniid(&data, 7, 0.5, 1.0, 99).unwrap();
        assert_eq!(shards.len(), 7);
        let mut seen = vec![false; data.len()];
        for shard in &shards {
            assert!(!shard.indices.is_empty());
            for &i in &shard.indices {
                assert!(!seen[i], "row {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        let p_sum: f64 = shards.iter().map(|s| s.p_k).sum();
        assert!((p_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn near_uniform_alphas_give_near_uniform_shards() {
        let data = generate_classification(2, 2000, 3, 10, 0.8).unwrap();
        let shards = partition_noniid(&data, 10, 1e6, 1e6, 5).unwrap();
        let expected = 200.0;
        for shard in &shards {
            let n_k = shard.indices.len() as f64;
            assert!(
                (n_k - expected).abs() <= 0.1 * expected,
                "shard size {n_k} outside ±10% of {expected}"
            );
            let mut classes = [false; 10];
            for &i in &shard.indices {
                classes[data.labels()[i]] = true;
            }
            assert!(classes.iter().all(|&c| c), "a class is missing from a near-uniform shard");
        }
    }

    #[test]
    fn single_client_gets_everything() {
        let data = generate_classification(3, 50, 2, 5, 0.3).unwrap();
        let shards = partition_noniid(&data, 1, 0.1, 0.1, 1).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].indices.len(), 50);
        assert_eq!(shards[0].p_k, 1.0);
    }

    #[test]
    fn skewed_label_alpha_starves_some_class() {
        // With label_alpha = 0.1 the class mixtures are sparse; across 20
        // seeds at least one client must lack at least one class.
        let data = generate_classification(4, 5000, 3, 10, 0.8).unwrap();
        let mut found_missing = false;
        'seeds: for seed in 0..20u64 {
            let shards = partition_noniid(&data, 10, 0.1, 1.0, seed).unwrap();
            for shard in &shards {
                let mut classes = [false; 10];
                for &i in &shard.indices {
                    classes[data.labels()[i]] = true;
                }
                if classes.iter().any(|&c| !c) {
                    found_missing = true;
                    break 'seeds;
                }
            }
        }
        assert!(found_missing, "label_alpha = 0.1 never produced a missing class");
    }

    #[test]
    fn degenerate_size_alpha_exhausts_retries() {
        let data = generate_classification(5, 6, 2, 2, 0.3).unwrap();
        let err = partition_noniid(&data, 6, 1.0, 1e-9, 0).unwrap_err();
        assert!(matches!(err, Error::RetryExhausted { attempts: 100, .. }));
    }

    #[test]
    fn holdout_split_covers_and_separates() {
        let data = generate_classification(6, 200, 3, 4, 0.5).unwrap();
        let (train, eval) = split_holdout(&data, 0.1, 11).unwrap();
        assert_eq!(train.len(), 180);
        assert_eq!(eval.len(), 20);
        assert_eq!(train.class_count(), 4);
        // Deterministic split.
        let (train2, eval2) = split_holdout(&data, 0.1, 11).unwrap();
        assert_eq!(train, train2);
        assert_eq!(eval, eval2);
        assert!(split_holdout(&data, 0.0, 1).is_err());
        assert!(split_holdout(&data, 1.0, 1).is_err());
    }

    #[test]
    fn batch_of_shapes_targets_for_loss() {
        let data = generate_classification(8, 30, 2, 3, 0.4).unwrap();
        let ce = data.batch_of(&[0, 1, 2], LossKind::CrossEntropy).unwrap();
        assert_eq!(ce.len(), 3);
        assert!(matches!(ce.targets(), Targets::Classes(_)));
        let mse = data.batch_of(&[0, 1, 2], LossKind::SquaredError).unwrap();
        match mse.targets() {
            Targets::Values { data: v, dim } => {
                assert_eq!(*dim, 3);
                assert_eq!(v.len(), 9);
                for (s, &label) in [0usize, 1, 2].iter().enumerate() {
                    let row = &v[s * 3..(s + 1) * 3];
                    assert_eq!(row[data.labels()[label]], 1.0);
                    assert_eq!(row.iter().sum::<f64>(), 1.0);
                }
            }
            _ => panic!("expected one-hot values"),
        }
    }

    // IDX parsing against handcrafted byte buffers.

    fn write_idx_pair(
        dir: &std::path::Path,
        images: &[u8],
        labels: &[u8],
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("images.idx");
        let lbl = dir.join("labels.idx");
        std::fs::write(&img, images).unwrap();
        std::fs::write(&lbl, labels).unwrap();
        (img, lbl)
    }

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&2051u32.to_be_bytes());
        out.extend_from_slice(&count.to_be_bytes());
        out.extend_from_slice(&rows.to_be_bytes());
        out.extend_from_slice(&cols.to_be_bytes());
        out.extend_from_slice(pixels);
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&2049u32.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 2 * 3).map(|i| (i * 20) as u8).collect();
        let (img, lbl) =
            write_idx_pair(dir.path(), &idx_images(3, 2, 2, &pixels), &idx_labels(&[0, 2, 1]));
        let data = load_idx(&img, &lbl).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.input_dim(), 4);
        assert_eq!(data.class_count(), 3);
        assert_eq!(data.labels(), &[0, 2, 1]);
        assert!((data.row(0)[1] - 20.0 / 255.0).abs() < 1e-15);
        assert!(data.inputs().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn idx_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = idx_images(1, 1, 1, &[7]);
        img[3] = 9; // corrupt the magic
        let (img, lbl) = write_idx_pair(dir.path(), &img, &idx_labels(&[0]));
        let err = load_idx(&img, &lbl).unwrap_err();
        assert!(matches!(err, Error::IdxFormat { .. }), "got {err:?}");
    }

    #[test]
    fn idx_truncation_and_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = idx_images(2, 2, 2, &[0; 8]);
        img.pop(); // truncate payload
        let (img_p, lbl_p) = write_idx_pair(dir.path(), &img, &idx_labels(&[0, 1]));
        assert!(load_idx(&img_p, &lbl_p).is_err());

        let (img_p, lbl_p) =
            write_idx_pair(dir.path(), &idx_images(2, 2, 2, &[0; 8]), &idx_labels(&[0, 1, 1]));
        let err = load_idx(&img_p, &lbl_p).unwrap_err();
        assert!(format!("{err}").contains("2 images but 3 labels"));
    }
}
