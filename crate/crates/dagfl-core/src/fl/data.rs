//! Datasets, generators, and client partitioning (IID and Dirichlet).

use super::FlError;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::rng::stream;

/// A labelled classification dataset with row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u32>,
    pub num_features: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<u32>,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self, FlError> {
        if labels.is_empty() || features.len() != labels.len() * num_features {
            return Err(FlError::EmptyDataset);
        }
        debug_assert!(labels.iter().all(|&l| (l as usize) < num_classes));
        Ok(Dataset {
            features,
            labels,
            num_features,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features_of(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label_of(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// New dataset holding copies of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features_of(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            num_features: self.num_features,
            num_classes: self.num_classes,
        }
    }

    /// Concatenates datasets with identical shape.
    pub fn concat(parts: &[&Dataset]) -> Dataset {
        assert!(!parts.is_empty());
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        Dataset {
            features,
            labels,
            num_features: parts[0].num_features,
            num_classes: parts[0].num_classes,
        }
    }

    /// Per-class sample counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// CSV rows of `feature,...,feature,label`, one sample per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            for v in self.features_of(i) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{}\n", self.labels[i]));
        }
        out
    }
}

/// A dataset cut into train/validation/test portions at an 8:1:1 ratio.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Random 8:1:1 split. Requires at least 10 samples so that the validation
/// and test portions are non-empty.
pub fn split_811(data: &Dataset, rng: &mut ChaCha8Rng) -> Result<SplitDataset, FlError> {
    if data.len() < 10 {
        return Err(FlError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let tenth = data.len() / 10;
    let (val_idx, rest) = order.split_at(tenth);
    let (test_idx, train_idx) = rest.split_at(tenth);
    Ok(SplitDataset {
        train: data.subset(train_idx),
        validation: data.subset(val_idx),
        test: data.subset(test_idx),
    })
}

/// Built-in task generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// 8x8 glyph images of the digits 0-9 with shift and noise.
    ToyDigits,
    /// Gaussian-mixture classification in 64 dimensions, 10 classes.
    Synthetic,
}

impl Task {
    pub fn num_features(&self) -> usize {
        64
    }

    pub fn num_classes(&self) -> usize {
        10
    }

    pub fn generate(&self, samples: usize, seed: u64) -> Dataset {
        match self {
            Task::ToyDigits => generate_toy_digits(samples, seed),
            Task::Synthetic => generate_synthetic(samples, seed),
        }
    }
}

const DIGIT_GLYPHS: [[&str; 8]; 10] = [
    [
        "..####..", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", "..####..",
        "........",
    ],
    [
        "...##...", "..###...", "...##...", "...##...", "...##...", "...##...", ".######.",
        "........",
    ],
    [
        "..####..", ".#....#.", "......#.", ".....#..", "...##...", "..#.....", ".######.",
        "........",
    ],
    [
        ".#####..", "......#.", "......#.", "..####..", "......#.", "......#.", ".#####..",
        "........",
    ],
    [
        ".#...#..", ".#...#..", ".#...#..", ".######.", ".....#..", ".....#..", ".....#..",
        "........",
    ],
    [
        ".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#####..",
        "........",
    ],
    [
        "..####..", ".#......", ".#......", ".#####..", ".#....#.", ".#....#.", "..####..",
        "........",
    ],
    [
        ".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....",
        "........",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", "..####..",
        "........",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", "..####..",
        "........",
    ],
];

/// Digit-glyph images: base glyph, random +/-1 pixel shift, Gaussian pixel
/// noise, clamped to [0, 1].
fn generate_toy_digits(samples: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, "task/toy-digits");
    let noise = Normal::new(0.0, 0.15).unwrap();
    let mut features = Vec::with_capacity(samples * 64);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let class = rng.random_range(0..10u32);
        let dy = rng.random_range(-1i32..=1);
        let dx = rng.random_range(-1i32..=1);
        let glyph = &DIGIT_GLYPHS[class as usize];
        for y in 0..8i32 {
            for x in 0..8i32 {
                let (sy, sx) = (y - dy, x - dx);
                let ink = if (0..8).contains(&sy) && (0..8).contains(&sx) {
                    if glyph[sy as usize].as_bytes()[sx as usize] == b'#' {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    0.0
                };
                let v: f64 = ink + noise.sample(&mut rng);
                features.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    Dataset {
        features,
        labels,
        num_features: 64,
        num_classes: 10,
    }
}

/// Gaussian mixture: 10 random class centers in 64 dimensions, isotropic
/// noise around each. Hard enough that a tenth of the data underfits.
fn generate_synthetic(samples: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, "task/synthetic");
    let center_dist = Normal::new(0.0, 1.0).unwrap();
    let noise = Normal::new(0.0, 2.0).unwrap();
    let centers: Vec<f64> = (0..10 * 64).map(|_| center_dist.sample(&mut rng)).collect();
    let mut features = Vec::with_capacity(samples * 64);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let class = rng.random_range(0..10u32);
        let center = &centers[class as usize * 64..(class as usize + 1) * 64];
        for &c in center {
            features.push(c + noise.sample(&mut rng));
        }
        labels.push(class);
    }
    Dataset {
        features,
        labels,
        num_features: 64,
        num_classes: 10,
    }
}

/// How the source data is spread across clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionMode {
    Iid,
    /// Per-class client shares drawn from a symmetric Dirichlet; smaller
    /// `beta` means more skew.
    Dirichlet {
        beta: f64,
    },
}

#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub clients: usize,
    pub seed: u64,
}

/// Fewer samples than this per client cannot sustain an 8:1:1 local split.
pub const MIN_CLIENT_SAMPLES: usize = 10;

/// Splits `data` into `spec.clients` disjoint client datasets covering every
/// source sample exactly once.
pub fn partition(data: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>, FlError> {
    if spec.clients == 0 || data.is_empty() {
        return Err(FlError::EmptyDataset);
    }
    if spec.clients > data.len() {
        return Err(FlError::DimensionMismatch {
            expected: spec.clients,
            actual: data.len(),
        });
    }
    let mut rng = stream(spec.seed, "partition");
    let assignment = match spec.mode {
        PartitionMode::Iid => partition_iid(data.len(), spec.clients, &mut rng),
        PartitionMode::Dirichlet { beta } => {
            if beta <= 0.0 || !beta.is_finite() {
                return Err(FlError::EmptyDataset);
            }
            partition_dirichlet(data, spec.clients, beta, &mut rng)?
        }
    };
    Ok(assignment.iter().map(|idx| data.subset(idx)).collect())
}

fn partition_iid(n: usize, clients: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let base = n / clients;
    let extra = n % clients;
    let mut out = Vec::with_capacity(clients);
    let mut cursor = 0;
    for c in 0..clients {
        let take = base + usize::from(c < extra);
        out.push(order[cursor..cursor + take].to_vec());
        cursor += take;
    }
    out
}

fn partition_dirichlet(
    data: &Dataset,
    clients: usize,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>, FlError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
    for i in 0..data.len() {
        by_class[data.label_of(i)].push(i);
    }
    let gamma = Gamma::new(beta, 1.0).unwrap();
    // Very skewed draws can starve a client below what a local 8:1:1 split
    // needs; redraw the proportions rather than fail.
    for _attempt in 0..200 {
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); clients];
        for class_indices in &by_class {
            if class_indices.is_empty() {
                continue;
            }
            let mut shuffled = class_indices.clone();
            shuffled.shuffle(rng);
            let mut weights: Vec<f64> = (0..clients).map(|_| gamma.sample(rng)).collect();
            let sum: f64 = weights.iter().sum();
            if sum.is_nan() || sum <= 1e-300 {
                weights = vec![1.0; clients];
            }
            let counts = largest_remainder(&weights, shuffled.len());
            let mut cursor = 0;
            for (c, &count) in counts.iter().enumerate() {
                out[c].extend_from_slice(&shuffled[cursor..cursor + count]);
                cursor += count;
            }
        }
        if out.iter().all(|c| c.len() >= MIN_CLIENT_SAMPLES) {
            return Ok(out);
        }
    }
    Err(FlError::EmptyDataset)
}

/// Apportions `total` items proportionally to `weights`, conserving the sum
/// exactly. Ties break toward lower indices.
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
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

/// Mean over clients of the natural-log entropy of each client's class
/// distribution. Lower means more heterogeneous.
pub fn mean_client_entropy(clients: &[Dataset]) -> f64 {
    let mut total = 0.0;
    for client in clients {
        let hist = client.class_histogram();
        let n: usize = hist.iter().sum();
        let mut h = 0.0;
        for &count in &hist {
            if count > 0 {
                let p = count as f64 / n as f64;
                h -= p * p.ln();
            }
        }
        total += h;
    }
    total / clients.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(n: usize, seed: u64) -> Dataset {
        Task::Synthetic.generate(n, seed)
    }

    #[test]
    fn iid_splits_evenly() {
        let data = source(1000, 1);
        let spec = PartitionSpec {
            mode: PartitionMode::Iid,
            clients: 10,
            seed: 1,
        };
        let parts = partition(&data, &spec).unwrap();
        assert_eq!(parts.len(), 10);
        assert!(parts.iter().all(|p| p.len() == 100));
    }

    #[test]
    fn single_client_gets_everything() {
        let data = source(100, 2);
        let spec = PartitionSpec {
            mode: PartitionMode::Iid,
            clients: 1,
            seed: 2,
        };
        let parts = partition(&data, &spec).unwrap();
        assert_eq!(parts[0].len(), 100);
    }

    #[test]
    fn more_clients_than_samples_is_an_error() {
        let data = source(10, 3);
        let spec = PartitionSpec {
            mode: PartitionMode::Iid,
            clients: 11,
            seed: 3,
        };
        assert!(partition(&data, &spec).is_err());
    }

    #[test]
    fn partition_conserves_the_sample_multiset() {
        let data = source(500, 4);
        for mode in [PartitionMode::Iid, PartitionMode::Dirichlet { beta: 0.1 }] {
            let spec = PartitionSpec {
                mode,
                clients: 7,
                seed: 4,
            };
            let parts = partition(&data, &spec).unwrap();
            let total: usize = parts.iter().map(|p| p.len()).sum();
            assert_eq!(total, data.len());
            // Multiset check via sorted label+first-feature fingerprints.
            let mut original: Vec<(u32, u64)> = (0..data.len())
                .map(|i| (data.label_of(i) as u32, data.features_of(i)[0].to_bits()))
                .collect();
            let mut scattered: Vec<(u32, u64)> = parts
                .iter()
                .flat_map(|p| {
                    (0..p.len()).map(|i| (p.label_of(i) as u32, p.features_of(i)[0].to_bits()))
                })
                .collect();
            original.sort_unstable();
            scattered.sort_unstable();
            assert_eq!(original, scattered);
        }
    }

    #[test]
    fn huge_beta_approaches_iid_shares() {
        let data = source(2000, 5);
        let clients = 10;
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let spec = PartitionSpec {
                mode: PartitionMode::Dirichlet { beta: 1000.0 },
                clients,
                seed,
            };
            let parts = partition(&data, &spec).unwrap();
            let class_totals = data.class_histogram();
            for part in &parts {
                for (class, &count) in part.class_histogram().iter().enumerate() {
                    if class_totals[class] == 0 {
                        continue;
                    }
                    let share = count as f64 / class_totals[class] as f64;
                    worst = worst.max((share - 1.0 / clients as f64).abs());
                }
            }
        }
        assert!(worst < 0.05, "worst class-share deviation {worst}");
    }

    #[test]
    fn entropy_ordering_tracks_beta() {
        let data = source(1200, 6);
        let mut means = Vec::new();
        for mode in [
            PartitionMode::Dirichlet { beta: 0.05 },
            PartitionMode::Dirichlet { beta: 0.1 },
            PartitionMode::Iid,
        ] {
            let mut acc = 0.0;
            for seed in 0..10 {
                let spec = PartitionSpec {
                    mode,
                    clients: 10,
                    seed,
                };
                acc += mean_client_entropy(&partition(&data, &spec).unwrap());
            }
            means.push(acc / 10.0);
        }
        assert!(
            means[0] <= means[1] && means[1] <= means[2],
            "entropies {means:?}"
        );
    }

    #[test]
    fn split_ratio_is_eight_one_one() {
        let data = source(100, 7);
        let split = split_811(&data, &mut crate::rng::stream(7, "split")).unwrap();
        assert_eq!(split.train.len(), 80);
        assert_eq!(split.validation.len(), 10);
        assert_eq!(split.test.len(), 10);
    }

    #[test]
    fn generators_are_deterministic() {
        for task in [Task::ToyDigits, Task::Synthetic] {
            let a = task.generate(50, 11);
            let b = task.generate(50, 11);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn csv_has_one_row_per_sample() {
        let data = source(10, 8);
        let csv = data.to_csv();
        assert_eq!(csv.lines().count(), 10);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 65);
    }
}
