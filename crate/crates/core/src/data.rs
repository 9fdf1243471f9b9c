//! Synthetic Gaussian-cluster datasets, fake-outlier distortion, fixed
//! outlier subsets, and mini-batch assembly.
//!
//! Inlier class means sit on a sphere of radius `radius`; training and test
//! outliers come from two disjoint sets of clusters placed on a sphere of
//! radius `ood_radius`. Every cluster mean keeps at least `min_separation`
//! distance from every other one.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{LabeledBatch, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, gaussian_sample, sq_dist, Matrix, Rng};

const FORMAT: &str = "hood-bundle-v1";
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Strong distortion applied to inliers to manufacture pseudo-outliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistortConfig {
    /// Standard deviation of additive Gaussian noise per round.
    pub noise_scale: f64,
    /// Shuffle the coordinates of each row every round.
    pub permute: bool,
    /// Each round multiplies a row by a factor drawn from `[1 - j, 1 + j]`.
    pub scale_jitter: f64,
    /// Number of distortion rounds.
    pub strength_n: usize,
}

impl Default for DistortConfig {
    fn default() -> Self {
        Self::strong(1.0)
    }
}

impl DistortConfig {
    /// Noise at three times the inlier spread, coordinate shuffling, five rounds.
    pub fn strong(inlier_std: f64) -> Self {
        Self {
            noise_scale: 3.0 * inlier_std,
            permute: true,
            scale_jitter: 0.5,
            strength_n: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::contract(format!("noise_scale must be non-negative, got {}", self.noise_scale)));
        }
        if !(0.0..1.0).contains(&self.scale_jitter) {
            return Err(Error::contract(format!("scale_jitter must lie in [0, 1), got {}", self.scale_jitter)));
        }
        Ok(())
    }
}

/// Applies `strength_n` rounds of noise, coordinate shuffling and scale
/// jitter to every row independently.
pub fn distort(x: &Matrix, cfg: &DistortConfig, rng: &mut Rng) -> Result<Matrix> {
    cfg.validate()?;
    let mut out = x.clone();
    let d = x.cols();
    let mut scratch = vec![0.0; d];
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for _ in 0..cfg.strength_n {
            if cfg.noise_scale > 0.0 {
                row.iter_mut().for_each(|v| *v += cfg.noise_scale * rng.normal());
            }
            if cfg.permute {
                let perm = rng.permutation(d);
                for (s, &p) in scratch.iter_mut().zip(&perm) {
                    *s = row[p];
                }
                row.copy_from_slice(&scratch);
            }
            if cfg.scale_jitter > 0.0 {
                let f = rng.uniform_range(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter);
                row.iter_mut().for_each(|v| *v *= f);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BundleConfig {
    pub classes: usize,
    pub dim: usize,
    /// Training inliers per class.
    pub n_per_class: usize,
    /// Test inliers per class.
    pub n_test_per_class: usize,
    /// Radius of the sphere carrying the inlier class means.
    pub radius: f64,
    pub class_std: f64,
    /// Minimum distance between any two cluster means (inlier or outlier).
    pub min_separation: f64,
    pub train_ood_clusters: usize,
    pub test_ood_clusters: usize,
    pub ood_radius: f64,
    pub ood_std: f64,
    /// Size of the training outlier pool.
    pub train_out_size: usize,
    /// Test inliers per test outlier.
    pub test_in_out_ratio: usize,
    /// When set, the training outlier pool is made of distorted inliers
    /// instead of samples from the training outlier clusters.
    pub fake_ood: Option<DistortConfig>,
    pub seed: u64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 8,
            n_per_class: 500,
            n_test_per_class: 250,
            radius: 3.0,
            class_std: 1.0,
            min_separation: 2.0,
            train_ood_clusters: 3,
            test_ood_clusters: 3,
            ood_radius: 3.0,
            ood_std: 1.0,
            train_out_size: 20_000,
            test_in_out_ratio: 5,
            fake_ood: None,
            seed: 7,
        }
    }
}

impl BundleConfig {
    pub fn gaussian(classes: usize, dim: usize, n_per_class: usize, ood_clusters: usize, seed: u64) -> Self {
        Self {
            classes,
            dim,
            n_per_class,
            train_ood_clusters: ood_clusters,
            test_ood_clusters: ood_clusters,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::contract(format!("{name} must be positive, got {v}")))
            }
        };
        if self.classes < 2 {
            return Err(Error::contract(format!("classes must be at least 2, got {}", self.classes)));
        }
        for (name, v) in [
            ("dim", self.dim),
            ("n_per_class", self.n_per_class),
            ("train_ood_clusters", self.train_ood_clusters),
            ("test_ood_clusters", self.test_ood_clusters),
            ("test_in_out_ratio", self.test_in_out_ratio),
        ] {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be at least 1")));
            }
        }
        positive("radius", self.radius)?;
        positive("class_std", self.class_std)?;
        positive("ood_radius", self.ood_radius)?;
        positive("ood_std", self.ood_std)?;
        if !(self.min_separation >= 0.0 && self.min_separation.is_finite()) {
            return Err(Error::contract(format!("min_separation must be non-negative, got {}", self.min_separation)));
        }
        if let Some(f) = &self.fake_ood {
            f.validate()?;
        }
        Ok(())
    }
}

/// Training and test splits with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub classes: usize,
    pub train_in: Matrix,
    pub train_labels: Vec<usize>,
    /// Unlabeled training outlier pool.
    pub train_out: Matrix,
    pub test_in: Matrix,
    pub test_labels: Vec<usize>,
    pub test_out: Matrix,
    pub meta: BundleConfig,
}

impl DatasetBundle {
    pub fn dim(&self) -> usize {
        self.train_in.cols()
    }
}

fn random_direction(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Places `count` means on a sphere, each at least `floor` away from every
/// mean in `taken` and from each other.
fn place_means(rng: &mut Rng, count: usize, d: usize, radius: f64, floor: f64, taken: &mut Vec<Vec<f64>>, what: &str) -> Result<Vec<Vec<f64>>> {
    let mut placed = Vec::with_capacity(count);
    for k in 0..count {
        let mut attempts = 0;
        loop {
            let m: Vec<f64> = random_direction(rng, d).into_iter().map(|v| v * radius).collect();
            if taken.iter().all(|t| sq_dist(t, &m).sqrt() >= floor) {
                taken.push(m.clone());
                placed.push(m);
                break;
            }
            attempts += 1;
            if attempts >= MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::contract(format!(
                    "cannot place {what} mean {k} at radius {radius} with separation floor {floor}"
                )));
            }
        }
    }
    Ok(placed)
}

/// Rows drawn round-robin from the given cluster means.
fn sample_clusters(rng: &mut Rng, means: &[Vec<f64>], rows: usize, std: f64) -> Result<(Matrix, Vec<usize>)> {
    let d = means[0].len();
    let mut data = Vec::with_capacity(rows * d);
    let mut which = Vec::with_capacity(rows);
    for i in 0..rows {
        let c = i % means.len();
        data.extend(gaussian_sample(rng, 1, d, &means[c], std)?.into_data());
        which.push(c);
    }
    Ok((Matrix::new(rows, d, data)?, which))
}

/// Generates a bundle deterministically from its config.
pub fn make_gaussian_bundle(cfg: &BundleConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let stream = |tag: u64| Rng::new(derive_seed(cfg.seed, &[tag]));
    let mut rng = stream(1);
    let mut taken = Vec::new();
    let inlier_means = place_means(&mut rng, cfg.classes, cfg.dim, cfg.radius, cfg.min_separation, &mut taken, "inlier")?;
    let train_ood = place_means(&mut rng, cfg.train_ood_clusters, cfg.dim, cfg.ood_radius, cfg.min_separation, &mut taken, "train outlier")?;
    let test_ood = place_means(&mut rng, cfg.test_ood_clusters, cfg.dim, cfg.ood_radius, cfg.min_separation, &mut taken, "test outlier")?;

    let (train_in, train_labels) = sample_clusters(&mut stream(2), &inlier_means, cfg.classes * cfg.n_per_class, cfg.class_std)?;
    let (test_in, test_labels) = sample_clusters(&mut stream(3), &inlier_means, cfg.classes * cfg.n_test_per_class, cfg.class_std)?;
    let n_test_out = test_in.rows() / cfg.test_in_out_ratio;
    let (test_out, _) = sample_clusters(&mut stream(4), &test_ood, n_test_out, cfg.ood_std)?;
    let train_out = match &cfg.fake_ood {
        None => sample_clusters(&mut stream(5), &train_ood, cfg.train_out_size, cfg.ood_std)?.0,
        Some(distortion) => {
            let mut rng = stream(6);
            let src: Vec<usize> = (0..cfg.train_out_size).map(|_| rng.below(train_in.rows())).collect();
            distort(&train_in.select_rows(&src), distortion, &mut rng)?
        }
    };
    Ok(DatasetBundle {
        classes: cfg.classes,
        train_in,
        train_labels,
        train_out,
        test_in,
        test_labels,
        test_out,
        meta: cfg.clone(),
    })
}

/// `groups` disjoint index sets of `per_epoch` rows, sampled uniformly
/// without replacement from the pool.
pub fn fixed_outlier_epochs(pool: &Matrix, groups: usize, per_epoch: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let needed = groups
        .checked_mul(per_epoch)
        .ok_or_else(|| Error::contract("outlier group request overflows"))?;
    if needed > pool.rows() {
        return Err(Error::contract(format!(
            "outlier pool has {} rows, {groups} groups of {per_epoch} need {needed}",
            pool.rows()
        )));
    }
    let perm = Rng::new(seed).permutation(pool.rows());
    Ok((0..groups).map(|g| perm[g * per_epoch..(g + 1) * per_epoch].to_vec()).collect())
}

/// Batches of one epoch: inliers in a fresh random order, outliers drawn
/// without replacement from the epoch's fixed group.
pub struct EpochBatches<'a> {
    bundle: &'a DatasetBundle,
    inlier_order: Vec<usize>,
    outlier_order: Vec<usize>,
    batch_in: usize,
    batch_out: usize,
    cursor_in: usize,
    cursor_out: usize,
}

impl<'a> EpochBatches<'a> {
    pub fn new(bundle: &'a DatasetBundle, group: &[usize], cfg: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        let inlier_order = rng.permutation(bundle.train_in.rows());
        let mut outlier_order = group.to_vec();
        rng.shuffle(&mut outlier_order);
        let batch_out = if cfg.objective.uses_outliers() { cfg.batch_in * cfg.ratio_out_in } else { 0 };
        if let Some(&bad) = outlier_order.iter().find(|&&i| i >= bundle.train_out.rows()) {
            return Err(Error::contract(format!("outlier index {bad} outside the pool")));
        }
        Ok(Self {
            bundle,
            inlier_order,
            outlier_order,
            batch_in: cfg.batch_in,
            batch_out,
            cursor_in: 0,
            cursor_out: 0,
        })
    }

    pub fn next_batch(&mut self) -> Result<LabeledBatch> {
        let end_in = self.cursor_in + self.batch_in;
        if end_in > self.inlier_order.len() {
            return Err(Error::contract("inliers exhausted for this epoch"));
        }
        let end_out = self.cursor_out + self.batch_out;
        if end_out > self.outlier_order.len() {
            return Err(Error::contract(format!(
                "outlier group exhausted: need {end_out} rows, group has {}",
                self.outlier_order.len()
            )));
        }
        let idx_in = &self.inlier_order[self.cursor_in..end_in];
        let idx_out = &self.outlier_order[self.cursor_out..end_out];
        self.cursor_in = end_in;
        self.cursor_out = end_out;
        Ok(LabeledBatch {
            x_in: self.bundle.train_in.select_rows(idx_in),
            labels: idx_in.iter().map(|&i| self.bundle.train_labels[i]).collect(),
            x_out: self.bundle.train_out.select_rows(idx_out),
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleHeader {
    format: String,
    classes: usize,
    dim: usize,
    seed: u64,
    train_in_rows: usize,
    train_out_rows: usize,
    test_in_rows: usize,
    test_out_rows: usize,
    config: BundleConfig,
}

const SPLITS: [&str; 4] = ["train_in", "train_out", "test_in", "test_out"];

fn write_block(out: &mut String, name: &str, x: &Matrix, labels: Option<&[usize]>) -> Result<()> {
    writeln!(out, "%% {name}").unwrap();
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<String> = Vec::new();
    if labels.is_some() {
        header.push("label".into());
    }
    header.extend((0..x.cols()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (i, row) in x.row_iter().enumerate() {
        let mut rec: Vec<String> = Vec::with_capacity(row.len() + 1);
        if let Some(l) = labels {
            rec.push(l[i].to_string());
        }
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
    Ok(())
}

fn read_block(name: &str, text: &str, rows: usize, cols: usize, labeled: bool) -> Result<(Matrix, Vec<usize>)> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let expected_width = cols + usize::from(labeled);
    let mut data = Vec::with_capacity(rows * cols);
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != expected_width {
            return Err(Error::Format(format!("{name}: row has {} fields, expected {expected_width}", rec.len())));
        }
        let mut fields = rec.iter();
        if labeled {
            let l = fields.next().unwrap();
            labels.push(l.parse().map_err(|_| Error::Format(format!("{name}: bad label `{l}`")))?);
        }
        for f in fields {
            data.push(f.parse::<f64>().map_err(|_| Error::Format(format!("{name}: bad value `{f}`")))?);
        }
    }
    if data.len() != rows * cols {
        return Err(Error::Format(format!("{name}: expected {rows} rows, found {}", data.len() / cols.max(1))));
    }
    Ok((Matrix::new(rows, cols, data)?, labels))
}

impl DatasetBundle {
    /// Text serialization: a TOML header followed by one CSV block per split.
    pub fn to_text(&self) -> Result<String> {
        let header = BundleHeader {
            format: FORMAT.into(),
            classes: self.classes,
            dim: self.dim(),
            seed: self.meta.seed,
            train_in_rows: self.train_in.rows(),
            train_out_rows: self.train_out.rows(),
            test_in_rows: self.test_in.rows(),
            test_out_rows: self.test_out.rows(),
            config: self.meta.clone(),
        };
        let mut out = String::new();
        out.push_str(&toml::to_string(&header)?);
        write_block(&mut out, "train_in", &self.train_in, Some(&self.train_labels))?;
        write_block(&mut out, "train_out", &self.train_out, None)?;
        write_block(&mut out, "test_in", &self.test_in, Some(&self.test_labels))?;
        write_block(&mut out, "test_out", &self.test_out, None)?;
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut chunks = text.split("%% ");
        let header: BundleHeader = toml::from_str(chunks.next().unwrap_or_default())?;
        if header.format != FORMAT {
            return Err(Error::Format(format!("unsupported bundle format `{}`", header.format)));
        }
        let mut blocks = Vec::new();
        for (chunk, expected) in chunks.by_ref().zip(SPLITS) {
            let (name, body) = chunk.split_once('\n').unwrap_or((chunk, ""));
            if name.trim() != expected {
                return Err(Error::Format(format!("expected split `{expected}`, found `{}`", name.trim())));
            }
            blocks.push(body);
        }
        if blocks.len() != SPLITS.len() || chunks.next().is_some() {
            return Err(Error::Format("bundle must contain exactly four splits".into()));
        }
        let d = header.dim;
        let (train_in, train_labels) = read_block("train_in", blocks[0], header.train_in_rows, d, true)?;
        let (train_out, _) = read_block("train_out", blocks[1], header.train_out_rows, d, false)?;
        let (test_in, test_labels) = read_block("test_in", blocks[2], header.test_in_rows, d, true)?;
        let (test_out, _) = read_block("test_out", blocks[3], header.test_out_rows, d, false)?;
        if let Some(&bad) = train_labels.iter().chain(&test_labels).find(|&&l| l >= header.classes) {
            return Err(Error::Format(format!("label {bad} out of range for {} classes", header.classes)));
        }
        Ok(Self {
            classes: header.classes,
            train_in,
            train_labels,
            train_out,
            test_in,
            test_labels,
            test_out,
            meta: header.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Objective;
    use std::collections::HashSet;

    fn small() -> BundleConfig {
        BundleConfig {
            n_per_class: 40,
            n_test_per_class: 20,
            train_out_size: 300,
            ..BundleConfig::gaussian(4, 8, 40, 3, 7)
        }
    }

    #[test]
    fn bundle_is_deterministic() {
        let cfg = BundleConfig::gaussian(4, 8, 500, 3, 7);
        let a = make_gaussian_bundle(&cfg).unwrap();
        let b = make_gaussian_bundle(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train_in.shape(), (2000, 8));
        assert_eq!(a.test_out.rows() * 5, a.test_in.rows());
    }

    #[test]
    fn labels_cover_all_classes() {
        let b = make_gaussian_bundle(&small()).unwrap();
        for labels in [&b.train_labels, &b.test_labels] {
            let seen: HashSet<_> = labels.iter().copied().collect();
            assert_eq!(seen.len(), 4);
        }
    }

    #[test]
    fn class_means_respect_floor() {
        let cfg = small();
        let b = make_gaussian_bundle(&cfg).unwrap();
        let means: Vec<Vec<f64>> = (0..4)
            .map(|c| {
                let idx: Vec<usize> = (0..b.train_labels.len()).filter(|&i| b.train_labels[i] == c).collect();
                b.train_in.select_rows(&idx).column_means()
            })
            .collect();
        // Empirical means are within a few standard errors of the true ones.
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert!(sq_dist(&means[i], &means[j]).sqrt() >= cfg.min_separation - 1.0);
            }
        }
    }

    #[test]
    fn impossible_separation_is_rejected() {
        let cfg = BundleConfig { min_separation: 100.0, ..small() };
        assert!(matches!(make_gaussian_bundle(&cfg), Err(Error::Contract(_))));
        assert!(make_gaussian_bundle(&BundleConfig { classes: 1, ..small() }).is_err());
    }

    #[test]
    fn train_and_test_outliers_disjoint() {
        let b = make_gaussian_bundle(&small()).unwrap();
        let key = |r: &[f64]| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let train: HashSet<_> = b.train_out.row_iter().map(key).collect();
        assert!(b.test_out.row_iter().all(|r| !train.contains(&key(r))));
    }

    #[test]
    fn zero_strength_is_identity() {
        let x = Matrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64);
        let cfg = DistortConfig { strength_n: 0, ..DistortConfig::strong(1.0) };
        assert_eq!(distort(&x, &cfg, &mut Rng::new(1)).unwrap(), x);
    }

    #[test]
    fn permute_only_swaps_columns() {
        let x = Matrix::from_fn(64, 2, |i, j| (2 * i + j) as f64);
        let cfg = DistortConfig { noise_scale: 0.0, permute: true, scale_jitter: 0.0, strength_n: 1 };
        let y = distort(&x, &cfg, &mut Rng::new(3)).unwrap();
        let mut swapped = 0;
        for i in 0..64 {
            let (a, b) = (x.row(i), y.row(i));
            if a == b {
                continue;
            }
            assert_eq!((b[0], b[1]), (a[1], a[0]));
            swapped += 1;
        }
        assert!(swapped > 0 && swapped < 64);
    }

    #[test]
    fn strong_distortion_moves_far_from_origin() {
        let cfg = BundleConfig { n_per_class: 250, ..small() };
        let b = make_gaussian_bundle(&cfg).unwrap();
        let x = b.train_in.slice_rows(0, 1000);
        let y = distort(&x, &DistortConfig::strong(cfg.class_std), &mut Rng::new(4)).unwrap();
        let mean_norm = y.row_iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / 1000.0;
        assert!(mean_norm > 2.0 * cfg.radius, "{mean_norm}");
    }

    #[test]
    fn fake_pool_replaces_real_outliers() {
        let cfg = BundleConfig { fake_ood: Some(DistortConfig::strong(1.0)), ..small() };
        let b = make_gaussian_bundle(&cfg).unwrap();
        assert_eq!(b.train_out.rows(), cfg.train_out_size);
        assert_ne!(b.train_out, make_gaussian_bundle(&small()).unwrap().train_out);
    }

    #[test]
    fn outlier_groups_are_disjoint_and_deterministic() {
        let pool = Matrix::zeros(100, 2);
        let g = fixed_outlier_epochs(&pool, 4, 25, 9).unwrap();
        assert_eq!(g, fixed_outlier_epochs(&pool, 4, 25, 9).unwrap());
        let all: HashSet<_> = g.iter().flatten().copied().collect();
        assert_eq!(all.len(), 100);
        assert!(fixed_outlier_epochs(&pool, 5, 25, 9).is_err());
    }

    #[test]
    fn batches_have_requested_sizes() {
        let b = make_gaussian_bundle(&BundleConfig { train_out_size: 1000, ..small() }).unwrap();
        let cfg = TrainConfig { batch_in: 64, ratio_out_in: 2, ..TrainConfig::default() };
        let group: Vec<usize> = (0..256).collect();
        let mut batches = EpochBatches::new(&b, &group, &cfg, &mut Rng::new(1)).unwrap();
        let batch = batches.next_batch().unwrap();
        assert_eq!(batch.x_in.rows(), 64);
        assert_eq!(batch.x_out.rows(), 128);
        batches.next_batch().unwrap();
        assert!(batches.next_batch().is_err(), "group of 256 holds two batches");

        let sup = TrainConfig { ratio_out_in: 0, ..cfg.clone() };
        let batch = EpochBatches::new(&b, &[], &sup, &mut Rng::new(1)).unwrap().next_batch().unwrap();
        assert_eq!(batch.x_out.rows(), 0);

        let ce = TrainConfig { objective: Objective::CeOnly, ..cfg };
        let batch = EpochBatches::new(&b, &[], &ce, &mut Rng::new(1)).unwrap().next_batch().unwrap();
        assert_eq!(batch.x_out.rows(), 0);
    }

    #[test]
    fn batch_sequence_is_deterministic() {
        let b = make_gaussian_bundle(&small()).unwrap();
        let cfg = TrainConfig { batch_in: 16, ..TrainConfig::default() };
        let group: Vec<usize> = (0..300).collect();
        let run = || {
            let mut it = EpochBatches::new(&b, &group, &cfg, &mut Rng::new(5)).unwrap();
            (0..5).map(|_| it.next_batch().unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let b = make_gaussian_bundle(&small()).unwrap();
        let text = b.to_text().unwrap();
        let back = DatasetBundle::from_text(&text).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_text().unwrap(), text);
    }

    #[test]
    fn malformed_text_is_rejected() {
        let b = make_gaussian_bundle(&small()).unwrap();
        let text = b.to_text().unwrap();
        assert!(DatasetBundle::from_text(&text.replace("%% test_out", "%% other")).is_err());
        let truncated = &text[..text.len() - 40];
        assert!(DatasetBundle::from_text(truncated).is_err());
    }
}
