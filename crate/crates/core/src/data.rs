//! Datasets, IDX ingestion, synthetic blobs, Maverick-aware partitioning and
//! label-distribution utilities.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IdxError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Dense feature matrix (row-major, `len × dim`) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if dim == 0 {
            return Err(Error::param("dim", "must be positive"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.features[index * self.dim..(index + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of every sample, grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Copies the given samples, in the given order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, labels, self.dim, self.num_classes)
    }

    pub fn view(&self) -> DataView<'_> {
        DataView {
            dataset: self,
            indices: None,
        }
    }

    pub fn view_of<'a>(&'a self, indices: &'a [usize]) -> DataView<'a> {
        DataView {
            dataset: self,
            indices: Some(indices),
        }
    }
}

/// Borrowed window onto a dataset: either all of it or a list of sample indices.
#[derive(Debug, Clone, Copy)]
pub struct DataView<'a> {
    dataset: &'a LabeledDataset,
    indices: Option<&'a [usize]>,
}

impl<'a> DataView<'a> {
    pub fn len(&self) -> usize {
        self.indices.map_or(self.dataset.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.num_classes
    }

    /// The `k`-th sample of the view as `(features, label)`.
    pub fn sample(&self, k: usize) -> (&'a [f64], usize) {
        let i = self.indices.map_or(k, |idx| idx[k]);
        (self.dataset.row(i), self.dataset.labels[i])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for k in 0..self.len() {
            counts[self.sample(k).1] += 1;
        }
        counts
    }
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

fn read_u32(bytes: &[u8], at: usize, path: &str) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| IdxError::Truncated {
            path: path.to_owned(),
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Decodes an IDX file with the given magic, returning its dimension sizes and payload.
fn parse_idx_file<'a>(bytes: &'a [u8], magic: u32, path: &str) -> Result<(Vec<usize>, &'a [u8]), IdxError> {
    let found = read_u32(bytes, 0, path)?;
    if found != magic {
        return Err(IdxError::BadMagic {
            path: path.to_owned(),
            expected: magic,
            found,
        });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|k| read_u32(bytes, 4 + 4 * k, path).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let header = 4 + 4 * ndims;
    let payload_len: usize = dims.iter().product();
    if bytes.len() < header + payload_len {
        return Err(IdxError::Truncated {
            path: path.to_owned(),
            expected: header + payload_len,
            found: bytes.len(),
        });
    }
    Ok((dims, &bytes[header..header + payload_len]))
}

/// Parses an IDX image/label pair from memory. Pixels are scaled into `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8], num_classes: usize) -> Result<LabeledDataset> {
    parse_idx_named(images, labels, num_classes, "<images>", "<labels>")
}

fn parse_idx_named(
    images: &[u8],
    labels: &[u8],
    num_classes: usize,
    images_name: &str,
    labels_name: &str,
) -> Result<LabeledDataset> {
    let (image_dims, pixels) = parse_idx_file(images, IDX_IMAGES_MAGIC, images_name)?;
    let (label_dims, label_bytes) = parse_idx_file(labels, IDX_LABELS_MAGIC, labels_name)?;
    if image_dims[0] != label_dims[0] {
        return Err(IdxError::CountMismatch {
            images: image_dims[0],
            labels: label_dims[0],
        }
        .into());
    }
    let dim = image_dims[1] * image_dims[2];
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels = label_bytes.iter().map(|&l| usize::from(l)).collect();
    LabeledDataset::new(features, labels, dim, num_classes)
}

/// Loads an IDX image file and its label file (MNIST layout, 10 classes).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| IdxError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read(ip)?;
    let labels = read(lp)?;
    parse_idx_named(&images, &labels, 10, &ip.display().to_string(), &lp.display().to_string())
}

/// Encodes a dataset as an IDX image/label pair. Features are quantized to bytes.
pub fn encode_idx(dataset: &LabeledDataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            actual: rows * cols,
        });
    }
    if let Some(&label) = dataset.labels().iter().find(|&&l| l > 255) {
        return Err(Error::LabelOutOfRange { label, num_classes: 256 });
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.features().len());
    for word in [IDX_IMAGES_MAGIC, n, rows as u32, cols as u32] {
        images.extend_from_slice(&word.to_be_bytes());
    }
    images.extend(
        dataset
            .features()
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut labels = Vec::with_capacity(8 + dataset.len());
    for word in [IDX_LABELS_MAGIC, n] {
        labels.extend_from_slice(&word.to_be_bytes());
    }
    labels.extend(dataset.labels().iter().map(|&l| l as u8));
    Ok((images, labels))
}

// ---------------------------------------------------------------------------
// Synthetic data and splits
// ---------------------------------------------------------------------------

/// Gaussian blobs: class centers on the radius-3 sphere, isotropic noise of scale `spread`.
pub fn synth_blobs(num_classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::param("synth_blobs", "class count, per-class count and dim must be positive"));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::param("spread", format!("must be positive, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut c: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        c.iter_mut().for_each(|x| *x *= 3.0 / norm);
        centers.push(c);
    }
    let mut features = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            features.extend(center.iter().map(|&m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + spread * z
            }));
            labels.push(class);
        }
    }
    LabeledDataset::new(features, labels, dim, num_classes)
}

/// Class-stratified seeded split. Returns `(kept, carved)` where `carved` takes roughly
/// `fraction` of every class, at least one sample per class that has two or more.
pub fn stratified_split(dataset: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param("fraction", format!("must lie in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::new();
    let mut carved = Vec::new();
    for mut group in dataset.indices_by_class() {
        if group.is_empty() {
            continue;
        }
        group.shuffle(&mut rng);
        let take = if group.len() >= 2 {
            ((group.len() as f64 * fraction).round() as usize).clamp(1, group.len() - 1)
        } else {
            0
        };
        carved.extend_from_slice(&group[..take]);
        kept.extend_from_slice(&group[take..]);
    }
    kept.sort_unstable();
    carved.sort_unstable();
    Ok((dataset.subset(&kept)?, dataset.subset(&carved)?))
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

/// Rare class → the Maverick clients that exclusively share it.
pub type MaverickSpec = BTreeMap<usize, BTreeSet<usize>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPartition {
    /// Sorted sample indices per client.
    pub assignments: Vec<Vec<usize>>,
    /// Classes each client exclusively owns; empty for non-Mavericks.
    pub maverick_classes: Vec<BTreeSet<usize>>,
}

impl ClientPartition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn is_maverick(&self, client: usize) -> bool {
        !self.maverick_classes[client].is_empty()
    }

    pub fn maverick_ids(&self) -> Vec<usize> {
        (0..self.num_clients()).filter(|&i| self.is_maverick(i)).collect()
    }

    /// Drops every Maverick client together with its samples. Returns the reduced
    /// partition and, for each remaining client, its id in the original partition.
    pub fn without_mavericks(&self) -> (ClientPartition, Vec<usize>) {
        let keep: Vec<usize> = (0..self.num_clients()).filter(|&i| !self.is_maverick(i)).collect();
        let part = ClientPartition {
            assignments: keep.iter().map(|&i| self.assignments[i].clone()).collect(),
            maverick_classes: vec![BTreeSet::new(); keep.len()],
        };
        (part, keep)
    }
}

/// Splits a dataset among `num_clients`. Rare classes listed in `spec` go round-robin to
/// their declared Mavericks only; every other class goes round-robin to all clients.
pub fn maverick_partition(
    dataset: &LabeledDataset,
    num_clients: usize,
    spec: &MaverickSpec,
    seed: u64,
) -> Result<ClientPartition> {
    if num_clients == 0 {
        return Err(Error::param("num_clients", "must be positive"));
    }
    let groups = dataset.indices_by_class();
    let mut maverick_classes = vec![BTreeSet::new(); num_clients];
    for (&class, owners) in spec {
        if owners.is_empty() {
            return Err(Error::param("maverick spec", format!("class {class} has no owners")));
        }
        if groups.get(class).is_none_or(Vec::is_empty) {
            return Err(Error::EmptyRareClass(class));
        }
        for &id in owners {
            if id >= num_clients {
                return Err(Error::ClientOutOfRange { id, num_clients });
            }
            maverick_classes[id].insert(class);
        }
    }

    let everyone: Vec<usize> = (0..num_clients).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![Vec::new(); num_clients];
    // Shared classes continue the rotation where the previous class stopped so that
    // per-client totals stay balanced as well.
    let mut cursor = 0usize;
    for (class, mut group) in groups.into_iter().enumerate() {
        group.shuffle(&mut rng);
        match spec.get(&class) {
            Some(owners) => {
                let owners: Vec<usize> = owners.iter().copied().collect();
                for (k, idx) in group.into_iter().enumerate() {
                    assignments[owners[k % owners.len()]].push(idx);
                }
            }
            None => {
                for idx in group {
                    assignments[everyone[cursor % num_clients]].push(idx);
                    cursor += 1;
                }
            }
        }
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(ClientPartition {
        assignments,
        maverick_classes,
    })
}

/// Fraction of each class among one client's samples.
pub fn label_distribution(partition: &ClientPartition, dataset: &LabeledDataset, client: usize) -> Result<Vec<f64>> {
    let indices = partition.assignments.get(client).ok_or(Error::ClientOutOfRange {
        id: client,
        num_clients: partition.num_clients(),
    })?;
    if indices.is_empty() {
        return Err(Error::EmptyClient(client));
    }
    Ok(normalized_counts(&dataset.view_of(indices).class_counts()))
}

pub fn normalized_counts(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Ground metric between class labels used by [`emd`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmdMetric {
    /// Every pair of distinct classes is at distance 1.
    #[default]
    Categorical,
    /// Classes are ordered bins one unit apart.
    Ordered,
}

fn check_distributions(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    for v in [p, q] {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-6 || v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::NotNormalized(s));
        }
    }
    Ok(())
}

/// Earth mover's distance under the categorical metric, i.e. total variation.
pub fn emd_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    emd(p, q, EmdMetric::Categorical)
}

pub fn emd(p: &[f64], q: &[f64], metric: EmdMetric) -> Result<f64> {
    check_distributions(p, q)?;
    Ok(match metric {
        EmdMetric::Categorical => 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>(),
        EmdMetric::Ordered => {
            let mut cdf_gap = 0.0;
            let mut total = 0.0;
            for (a, b) in p.iter().zip(q) {
                cdf_gap += a - b;
                total += f64::abs(cdf_gap);
            }
            total
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(words: &[u32]) -> Vec<u8> {
        words.iter().flat_map(|w| w.to_be_bytes()).collect()
    }

    #[test]
    fn parses_handcrafted_idx() {
        let mut images = header(&[0x803, 2, 2, 2]);
        images.extend_from_slice(&[0, 255, 0, 255, 0, 255, 0, 255]);
        let mut labels = header(&[0x801, 2]);
        labels.extend_from_slice(&[1, 0]);
        let ds = parse_idx(&images, &labels, 10).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(ds.row(1), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(ds.labels(), &[1, 0]);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let mut images = header(&[0x803, 2, 2, 2]);
        images.extend_from_slice(&[0; 8]);
        let mut labels = header(&[0x801, 2]);
        labels.extend_from_slice(&[0, 1]);

        // image file passed where labels are expected
        let err = parse_idx(&images, &images, 10).unwrap_err();
        assert!(matches!(err, Error::Idx(IdxError::BadMagic { found: 0x803, expected: 0x801, .. })));

        let err = parse_idx(&images[..images.len() - 1], &labels, 10).unwrap_err();
        assert!(matches!(err, Error::Idx(IdxError::Truncated { .. })));

        let err = parse_idx(&images[..6], &labels, 10).unwrap_err();
        assert!(matches!(err, Error::Idx(IdxError::Truncated { .. })));

        let mut three = header(&[0x801, 3]);
        three.extend_from_slice(&[0, 1, 2]);
        let err = parse_idx(&images, &three, 10).unwrap_err();
        assert!(matches!(err, Error::Idx(IdxError::CountMismatch { images: 2, labels: 3 })));
    }

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let a = synth_blobs(3, 10, 2, 0.1, 1).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(a.class_counts(), vec![10, 10, 10]);
        assert_eq!(a, synth_blobs(3, 10, 2, 0.1, 1).unwrap());
        assert_ne!(a, synth_blobs(3, 10, 2, 0.1, 2).unwrap());
        assert!(synth_blobs(3, 10, 2, 0.0, 1).is_err());
    }

    #[test]
    fn stratified_split_keeps_every_class() {
        let ds = synth_blobs(4, 25, 3, 0.5, 3).unwrap();
        let (kept, carved) = stratified_split(&ds, 0.1, 9).unwrap();
        assert_eq!(kept.len() + carved.len(), ds.len());
        assert!(carved.class_counts().iter().all(|&c| c >= 1));
        assert_eq!(carved.class_counts(), vec![3, 3, 3, 3]);
    }

    #[test]
    fn single_maverick_owns_its_class() {
        let ds = synth_blobs(10, 53, 2, 0.5, 4).unwrap();
        let spec = MaverickSpec::from([(9, BTreeSet::from([0]))]);
        let part = maverick_partition(&ds, 5, &spec, 11).unwrap();
        for client in 0..5 {
            let counts = ds.view_of(&part.assignments[client]).class_counts();
            assert_eq!(counts[9], if client == 0 { 53 } else { 0 });
            for c in 0..9 {
                assert!(counts[c] == 10 || counts[c] == 11, "class {c} client {client}: {}", counts[c]);
            }
        }
        assert_eq!(part.maverick_ids(), vec![0]);
    }

    #[test]
    fn shared_mavericks_split_their_class() {
        let ds = synth_blobs(10, 41, 2, 0.5, 4).unwrap();
        let spec = MaverickSpec::from([(9, BTreeSet::from([0, 1]))]);
        let part = maverick_partition(&ds, 5, &spec, 11).unwrap();
        let c9: Vec<usize> = (0..5).map(|i| ds.view_of(&part.assignments[i]).class_counts()[9]).collect();
        assert_eq!(c9, vec![21, 20, 0, 0, 0]);
    }

    #[test]
    fn partition_rejects_bad_specs() {
        let ds = synth_blobs(3, 5, 2, 0.5, 4).unwrap();
        let spec = MaverickSpec::from([(2, BTreeSet::from([7]))]);
        assert!(matches!(
            maverick_partition(&ds, 4, &spec, 0),
            Err(Error::ClientOutOfRange { id: 7, num_clients: 4 })
        ));
        let spec = MaverickSpec::from([(5, BTreeSet::from([0]))]);
        assert!(matches!(maverick_partition(&ds, 4, &spec, 0), Err(Error::EmptyRareClass(5))));
    }

    #[test]
    fn label_distributions() {
        let ds = LabeledDataset::new(vec![0.0; 4], vec![0, 0, 0, 1], 1, 2).unwrap();
        let part = ClientPartition {
            assignments: vec![vec![0, 1, 2, 3], vec![3], vec![]],
            maverick_classes: vec![BTreeSet::new(); 3],
        };
        assert_eq!(label_distribution(&part, &ds, 0).unwrap(), vec![0.75, 0.25]);
        assert_eq!(label_distribution(&part, &ds, 1).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(label_distribution(&part, &ds, 2), Err(Error::EmptyClient(2))));
    }

    #[test]
    fn emd_examples() {
        assert_eq!(emd_discrete(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(emd_discrete(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(emd_discrete(&[0.75, 0.25], &[0.5, 0.5]).unwrap(), 0.25);
        assert_eq!(emd(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], EmdMetric::Ordered).unwrap(), 2.0);
        assert!(matches!(emd_discrete(&[1.0], &[0.5, 0.5]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(emd_discrete(&[0.5, 0.6], &[0.5, 0.5]), Err(Error::NotNormalized(_))));
    }
}
