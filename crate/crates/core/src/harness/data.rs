//! Synthetic generators, CSV ingestion, and stratified splitting.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collect::DataSplits;
use crate::netcore::Batch;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic {
        kind: String,
        params: Vec<(String, f64)>,
        seed: u64,
    },
    Csv {
        path: String,
        /// Hex SHA-256 of the file contents.
        hash: String,
    },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub data: Batch,
    pub feature_names: Option<Vec<String>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.data.num_classes()];
        for &y in self.data.labels() {
            counts[y] += 1;
        }
        counts
    }
}

fn check_common(n: usize, noise: f64) -> Result<()> {
    if n < 10 {
        return Err(Error::config(format!("need at least 10 samples, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::config(format!(
            "noise must be finite and >= 0, got {noise}"
        )));
    }
    Ok(())
}

/// Class `i` of `n` samples split as evenly as possible over `classes`.
fn balanced_sizes(n: usize, classes: usize) -> Vec<usize> {
    (0..classes)
        .map(|c| n / classes + usize::from(c < n % classes))
        .collect()
}

fn synthetic(
    kind: &str,
    params: &[(&str, f64)],
    seed: u64,
    rows: Vec<[f64; 2]>,
    labels: Vec<usize>,
    classes: usize,
) -> Result<Dataset> {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let inputs = Array2::from_shape_vec((rows.len(), 2), flat).expect("two columns per row");
    Ok(Dataset {
        data: Batch::new(inputs, labels, classes)?,
        feature_names: Some(vec!["x0".into(), "x1".into()]),
        provenance: Provenance::Synthetic {
            kind: kind.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seed,
        },
    })
}

fn jitter(rng: &mut ChaCha8Rng, noise: f64) -> f64 {
    if noise == 0.0 {
        0.0
    } else {
        Normal::new(0.0, noise)
            .expect("noise validated")
            .sample(rng)
    }
}

/// Two interleaved half circles with Gaussian noise.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    check_common(n, noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = balanced_sizes(n, 2);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let t = PI * i as f64 / (size - 1).max(1) as f64;
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            rows.push([x + jitter(&mut rng, noise), y + jitter(&mut rng, noise)]);
            labels.push(class);
        }
    }
    synthetic(
        "two_moons",
        &[("n", n as f64), ("noise", noise)],
        seed,
        rows,
        labels,
        2,
    )
}

/// Isotropic Gaussian blobs with centres evenly spaced on a circle of radius 3.
pub fn gen_blobs(n: usize, classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    check_common(n, spread)?;
    if classes < 2 || classes > n {
        return Err(Error::config(format!("need 2..=n classes, got {classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, size) in balanced_sizes(n, classes).into_iter().enumerate() {
        let angle = 2.0 * PI * class as f64 / classes as f64;
        let (cx, cy) = (3.0 * angle.cos(), 3.0 * angle.sin());
        for _ in 0..size {
            rows.push([cx + jitter(&mut rng, spread), cy + jitter(&mut rng, spread)]);
            labels.push(class);
        }
    }
    synthetic(
        "blobs",
        &[
            ("n", n as f64),
            ("classes", classes as f64),
            ("spread", spread),
        ],
        seed,
        rows,
        labels,
        classes,
    )
}

/// Interleaved Archimedean spiral arms, one per class, each a single turn.
pub fn gen_spirals(n: usize, classes: usize, noise: f64, seed: u64) -> Result<Dataset> {
    check_common(n, noise)?;
    if classes < 2 || classes > n {
        return Err(Error::config(format!("need 2..=n classes, got {classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, size) in balanced_sizes(n, classes).into_iter().enumerate() {
        let offset = 2.0 * PI * class as f64 / classes as f64;
        for i in 0..size {
            let r = i as f64 / size as f64;
            let t = offset + 2.0 * PI * r;
            rows.push([
                r * t.cos() + jitter(&mut rng, noise),
                r * t.sin() + jitter(&mut rng, noise),
            ]);
            labels.push(class);
        }
    }
    synthetic(
        "spirals",
        &[
            ("n", n as f64),
            ("classes", classes as f64),
            ("noise", noise),
        ],
        seed,
        rows,
        labels,
        classes,
    )
}

fn parse_error(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Reads a headered CSV. Every column except `label_column` must be numeric.
/// Labels become class indices in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let hash = format!("{:x}", Sha256::digest(&bytes));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| parse_error(1, "", e.to_string()))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| parse_error(1, label_column, "label column not found in header"))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if feature_names.is_empty() {
        return Err(parse_error(1, "", "no feature columns"));
    }

    let mut classes: HashMap<String, usize> = HashMap::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Row numbers count the header as row 1.
        let row = i + 2;
        let record = record.map_err(|e| parse_error(row, "", e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_error(
                row,
                "",
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                parse_error(row, &headers[j], format!("non-numeric value {cell:?}"))
            })?;
            if !v.is_finite() {
                return Err(parse_error(
                    row,
                    &headers[j],
                    format!("non-finite value {cell:?}"),
                ));
            }
            values.push(v);
        }
        let label = &record[label_idx];
        if label.is_empty() {
            return Err(parse_error(row, label_column, "missing label"));
        }
        let next = classes.len();
        labels.push(*classes.entry(label.to_string()).or_insert(next));
    }
    if labels.is_empty() {
        return Err(parse_error(1, "", "no data rows"));
    }
    let inputs = Array2::from_shape_vec((labels.len(), feature_names.len()), values)
        .expect("one value per feature per row");
    let num_classes = classes.len();
    Ok(Dataset {
        data: Batch::new(inputs, labels, num_classes)?,
        feature_names: Some(feature_names),
        provenance: Provenance::Csv {
            path: path.display().to_string(),
            hash,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::config(format!(
                "split fractions must be positive: {self:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions sum to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

/// Row indices assigned to train, val and test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `total` samples over the three fractions.
fn apportion(total: usize, f: &SplitFractions) -> [usize; 3] {
    let exact = [f.train, f.val, f.test].map(|x| x * total as f64);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = total - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Stratified assignment of rows to the three splits.
pub fn split_indices(
    labels: &[usize],
    num_classes: usize,
    fractions: &SplitFractions,
    seed: u64,
) -> Result<SplitIndices> {
    fractions.validate()?;
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for (c, rows) in by_class.iter().enumerate() {
        if !rows.is_empty() && rows.len() < 3 {
            return Err(Error::Stratification(format!(
                "class {c} has {} samples, fewer than the 3 splits",
                rows.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    // Per-class quotas sum to the global quota so overall sizes stay exact.
    let global = apportion(labels.len(), fractions);
    let mut assigned = [0usize; 3];
    let present: Vec<usize> = (0..num_classes)
        .filter(|&c| !by_class[c].is_empty())
        .collect();
    for (pos, &c) in present.iter().enumerate() {
        let rows = &mut by_class[c];
        rows.shuffle(&mut rng);
        let mut sizes = apportion(rows.len(), fractions);
        for s in sizes.iter_mut() {
            *s = (*s).max(1);
        }
        if pos + 1 == present.len() {
            let remaining: [usize; 3] =
                std::array::from_fn(|i| global[i].saturating_sub(assigned[i]));
            if remaining.iter().sum::<usize>() == rows.len() && remaining.iter().all(|&r| r > 0) {
                sizes = remaining;
            }
        }
        while sizes.iter().sum::<usize>() > rows.len() {
            let i = (0..3).max_by_key(|&i| sizes[i]).unwrap();
            sizes[i] -= 1;
        }
        let (a, rest) = rows.split_at(sizes[0]);
        let (b, t) = rest.split_at(sizes[1]);
        out.train.extend_from_slice(a);
        out.val.extend_from_slice(b);
        out.test.extend_from_slice(t);
        for i in 0..3 {
            assigned[i] += sizes[i];
        }
    }
    for part in [&mut out.train, &mut out.val, &mut out.test] {
        part.sort_unstable();
        part.shuffle(&mut rng);
    }
    Ok(out)
}

/// Per-feature mean and standard deviation from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(inputs: &Array2<f64>) -> Self {
        let mean = inputs.mean_axis(Axis(0)).expect("non-empty");
        let std = inputs
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 0.0 { s } else { 1.0 });
        Self { mean, std }
    }

    pub fn apply(&self, inputs: &Array2<f64>) -> Array2<f64> {
        (inputs - &self.mean) / &self.std
    }
}

/// Stratified train/val/test split with features standardized by train statistics.
pub fn split(
    dataset: &Dataset,
    fractions: &SplitFractions,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let data = &dataset.data;
    let idx = split_indices(data.labels(), data.num_classes(), fractions, seed)?;
    let train = data.select(&idx.train)?;
    let scaler = Standardizer::fit(&train.inputs().to_owned());
    let make = |rows: &[usize]| -> Result<Dataset> {
        let part = data.select(rows)?;
        let (inputs, labels, classes) = part.into_parts();
        Ok(Dataset {
            data: Batch::new(scaler.apply(&inputs), labels, classes)?,
            feature_names: dataset.feature_names.clone(),
            provenance: dataset.provenance.clone(),
        })
    };
    Ok((make(&idx.train)?, make(&idx.val)?, make(&idx.test)?))
}

/// Shorthand for [`split`] straight into [`DataSplits`].
pub fn split_data(dataset: &Dataset, fractions: &SplitFractions, seed: u64) -> Result<DataSplits> {
    let (train, val, test) = split(dataset, fractions, seed)?;
    Ok(DataSplits {
        train: train.data,
        val: val.data,
        test: test.data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn generators_are_deterministic() {
        let a = gen_two_moons(200, 0.1, 1).unwrap();
        let b = gen_two_moons(200, 0.1, 1).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, gen_two_moons(200, 0.1, 2).unwrap().data);
    }

    #[test]
    fn generators_are_balanced() {
        assert_eq!(
            gen_blobs(300, 3, 0.5, 2).unwrap().class_counts(),
            vec![100, 100, 100]
        );
        assert_eq!(
            gen_spirals(301, 3, 0.1, 2).unwrap().class_counts(),
            vec![101, 100, 100]
        );
        assert_eq!(
            gen_two_moons(11, 0.0, 0).unwrap().class_counts(),
            vec![6, 5]
        );
    }

    #[test]
    fn generator_errors() {
        assert!(matches!(gen_two_moons(9, 0.1, 0), Err(Error::Config(_))));
        assert!(matches!(gen_two_moons(100, -0.1, 0), Err(Error::Config(_))));
        assert!(matches!(gen_spirals(100, 1, 0.1, 0), Err(Error::Config(_))));
    }

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_label_mapping_and_hash() {
        let f = write_csv("x,y,label\n1,2,a\n3,4,b\n5,6,a\n");
        let d = load_csv(f.path(), "label").unwrap();
        assert_eq!(d.data.labels(), &[0, 1, 0]);
        assert_eq!(d.feature_names.as_deref().unwrap(), &["x", "y"]);
        let again = load_csv(f.path(), "label").unwrap();
        assert_eq!(d.provenance, again.provenance);
    }

    #[test]
    fn csv_errors_name_the_cell() {
        let f = write_csv("x,y,label\n1,2,a\n3,x,b\n");
        match load_csv(f.path(), "label") {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = write_csv("x,label\n1,\n");
        assert!(matches!(
            load_csv(f.path(), "label"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            load_csv(f.path(), "missing"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = gen_blobs(100, 2, 0.5, 0).unwrap();
        let f = SplitFractions::default();
        let a = split_indices(d.data.labels(), 2, &f, 3).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (60, 20, 20));
        assert_eq!(a, split_indices(d.data.labels(), 2, &f, 3).unwrap());
        let mut all: Vec<usize> = a
            .train
            .iter()
            .chain(&a.val)
            .chain(&a.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn tiny_class_fails_stratification() {
        let labels = [0, 0, 0, 0, 1, 1];
        assert!(matches!(
            split_indices(&labels, 2, &SplitFractions::default(), 0),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn standardization_uses_train_statistics() {
        let d = gen_two_moons(200, 0.1, 4).unwrap();
        let (train, val, _) = split(&d, &SplitFractions::default(), 0).unwrap();
        let mean = train.data.inputs().mean_axis(Axis(0)).unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-12));
        let std = train.data.inputs().std_axis(Axis(0), 0.0);
        assert!(std.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert_eq!(val.len(), 40);
    }
}
