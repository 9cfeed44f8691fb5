//! Dataset representation, file ingestion, stratified splitting, and the
//! planted-hierarchy generator that gives clustering a checkable ground
//! truth.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cluster::{Clustering, Hierarchy};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Feature rows, integer labels, and (for generated data) the planted
/// ground-truth hierarchy.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_labels: usize,
    pub planted: Option<Hierarchy>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_labels: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Empty("dataset has no examples".into()));
        }
        if labels.len() != features.rows() {
            return Err(Error::Dim(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_labels) {
            return Err(Error::Label(format!(
                "label {bad} out of range for {num_labels} labels"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            num_labels,
            planted: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Subset by example indices, keeping the label space.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Empty("subset selects no examples".into()));
        }
        let features = self.features.select_rows(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.num_labels)
    }

    /// Same examples with labels mapped through a clustering.
    pub fn relabeled(&self, clustering: &Clustering) -> Result<Dataset> {
        if clustering.num_labels() != self.num_labels {
            return Err(Error::Config(format!(
                "clustering covers {} labels, dataset has {}",
                clustering.num_labels(),
                self.num_labels
            )));
        }
        Dataset::new(
            self.features.clone(),
            clustering.relabel(&self.labels)?,
            clustering.num_clusters(),
        )
    }

    /// Keeps examples of the given labels (ascending original ids) and
    /// remaps them to `0..keep.len()`.
    pub fn restrict_labels(&self, keep: &[usize]) -> Result<Dataset> {
        if keep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("kept labels must be sorted and distinct".into()));
        }
        if keep.iter().any(|&l| l >= self.num_labels) {
            return Err(Error::Label("kept label out of range".into()));
        }
        let mut remap = vec![usize::MAX; self.num_labels];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let indices: Vec<usize> = (0..self.len())
            .filter(|&i| remap[self.labels[i]] != usize::MAX)
            .collect();
        if indices.is_empty() {
            return Err(Error::Empty("no examples carry the kept labels".into()));
        }
        let features = self.features.select_rows(&indices);
        let labels = indices.iter().map(|&i| remap[self.labels[i]]).collect();
        Dataset::new(features, labels, keep.len())
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_binary())?;
        Ok(())
    }

    /// Binary layout: magic `CNCD`, u32 N, u32 D, u32 C, N*D little-endian
    /// f64 features, N u32 labels. The planted hierarchy is not part of the
    /// format; `gen` writes it as a separate text file.
    pub fn to_binary(&self) -> Vec<u8> {
        let (n, d) = (self.len(), self.dim());
        let mut out = Vec::with_capacity(16 + n * d * 8 + n * 4);
        out.extend_from_slice(b"CNCD");
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_labels as u32).to_le_bytes());
        for v in self.features.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out
    }

    pub fn load_binary(path: &Path) -> Result<Dataset> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Dataset::from_binary(&bytes)
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Dataset> {
        let take_u32 = |offset: usize| -> Result<u32> {
            bytes
                .get(offset..offset + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::parse(format!("byte {offset}"), "truncated file"))
        };
        if bytes.get(..4) != Some(b"CNCD".as_slice()) {
            return Err(Error::parse("byte 0", "bad magic, expected CNCD"));
        }
        let n = take_u32(4)? as usize;
        let d = take_u32(8)? as usize;
        let c = take_u32(12)? as usize;
        let feat_bytes = n * d * 8;
        let expected = 16 + feat_bytes + n * 4;
        if bytes.len() != expected {
            return Err(Error::parse(
                format!("byte {}", bytes.len().min(expected)),
                format!("expected {expected} bytes, file has {}", bytes.len()),
            ));
        }
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n * d {
            let off = 16 + i * 8;
            let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::parse(format!("byte {off}"), "non-finite feature"));
            }
            data.push(v);
        }
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let off = 16 + feat_bytes + i * 4;
            let l = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
            if l >= c {
                return Err(Error::parse(
                    format!("byte {off}"),
                    format!("label {l} out of range for {c} labels"),
                ));
            }
            labels.push(l);
        }
        Dataset::new(Matrix::from_vec(n, d, data)?, labels, c)
    }

    /// CSV: one row per example, D feature columns then the integer label.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            for v in self.features.row(i) {
                let _ = write!(out, "{v:.16e},");
            }
            let _ = writeln!(out, "{}", self.labels[i]);
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(path)?;
        Dataset::from_csv_str(&text, None)
    }

    /// Parses CSV rows; when `num_labels` is given, labels are validated
    /// against it, otherwise the label space is inferred as max+1.
    pub fn from_csv_str(text: &str, num_labels: Option<usize>) -> Result<Dataset> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels: Vec<usize> = Vec::new();
        let mut dim = None;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() < 2 {
                return Err(Error::parse(
                    format!("line {lineno}"),
                    "need at least one feature and a label",
                ));
            }
            let d = cells.len() - 1;
            if *dim.get_or_insert(d) != d {
                return Err(Error::parse(
                    format!("line {lineno}"),
                    format!("row has {d} features, expected {}", dim.unwrap()),
                ));
            }
            let mut row = Vec::with_capacity(d);
            for cell in &cells[..d] {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::parse(format!("line {lineno}"), format!("bad feature `{cell}`"))
                })?;
                row.push(v);
            }
            let label: usize = cells[d].trim().parse().map_err(|_| {
                Error::parse(format!("line {lineno}"), format!("bad label `{}`", cells[d]))
            })?;
            if let Some(c) = num_labels {
                if label >= c {
                    return Err(Error::parse(
                        format!("line {lineno}"),
                        format!("label {label} out of range for {c} labels"),
                    ));
                }
            }
            rows.push(row);
            labels.push(label);
        }
        if rows.is_empty() {
            return Err(Error::Empty("CSV has no data rows".into()));
        }
        let c = num_labels.unwrap_or_else(|| labels.iter().max().map_or(0, |&m| m + 1));
        Dataset::new(Matrix::from_rows(&rows)?, labels, c)
    }

    /// Loads a dataset by sniffing the `CNCD` magic, falling back to CSV.
    pub fn load(path: &Path) -> Result<Dataset> {
        let mut head = [0u8; 4];
        let n = fs::File::open(path)?.read(&mut head)?;
        if n == 4 && &head == b"CNCD" {
            Dataset::load_binary(path)
        } else {
            Dataset::load_csv(path)
        }
    }
}

/// Shape of a generated dataset: `tiers` are branching factors from the
/// top of the hierarchy down (`[4, 4]` = 4 superclasses of 4 subclasses),
/// and the product of tiers is the class count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub tiers: Vec<usize>,
    pub dim: usize,
    pub per_class: usize,
    pub inter_spread: f64,
    pub intra_spread: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            tiers: vec![4, 4],
            dim: 16,
            per_class: 50,
            inter_spread: 6.0,
            intra_spread: 1.0,
            noise_sigma: 2.0,
            seed: 0,
        }
    }
}

impl PlantedSpec {
    pub fn num_classes(&self) -> usize {
        self.tiers.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tiers.is_empty() || self.tiers.iter().any(|&t| t == 0) {
            return Err(Error::Config("tiers must be nonempty positive counts".into()));
        }
        if self.num_classes() < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.dim == 0 || self.per_class == 0 {
            return Err(Error::Config("dim and per_class must be positive".into()));
        }
        if !(self.inter_spread > 0.0 && self.intra_spread > 0.0 && self.noise_sigma > 0.0) {
            return Err(Error::Config("spreads and noise must be positive".into()));
        }
        if self.inter_spread <= self.intra_spread {
            return Err(Error::Config(format!(
                "inter_spread ({}) must exceed intra_spread ({})",
                self.inter_spread, self.intra_spread
            )));
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        })
        .collect()
}

/// Gaussian blobs with tiered centers.
///
/// Tier-0 centers scatter at scale `inter_spread`; each deeper tier of
/// centers scatters around its parent at a scale shrunk by
/// `intra_spread / inter_spread` per tier, so a two-tier spec uses exactly
/// `inter_spread` then `intra_spread`. Leaf blobs carry `noise_sigma`
/// i.i.d. noise. The planted hierarchy (bottom tier upward) is recorded on
/// the returned dataset.
pub fn gen_planted(spec: &PlantedSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let ratio = spec.intra_spread / spec.inter_spread;

    // Centers tier by tier; tier t has prod(tiers[..=t]) nodes.
    let mut centers: Vec<Vec<f64>> = vec![vec![0.0; dim]];
    for (t, &branch) in spec.tiers.iter().enumerate() {
        let scale = spec.inter_spread * ratio.powi(t as i32);
        let mut next = Vec::with_capacity(centers.len() * branch);
        for parent in &centers {
            for _ in 0..branch {
                let offset = normal_vec(&mut rng, dim, scale);
                next.push(parent.iter().zip(&offset).map(|(p, o)| p + o).collect());
            }
        }
        centers = next;
    }

    let num_classes = spec.num_classes();
    debug_assert_eq!(centers.len(), num_classes);
    let n = num_classes * spec.per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            let noise = normal_vec(&mut rng, dim, spec.noise_sigma);
            data.extend(center.iter().zip(&noise).map(|(c, z)| c + z));
            labels.push(class);
        }
    }

    // Ground truth, bottom tier upward: level 0 groups leaf classes by
    // their immediate parent, level 1 groups those parents, and so on.
    let mut levels = Vec::new();
    let mut width = num_classes;
    for &branch in spec.tiers.iter().rev() {
        if levels.len() + 1 == spec.tiers.len() {
            break; // the top tier has no parent level
        }
        let assign: Vec<usize> = (0..width).map(|id| id / branch).collect();
        levels.push(Clustering::from_assignment(&assign)?);
        width /= branch;
    }

    let mut dataset = Dataset::new(Matrix::from_vec(n, dim, data)?, labels, num_classes)?;
    dataset.planted = Some(Hierarchy::from_levels(levels)?);
    Ok(dataset)
}

/// Result of a stratified split; warnings report classes too small to
/// contribute validation examples.
#[derive(Debug)]
pub struct SplitOutcome {
    pub train: Dataset,
    pub validation: Dataset,
    pub warnings: Vec<String>,
}

/// Seeded stratified split. Per class, `round(count * fraction)` examples
/// go to validation (capped so at least one stays in train); classes with
/// a single example stay in train with a warning.
pub fn split(dataset: &Dataset, validation_fraction: f64, seed: u64) -> Result<SplitOutcome> {
    if !(validation_fraction > 0.0 && validation_fraction <= 0.5) {
        return Err(Error::Config(format!(
            "validation_fraction must lie in (0, 0.5], got {validation_fraction}"
        )));
    }
    let mut warnings = Vec::new();
    let mut val_indices: Vec<usize> = Vec::new();
    let mut train_indices: Vec<usize> = Vec::new();

    for class in 0..dataset.num_labels {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() == 1 {
            warnings.push(format!(
                "class {class} has a single example; kept in train"
            ));
            train_indices.push(members[0]);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        // Fisher-Yates with a fixed order for reproducibility.
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        let want = (members.len() as f64 * validation_fraction).round() as usize;
        let take = want.min(members.len() - 1);
        val_indices.extend_from_slice(&members[..take]);
        train_indices.extend_from_slice(&members[take..]);
    }

    if val_indices.is_empty() {
        warnings.push("validation split is empty".into());
    }
    train_indices.sort_unstable();
    val_indices.sort_unstable();

    let train = dataset.subset(&train_indices)?;
    let validation = if val_indices.is_empty() {
        // Degenerate but legal; keep shape by borrowing one train example.
        dataset.subset(&train_indices[..1])?
    } else {
        dataset.subset(&val_indices)?
    };
    Ok(SplitOutcome {
        train,
        validation,
        warnings,
    })
}
