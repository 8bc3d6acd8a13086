//! Labeled vector datasets, a synthetic Gaussian-cluster generator, and the
//! manifest file format.
//!
//! A manifest lists the class files, which hold one `MAT` matrix each and
//! resolve relative to the manifest's directory:
//!
//! ```text
//! SAMPDATA 1
//! provenance synthetic
//! dim 32
//! shift none
//! class c00 train.c00.mat
//! class c01 train.c01.mat
//! ```
//!
//! A `shift` line holding `dim` numbers instead of `none` marks a dataset
//! whose query samples are displaced by that vector at evaluation time.

use std::fmt;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numcore::matrix::sq_dist;
use crate::numcore::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Synthetic => "synthetic",
            Provenance::Ingested => "ingested",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Provenance::Synthetic),
            "ingested" => Ok(Provenance::Ingested),
            other => Err(Error::Parse(format!("unknown provenance {other:?}"))),
        }
    }
}

/// Per-class sample matrices (`samples × input_dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    classes: Vec<Matrix>,
    names: Vec<String>,
    provenance: Provenance,
    query_shift: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(classes: Vec<Matrix>, names: Vec<String>, provenance: Provenance) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InsufficientData("dataset needs at least one class".into()));
        }
        if names.len() != classes.len() {
            return Err(shape_err!("{} names for {} classes", names.len(), classes.len()));
        }
        let dim = classes[0].cols();
        for (name, c) in names.iter().zip(&classes) {
            if c.rows() == 0 {
                return Err(Error::InsufficientData(format!("class {name} has no samples")));
            }
            if c.cols() != dim {
                return Err(shape_err!("class {name} has {} features, expected {dim}", c.cols()));
            }
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("class name {name:?} must be one non-empty word")));
            }
        }
        Ok(Self { classes, names, provenance, query_shift: None })
    }

    pub fn with_query_shift(mut self, shift: Option<Vec<f64>>) -> Result<Self> {
        if let Some(s) = &shift {
            if s.len() != self.input_dim() {
                return Err(shape_err!("shift has {} entries for {} features", s.len(), self.input_dim()));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("query shift".into()));
            }
        }
        self.query_shift = shift;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn input_dim(&self) -> usize {
        self.classes[0].cols()
    }

    pub fn class(&self, k: usize) -> &Matrix {
        &self.classes[k]
    }

    pub fn classes(&self) -> &[Matrix] {
        &self.classes
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn query_shift(&self) -> Option<&[f64]> {
        self.query_shift.as_deref()
    }

    pub fn sample_count(&self) -> usize {
        self.classes.iter().map(Matrix::rows).sum()
    }

    /// All samples stacked class by class, without labels.
    pub fn all_samples(&self) -> Matrix {
        let refs: Vec<&Matrix> = self.classes.iter().collect();
        Matrix::vstack(&refs).expect("classes share a width")
    }

    /// Datasets holding the classes `range` (by position); the shift is kept.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.num_classes() {
            return Err(Error::InvalidArgument(format!("class range {range:?} out of 0..{}", self.num_classes())));
        }
        let out = Self::new(self.classes[range.clone()].to_vec(), self.names[range].to_vec(), self.provenance)?;
        out.with_query_shift(self.query_shift.clone())
    }

    /// Write the manifest to `path` and class files beside it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("bad manifest path {}", path.display())))?;
        let mut manifest = String::from("SAMPDATA 1\n");
        manifest += &format!("provenance {}\ndim {}\n", self.provenance, self.input_dim());
        match &self.query_shift {
            None => manifest += "shift none\n",
            Some(s) => {
                let vals: Vec<String> = s.iter().map(|v| format!("{v:?}")).collect();
                manifest += &format!("shift {}\n", vals.join(" "));
            }
        }
        for (name, m) in self.names.iter().zip(&self.classes) {
            let file = format!("{stem}.{name}.mat");
            std::fs::write(dir.join(&file), m.to_bytes())?;
            manifest += &format!("class {name} {file}\n");
        }
        std::fs::write(path, manifest)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse_manifest(&text, &dir)
    }

    fn parse_manifest(text: &str, dir: &Path) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some("SAMPDATA 1") {
            return Err(Error::Parse("not a version 1 dataset manifest".into()));
        }
        let mut provenance = Provenance::Ingested;
        let mut dim = None;
        let mut shift = None;
        let mut classes = Vec::new();
        let mut names = Vec::new();
        for line in lines {
            let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match key {
                "provenance" => provenance = rest.parse()?,
                "dim" => dim = Some(rest.parse::<usize>().map_err(|_| Error::Parse(format!("bad dim {rest:?}")))?),
                "shift" if rest == "none" => shift = None,
                "shift" => {
                    let vals: std::result::Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
                    shift = Some(vals.map_err(|_| Error::Parse(format!("bad shift line {rest:?}")))?);
                }
                "class" => {
                    let (name, file) = rest
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| Error::Parse(format!("class line needs a name and a file: {line:?}")))?;
                    let file: PathBuf = dir.join(file.trim());
                    let m = Matrix::read_from(&mut BufReader::new(std::fs::File::open(&file)?))?;
                    names.push(name.to_string());
                    classes.push(m);
                }
                other => return Err(Error::Parse(format!("unknown manifest key {other:?}"))),
            }
        }
        let out = Self::new(classes, names, provenance)?;
        if let Some(d) = dim {
            if d != out.input_dim() {
                return Err(shape_err!("manifest says dim {d}, class files hold {}", out.input_dim()));
            }
        }
        out.with_query_shift(shift)
    }
}

/// Settings for [`gen_synthetic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub cluster_sigma: f64,
    pub shift: Option<Vec<f64>>,
    pub seed: u64,
}

const MEAN_ATTEMPTS: usize = 10_000;

/// Isotropic Gaussian clusters with uniform means in `[−1, 1]^dim`, kept at
/// least `4σ` apart.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let &SyntheticSpec { classes, per_class, dim, cluster_sigma: sigma, .. } = spec;
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidArgument("class count, samples per class and dim must be positive".into()));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("cluster sigma must be positive, got {sigma}")));
    }
    let mut rng = Rng::new(spec.seed);
    let min_sq = (4.0 * sigma).powi(2);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for k in 0..classes {
        let mut placed = false;
        for _ in 0..MEAN_ATTEMPTS {
            let cand: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
            if means.iter().all(|m| sq_dist(m, &cand) >= min_sq) {
                means.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidArgument(format!(
                "could not place class {k} at distance {} from the others in {MEAN_ATTEMPTS} attempts",
                4.0 * sigma
            )));
        }
    }
    let mats = means
        .iter()
        .map(|mean| {
            let data = (0..per_class)
                .flat_map(|_| mean.iter().map(|&m| m + sigma * rng.normal()).collect::<Vec<_>>())
                .collect();
            Matrix::new(per_class, dim, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let names = (0..classes).map(|k| format!("c{k:02}")).collect();
    Dataset::new(mats, names, Provenance::Synthetic)?.with_query_shift(spec.shift.clone())
}

/// Every sample of class `k` is the `k`-th unit vector of width `classes`.
pub fn one_hot_dataset(classes: usize, per_class: usize) -> Result<Dataset> {
    let mats = (0..classes)
        .map(|k| {
            let mut m = Matrix::zeros(per_class, classes);
            for r in 0..per_class {
                m.set(r, k, 1.0);
            }
            m
        })
        .collect();
    let names = (0..classes).map(|k| format!("onehot{k}")).collect();
    Dataset::new(mats, names, Provenance::Synthetic)
}
