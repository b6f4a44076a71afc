//! CSV dataset manifests and the deterministic operations over them.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

/// Class index mapping: 0 = no-fire, 1 = fire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NoFire = 0,
    Fire = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::NoFire),
            1 => Some(Label::Fire),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NoFire => "no_fire",
            Label::Fire => "fire",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = DataError;

    fn from_str(s: &str) -> std::result::Result<Self, DataError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fire" | "1" => Ok(Label::Fire),
            "no_fire" | "no-fire" | "nofire" | "0" => Ok(Label::NoFire),
            other => Err(DataError::InvalidLabel(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Origin {
    #[default]
    Real,
    SyntheticBlack,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::SyntheticBlack => "synthetic-black",
        }
    }
}

impl FromStr for Origin {
    type Err = DataError;

    fn from_str(s: &str) -> std::result::Result<Self, DataError> {
        match s.trim() {
            "" | "real" => Ok(Origin::Real),
            "synthetic-black" | "black" => Ok(Origin::SyntheticBlack),
            other => Err(DataError::InvalidLabel(format!("origin {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> std::result::Result<Self, DataError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(DataError::EmptySplit(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub path: PathBuf,
    pub label: Label,
    pub origin: Origin,
    pub split: Option<Split>,
}

impl Entry {
    pub fn real(path: impl Into<PathBuf>, label: Label) -> Self {
        Self {
            path: path.into(),
            label,
            origin: Origin::Real,
            split: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub fire: usize,
    pub no_fire: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.fire + self.no_fire
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    /// Append this many black no-fire images.
    Add(usize),
    /// Turn this many seed-chosen real no-fire images black.
    Replace(usize),
}

impl FromStr for AugmentMode {
    type Err = DataError;

    fn from_str(s: &str) -> std::result::Result<Self, DataError> {
        let bad = || DataError::InvalidLabel(format!("augmentation {s:?}, expected add:N or replace:N"));
        let (mode, n) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        match mode.trim() {
            "add" => Ok(AugmentMode::Add(n)),
            "replace" => Ok(AugmentMode::Replace(n)),
            _ => Err(bad()),
        }
    }
}

/// Fraction of added black images assigned to the training split.
pub const BLACK_TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub entries: Vec<Entry>,
    /// Seed of the last seeded operation, if any.
    pub seed: Option<u64>,
}

fn floor_frac(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).floor() as usize
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, entries: Vec<Entry>) -> Self {
        Self {
            name: name.into(),
            entries,
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Label counts over one split, or over every entry.
    pub fn counts(&self, split: Option<Split>) -> LabelCounts {
        let mut c = LabelCounts::default();
        for e in self.entries.iter().filter(|e| split.is_none() || e.split == split) {
            match e.label {
                Label::Fire => c.fire += 1,
                Label::NoFire => c.no_fire += 1,
            }
        }
        c
    }

    /// Indices of entries in `split`.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].split == Some(split))
            .collect()
    }

    /// Assigns train/val to every entry not already in the test split.
    ///
    /// The candidates are shuffled by `seed`; the first `⌊fraction·N⌋` become
    /// training entries and the rest validation entries.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(DataError::InvalidFraction(train_fraction).into());
        }
        let mut candidates: Vec<usize> = (0..self.entries.len())
            .filter(|&i| self.entries[i].split != Some(Split::Test))
            .collect();
        if candidates.is_empty() {
            return Err(DataError::EmptyManifest.into());
        }
        candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = floor_frac(train_fraction, candidates.len());
        let mut out = self.clone();
        for (rank, &i) in candidates.iter().enumerate() {
            out.entries[i].split = Some(if rank < n_train { Split::Train } else { Split::Val });
        }
        out.seed = Some(seed);
        Ok(out)
    }

    /// Keeps `per_class` seed-chosen entries of each label.
    pub fn balanced_subset(&self, per_class: usize, seed: u64) -> Result<Self> {
        if self.entries.is_empty() {
            return Err(DataError::EmptyManifest.into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = Vec::new();
        for label in [Label::NoFire, Label::Fire] {
            let mut idx: Vec<usize> = (0..self.entries.len())
                .filter(|&i| self.entries[i].label == label)
                .collect();
            if idx.len() < per_class {
                return Err(DataError::InsufficientClass {
                    label: label.to_string(),
                    needed: per_class,
                    available: idx.len(),
                }
                .into());
            }
            idx.shuffle(&mut rng);
            keep.extend_from_slice(&idx[..per_class]);
        }
        keep.sort_unstable();
        Ok(Self {
            name: format!("{}-balanced", self.name),
            entries: keep.into_iter().map(|i| self.entries[i].clone()).collect(),
            seed: Some(seed),
        })
    }

    /// Black-image augmentation.
    ///
    /// `Add(n)` appends `n` synthetic black no-fire entries, the first
    /// `⌊0.8·n⌋` in the training split and the rest in validation.
    /// `Replace(n)` marks `n` seed-chosen real no-fire entries as synthetic
    /// black, keeping their paths, labels and splits.
    pub fn augment_black(&self, mode: AugmentMode, seed: u64) -> Result<Self> {
        let mut out = self.clone();
        match mode {
            AugmentMode::Add(n) => {
                let n_train = floor_frac(BLACK_TRAIN_FRACTION, n);
                for i in 0..n {
                    out.entries.push(Entry {
                        path: PathBuf::from(format!("black/{i:05}.png")),
                        label: Label::NoFire,
                        origin: Origin::SyntheticBlack,
                        split: Some(if i < n_train { Split::Train } else { Split::Val }),
                    });
                }
            }
            AugmentMode::Replace(n) => {
                let mut idx: Vec<usize> = (0..self.entries.len())
                    .filter(|&i| self.entries[i].label == Label::NoFire && self.entries[i].origin == Origin::Real)
                    .collect();
                if idx.len() < n {
                    return Err(DataError::InsufficientNoFire {
                        needed: n,
                        available: idx.len(),
                    }
                    .into());
                }
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                for &i in &idx[..n] {
                    out.entries[i].origin = Origin::SyntheticBlack;
                }
                out.seed = Some(seed);
            }
        }
        Ok(out)
    }

    /// Reads `path,label[,origin][,split]` CSV.
    pub fn from_reader<R: Read>(name: impl Into<String>, reader: R) -> Result<Self> {
        let name = name.into();
        let err = |message: String| DataError::Manifest {
            path: PathBuf::from(&name),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        let col = |key: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(key));
        let (Some(pc), Some(lc)) = (col("path"), col("label")) else {
            return Err(err("header must contain path and label columns".into()).into());
        };
        let (oc, sc) = (col("origin"), col("split"));
        let mut entries = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let field = |c: usize| rec.get(c).unwrap_or("");
            let at = |e: DataError| err(format!("row {}: {e}", line + 2));
            let label: Label = field(lc).parse().map_err(at)?;
            let origin: Origin = oc
                .map(|c| field(c).parse())
                .transpose()
                .map_err(at)?
                .unwrap_or_default();
            let split = match sc.map(field).filter(|s| !s.is_empty()) {
                Some(s) => Some(s.parse::<Split>().map_err(at)?),
                None => None,
            };
            entries.push(Entry {
                path: PathBuf::from(field(pc)),
                label,
                origin,
                split,
            });
        }
        Ok(Self::new(name, entries))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| DataError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_reader(name, file).map_err(|e| match e {
            crate::Error::Data(DataError::Manifest { message, .. }) => DataError::Manifest {
                path: path.to_path_buf(),
                message,
            }
            .into(),
            other => other,
        })
    }

    /// Writes `path,label,origin,split`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| std::io::Error::other(e.to_string());
        w.write_record(["path", "label", "origin", "split"]).map_err(io)?;
        for e in &self.entries {
            w.write_record([
                e.path.to_string_lossy().as_ref(),
                e.label.as_str(),
                e.origin.as_str(),
                e.split.map_or("", |s| s.as_str()),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(fire: usize, no_fire: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for i in 0..fire {
            entries.push(Entry::real(format!("fire/{i}.jpg"), Label::Fire));
        }
        for i in 0..no_fire {
            entries.push(Entry::real(format!("nofire/{i}.jpg"), Label::NoFire));
        }
        DatasetManifest::new("synthetic", entries)
    }

    #[test]
    fn split_floor_and_determinism() {
        let m = synthetic(1124, 1301).split(0.7, 0).unwrap();
        assert_eq!(m.counts(Some(Split::Train)).total(), 1697);
        assert_eq!(m.counts(Some(Split::Val)).total(), 728);
        let a = synthetic(5, 5).split(0.8, 9).unwrap();
        let b = synthetic(5, 5).split(0.8, 9).unwrap();
        assert_eq!(a, b);
        let tiny = synthetic(1, 1).split(0.999, 1).unwrap();
        assert_eq!(tiny.counts(Some(Split::Train)).total(), 1);
        assert_eq!(tiny.counts(Some(Split::Val)).total(), 1);
    }

    #[test]
    fn split_errors() {
        assert!(DatasetManifest::default().split(0.5, 0).is_err());
        assert!(synthetic(1, 1).split(1.0, 0).is_err());
        assert!(synthetic(1, 1).split(0.0, 0).is_err());
    }

    #[test]
    fn add_zero_is_identity() {
        let m = synthetic(3, 4).split(0.5, 2).unwrap();
        assert_eq!(m.augment_black(AugmentMode::Add(0), 0).unwrap(), m);
    }

    #[test]
    fn replace_needs_enough_no_fire() {
        let m = synthetic(3, 2);
        assert!(matches!(
            m.augment_black(AugmentMode::Replace(3), 0),
            Err(crate::Error::Data(DataError::InsufficientNoFire {
                needed: 3,
                available: 2
            }))
        ));
    }

    #[test]
    fn csv_round_trip_and_parse_errors() {
        let m = synthetic(2, 3)
            .split(0.6, 4)
            .unwrap()
            .augment_black(AugmentMode::Add(2), 0)
            .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = DatasetManifest::from_reader("synthetic", &buf[..]).unwrap();
        assert_eq!(back.entries, m.entries);

        let plain = "path,label\na.png,fire\nb.png,no_fire\n";
        let m = DatasetManifest::from_reader("p", plain.as_bytes()).unwrap();
        assert_eq!(m.counts(None), LabelCounts { fire: 1, no_fire: 1 });
        assert!(DatasetManifest::from_reader("p", "path,label\na.png,smoke\n".as_bytes()).is_err());
        assert!(DatasetManifest::from_reader("p", "file,class\na.png,fire\n".as_bytes()).is_err());
    }

    #[test]
    fn augment_mode_parsing() {
        assert_eq!("add:485".parse::<AugmentMode>().unwrap(), AugmentMode::Add(485));
        assert_eq!("replace:98".parse::<AugmentMode>().unwrap(), AugmentMode::Replace(98));
        assert!("drop:1".parse::<AugmentMode>().is_err());
    }
}
