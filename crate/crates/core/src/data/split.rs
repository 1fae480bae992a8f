use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
    AuxV1,
    AuxV2,
    Development,
}

impl Split {
    pub const ALL: [Split; 6] = [
        Split::Train,
        Split::Validation,
        Split::Test,
        Split::AuxV1,
        Split::AuxV2,
        Split::Development,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::AuxV1 => "aux_v1",
            Split::AuxV2 => "aux_v2",
            Split::Development => "development",
        }
    }

    /// Auxiliary records carry no label on disk.
    pub fn is_labeled(self) -> bool {
        !matches!(self, Split::AuxV1 | Split::AuxV2)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

/// Patient-level split proportions. The auxiliary and development
/// fractions are taken from all patients; `ratios` then divides the
/// remaining labeled patients into train, validation and test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratios: (f64, f64, f64),
    pub aux_fraction_v1: f64,
    pub aux_fraction_v2: f64,
    pub dev_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: (0.70, 0.15, 0.15),
            aux_fraction_v1: 0.2,
            aux_fraction_v2: 0.5,
            dev_fraction: 0.1,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![a, b, c, self.aux_fraction_v1, self.aux_fraction_v2, self.dev_fraction]
            .into_iter()
            .all(unit)
        {
            return Err(Error::Config(format!("split fractions must lie in [0, 1]: {self:?}")));
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {}, not 1", a + b + c)));
        }
        if self.aux_fraction_v1 > self.aux_fraction_v2 {
            return Err(Error::Config(format!(
                "aux_fraction_v1 {} exceeds aux_fraction_v2 {}",
                self.aux_fraction_v1, self.aux_fraction_v2
            )));
        }
        if self.aux_fraction_v2 + self.dev_fraction >= 1.0 {
            return Err(Error::Config(
                "auxiliary and development fractions leave no labeled patients".into(),
            ));
        }
        Ok(())
    }
}

/// Record ids per split. `aux_v2` includes every id of `aux_v1`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub aux_v1: Vec<String>,
    pub aux_v2: Vec<String>,
    pub development: Vec<String>,
}

impl SplitManifest {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
            Split::AuxV1 => &self.aux_v1,
            Split::AuxV2 => &self.aux_v2,
            Split::Development => &self.development,
        }
    }

    fn ids_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
            Split::AuxV1 => &mut self.aux_v1,
            Split::AuxV2 => &mut self.aux_v2,
            Split::Development => &mut self.development,
        }
    }

    /// The single column value stored for a record: aux_v1 members are
    /// written as `aux_v1` even though they also belong to aux_v2.
    pub fn column_of(&self) -> BTreeMap<&str, Split> {
        let mut out = BTreeMap::new();
        for split in [
            Split::AuxV2,
            Split::AuxV1,
            Split::Train,
            Split::Validation,
            Split::Test,
            Split::Development,
        ] {
            for id in self.ids(split) {
                out.insert(id.as_str(), split);
            }
        }
        out
    }

    /// Rebuilds the manifest from per-record column values.
    pub fn from_columns<'a>(columns: impl IntoIterator<Item = (&'a str, Split)>) -> Self {
        let mut m = SplitManifest::default();
        for (id, split) in columns {
            m.ids_mut(split).push(id.to_string());
            if split == Split::AuxV1 {
                m.aux_v2.push(id.to_string());
            }
        }
        m.sort();
        m
    }

    fn sort(&mut self) {
        for split in Split::ALL {
            self.ids_mut(split).sort();
        }
    }

    pub fn fingerprint(&self, split: Split) -> String {
        seed::fingerprint(self.ids(split).join("\n").as_bytes())
    }
}

/// Assigns whole patients to splits, stratified by class.
///
/// Patients are shuffled within each class and interleaved across classes,
/// so every prefix of the order is close to class-balanced. The order is
/// then cut into aux_v2 (whose own prefix is aux_v1), development, and the
/// labeled remainder, which is cut by `ratios`.
pub fn split_dataset<'a, I>(records: I, cfg: &SplitConfig, rng_seed: u64) -> Result<SplitManifest>
where
    I: IntoIterator<Item = (&'a str, &'a str, usize)>,
{
    cfg.validate()?;
    let mut patient_class: BTreeMap<&str, usize> = BTreeMap::new();
    let mut patient_records: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (id, patient, class) in records {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        if let Some(&c) = patient_class.get(patient) {
            if c != class {
                return Err(Error::Config(format!(
                    "patient {patient} has records of classes {c} and {class}"
                )));
            }
        }
        patient_class.insert(patient, class);
        patient_records.entry(patient).or_default().push(id);
    }

    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (&p, &c) in &patient_class {
        by_class.entry(c).or_default().push(p);
    }
    let mut rng = seed::rng(rng_seed, "split");
    for patients in by_class.values_mut() {
        patients.shuffle(&mut rng);
    }
    let mut order = Vec::with_capacity(patient_class.len());
    let longest = by_class.values().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        for patients in by_class.values() {
            if let Some(&p) = patients.get(i) {
                order.push(p);
            }
        }
    }

    let total = order.len();
    let count = |f: f64| (f * total as f64).round() as usize;
    let n_aux2 = count(cfg.aux_fraction_v2);
    let n_aux1 = count(cfg.aux_fraction_v1).min(n_aux2);
    let n_dev = count(cfg.dev_fraction);
    let labeled = total.saturating_sub(n_aux2 + n_dev);
    let n_val = (cfg.ratios.1 * labeled as f64).round() as usize;
    let n_test = (cfg.ratios.2 * labeled as f64).round() as usize;
    let n_train = labeled.saturating_sub(n_val + n_test);
    let wants = [(cfg.ratios.0, n_train), (cfg.ratios.1, n_val), (cfg.ratios.2, n_test)];
    if n_aux2 + n_dev > total || wants.iter().any(|&(r, n)| r > 0.0 && n == 0) {
        return Err(Error::Config(format!(
            "{total} patients cannot satisfy split {cfg:?} (labeled train/val/test {n_train}/{n_val}/{n_test})"
        )));
    }

    let mut manifest = SplitManifest::default();
    let mut cursor = 0;
    let mut take = |n: usize, split: Split, m: &mut SplitManifest| {
        for &p in &order[cursor..cursor + n] {
            for &id in &patient_records[p] {
                m.ids_mut(split).push(id.to_string());
            }
        }
        cursor += n;
    };
    take(n_aux1, Split::AuxV1, &mut manifest);
    take(n_aux2 - n_aux1, Split::AuxV2, &mut manifest);
    take(n_dev, Split::Development, &mut manifest);
    take(n_train, Split::Train, &mut manifest);
    take(n_val, Split::Validation, &mut manifest);
    take(n_test, Split::Test, &mut manifest);
    let v1 = manifest.aux_v1.clone();
    manifest.aux_v2.extend(v1);
    manifest.sort();
    Ok(manifest)
}
