use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image_io::{dequantize, quantize, read_png, write_png};
use super::pyramid::build_pyramid;
use super::split::{split_dataset, Split, SplitConfig, SplitManifest};
use super::standardize::{compute_standardization, ChannelStats, StatsFile};
use super::synth::{generate, SynthConfig};
use super::{AugmentParams, Image, ImageRecord, MagTag};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const STATS_FILE: &str = "stats.json";
pub const SPEC_FILE: &str = "dataset.json";
const IMAGE_DIR: &str = "images";

/// Everything needed to regenerate a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub magnifications: Vec<MagTag>,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            magnifications: [1.0, 0.5, 0.25, 0.125].map(|m| MagTag::new(m).expect("valid")).to_vec(),
            seed: 0,
        }
    }
}

/// A dataset directory: `manifest.csv`, `images/`, `stats.json`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<ImageRecord>,
    pub manifest: SplitManifest,
    pub stats: StatsFile,
}

fn image_name(id: &str, mag: MagTag) -> String {
    format!("{IMAGE_DIR}/{id}_{mag}.png")
}

impl Dataset {
    /// Generates, splits, builds pyramids from the stored base image, and
    /// writes the whole directory.
    pub fn create(root: &Path, spec: &DatasetSpec) -> Result<Dataset> {
        let mut mags = spec.magnifications.clone();
        if !mags.contains(&MagTag::BASE) {
            mags.push(MagTag::BASE);
        }
        mags.sort();
        mags.dedup();
        let synthetic = generate(&spec.synth, spec.seed)?;
        let manifest = split_dataset(
            synthetic
                .iter()
                .map(|r| (r.id.as_str(), r.patient_id.as_str(), r.class_label)),
            &spec.split,
            spec.seed,
        )?;
        let columns = manifest.column_of();

        fs::create_dir_all(root.join(IMAGE_DIR)).map_err(|e| Error::io(root, e))?;
        let train: BTreeSet<&str> = manifest.train.iter().map(String::as_str).collect();
        let mut train_levels: BTreeMap<MagTag, Vec<Image>> = BTreeMap::new();
        let mut records = Vec::with_capacity(synthetic.len());
        for rec in &synthetic {
            let [_, h, w] = rec.image.shape()[..] else {
                unreachable!()
            };
            // Levels derive from the stored 8-bit base so they can be re-derived.
            let base = dequantize(&quantize(&rec.image), h, w)?;
            let pyramid = build_pyramid(&base, &mags)?;
            let mut paths = BTreeMap::new();
            for (mag, level) in pyramid {
                let rel = image_name(&rec.id, mag);
                write_png(&root.join(&rel), &level)?;
                if train.contains(rec.id.as_str()) {
                    let [_, lh, lw] = level.shape()[..] else { unreachable!() };
                    train_levels
                        .entry(mag)
                        .or_default()
                        .push(dequantize(&quantize(&level), lh, lw)?);
                }
                paths.insert(mag, PathBuf::from(rel));
            }
            let split = columns[rec.id.as_str()];
            records.push(ImageRecord {
                id: rec.id.clone(),
                patient_id: rec.patient_id.clone(),
                class_label: split.is_labeled().then_some(rec.class_label),
                pyramid: paths,
            });
        }

        let mut by_magnification = BTreeMap::new();
        for (mag, imgs) in &train_levels {
            let refs: Vec<&Image> = imgs.iter().collect();
            by_magnification.insert(mag.to_string(), compute_standardization(&refs)?);
        }
        let stats = StatsFile {
            train_fingerprint: manifest.fingerprint(Split::Train),
            by_magnification,
        };
        let ds = Dataset {
            root: root.to_path_buf(),
            records,
            manifest,
            stats,
        };
        ds.save_manifest(&root.join(MANIFEST_FILE))?;
        ds.stats.save(&root.join(STATS_FILE))?;
        let spec_json = serde_json::to_string_pretty(spec)? + "\n";
        fs::write(root.join(SPEC_FILE), spec_json).map_err(|e| Error::io(root.join(SPEC_FILE), e))?;
        Ok(ds)
    }

    /// Loads a directory written by [`Dataset::create`], checking that every
    /// image exists and that the stats were computed on this train split.
    pub fn load(root: &Path) -> Result<Dataset> {
        let (manifest, records) = load_manifest(&root.join(MANIFEST_FILE))?;
        for r in &records {
            for rel in r.pyramid.values() {
                let path = root.join(rel);
                if !path.is_file() {
                    return Err(Error::MissingImage { id: r.id.clone(), path });
                }
            }
        }
        let stats = StatsFile::load(&root.join(STATS_FILE))?;
        if stats.train_fingerprint != manifest.fingerprint(Split::Train) {
            return Err(Error::Config(
                "stats.json was not computed on this manifest's training split".into(),
            ));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            records,
            manifest,
            stats,
        })
    }

    pub fn save_manifest(&self, path: &Path) -> Result<()> {
        save_manifest(path, &self.manifest, &self.records)
    }

    pub fn record(&self, id: &str) -> Result<&ImageRecord> {
        self.records
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Config(format!("no record `{id}`")))
    }

    pub fn image(&self, id: &str, mag: MagTag) -> Result<Image> {
        let rec = self.record(id)?;
        let rel = rec
            .pyramid
            .get(&mag)
            .ok_or_else(|| Error::Config(format!("record `{id}` has no level {mag}")))?;
        let path = self.root.join(rel);
        if !path.is_file() {
            return Err(Error::MissingImage {
                id: id.to_string(),
                path,
            });
        }
        read_png(&path)
    }

    pub fn stats(&self, mag: MagTag) -> Result<&ChannelStats> {
        self.stats.get(mag)
    }

    /// Images and labels of a labeled split at one magnification.
    pub fn labeled(&self, split: Split, mag: MagTag) -> Result<LabeledView> {
        if !split.is_labeled() {
            return Err(Error::Config(format!("split {split} carries no labels")));
        }
        let ids = self.manifest.ids(split).to_vec();
        let mut images = Vec::with_capacity(ids.len());
        let mut labels = Vec::with_capacity(ids.len());
        for id in &ids {
            images.push(self.image(id, mag)?);
            labels.push(
                self.record(id)?
                    .class_label
                    .ok_or_else(|| Error::Config(format!("record `{id}` in {split} has no label")))?,
            );
        }
        Ok(LabeledView {
            ids,
            images,
            labels,
            stats: self.stats(mag)?.clone(),
        })
    }

    /// Paired teacher/student views of any split. Labels are not copied.
    pub fn unlabeled(&self, split: Split, teacher_mag: MagTag, student_mag: MagTag) -> Result<UnlabeledView> {
        let ids = self.manifest.ids(split).to_vec();
        let mut teacher = Vec::with_capacity(ids.len());
        let mut student = Vec::with_capacity(ids.len());
        for id in &ids {
            teacher.push(self.image(id, teacher_mag)?);
            student.push(self.image(id, student_mag)?);
        }
        Ok(UnlabeledView {
            ids,
            teacher_images: teacher,
            student_images: student,
            teacher_stats: self.stats(teacher_mag)?.clone(),
            student_stats: self.stats(student_mag)?.clone(),
        })
    }

    /// Recomputes every stored level from the stored base image and compares
    /// the 8-bit bytes. Returns the ids whose levels differ.
    pub fn audit_pyramids(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for r in &self.records {
            let base = self.image(&r.id, MagTag::BASE)?;
            let mags: Vec<MagTag> = r.pyramid.keys().copied().collect();
            let rebuilt = build_pyramid(&base, &mags)?;
            for (mag, level) in rebuilt {
                if quantize(&level) != quantize(&self.image(&r.id, mag)?) {
                    bad.push(r.id.clone());
                    break;
                }
            }
        }
        Ok(bad)
    }
}

/// Labeled images at one magnification plus the training statistics used
/// to standardize them.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledView {
    pub ids: Vec<String>,
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub stats: ChannelStats,
}

impl LabeledView {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Standardized `[1,C,H,W]` input for sample `i`, optionally augmented.
    pub fn input<S: Scalar>(&self, i: usize, aug: Option<&AugmentParams>) -> Result<Tensor<S>> {
        standardized(&self.images[i], &self.stats, aug)
    }
}

/// Paired views of the same images at the teacher and student
/// magnifications. Deliberately has no label field.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledView {
    pub ids: Vec<String>,
    pub teacher_images: Vec<Image>,
    pub student_images: Vec<Image>,
    pub teacher_stats: ChannelStats,
    pub student_stats: ChannelStats,
}

impl UnlabeledView {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Standardized `[1,C,H,W]` teacher and student inputs for sample `i`,
    /// with the same augmentation draw applied to both.
    pub fn pair<S: Scalar>(&self, i: usize, aug: Option<&AugmentParams>) -> Result<(Tensor<S>, Tensor<S>)> {
        Ok((
            standardized(&self.teacher_images[i], &self.teacher_stats, aug)?,
            standardized(&self.student_images[i], &self.student_stats, aug)?,
        ))
    }
}

fn standardized<S: Scalar>(image: &Image, stats: &ChannelStats, aug: Option<&AugmentParams>) -> Result<Tensor<S>> {
    let t = match aug {
        Some(a) => stats.apply(&a.apply(image))?,
        None => stats.apply(image)?,
    };
    Ok(t.unsqueeze0())
}

const FIXED_COLUMNS: [&str; 4] = ["id", "patient_id", "split", "class_or_empty"];

/// Writes `manifest.csv`: fixed columns, then one path column per
/// magnification present in any record, in ascending order.
pub fn save_manifest(path: &Path, manifest: &SplitManifest, records: &[ImageRecord]) -> Result<()> {
    let mags: BTreeSet<MagTag> = records.iter().flat_map(|r| r.pyramid.keys().copied()).collect();
    let columns = manifest.column_of();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(mags.iter().rev().map(|m| m.column()));
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for r in records {
        let split = columns
            .get(r.id.as_str())
            .ok_or_else(|| Error::Config(format!("record `{}` is in no split", r.id)))?;
        let mut row = vec![
            r.id.clone(),
            r.patient_id.clone(),
            split.to_string(),
            r.class_label.map(|c| c.to_string()).unwrap_or_default(),
        ];
        for m in mags.iter().rev() {
            row.push(
                r.pyramid
                    .get(m)
                    .map(|p| p.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line,
            column: 1,
            message: format!("{other:?}"),
        },
    }
}

/// Reads `manifest.csv`. Parse failures report the 1-based line and column.
pub fn load_manifest(path: &Path) -> Result<(SplitManifest, Vec<ImageRecord>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header = rdr.headers().map_err(|e| csv_io(path, e))?.clone();
    for (i, name) in FIXED_COLUMNS.iter().enumerate() {
        if header.get(i) != Some(name) {
            return Err(Error::Parse {
                line: 1,
                column: i + 1,
                message: format!("expected column `{name}`"),
            });
        }
    }
    let mut mag_columns = Vec::new();
    for (i, name) in header.iter().enumerate().skip(FIXED_COLUMNS.len()) {
        let mag = name
            .strip_prefix("mag_")
            .and_then(|v| v.parse::<MagTag>().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                column: i + 1,
                message: format!("bad magnification column `{name}`"),
            })?;
        mag_columns.push(mag);
    }
    if !mag_columns.contains(&MagTag::BASE) {
        return Err(Error::Parse {
            line: 1,
            column: header.len(),
            message: "no base magnification column `mag_1`".into(),
        });
    }

    let mut records = Vec::new();
    let mut splits = Vec::new();
    let mut seen = BTreeSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_io(path, e))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field_err = |column: usize, message: String| Error::Parse { line, column, message };
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(field_err(1, "empty id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let split: Split = row[2]
            .parse()
            .map_err(|_| field_err(3, format!("unknown split `{}`", &row[2])))?;
        let class_label = match &row[3] {
            "" => None,
            s => Some(
                s.parse::<usize>()
                    .map_err(|_| field_err(4, format!("bad class `{s}`")))?,
            ),
        };
        if split.is_labeled() != class_label.is_some() {
            return Err(field_err(
                4,
                format!(
                    "split {split} {} a class",
                    if split.is_labeled() { "needs" } else { "forbids" }
                ),
            ));
        }
        let mut pyramid = BTreeMap::new();
        for (k, mag) in mag_columns.iter().enumerate() {
            let cell = &row[FIXED_COLUMNS.len() + k];
            if !cell.is_empty() {
                pyramid.insert(*mag, PathBuf::from(cell));
            }
        }
        if !pyramid.contains_key(&MagTag::BASE) {
            return Err(field_err(
                FIXED_COLUMNS.len() + 1,
                format!("record `{id}` lacks the base image"),
            ));
        }
        splits.push((id.clone(), split));
        records.push(ImageRecord {
            id,
            patient_id: row[1].to_string(),
            class_label,
            pyramid,
        });
    }
    let manifest = SplitManifest::from_columns(splits.iter().map(|(id, s)| (id.as_str(), *s)));
    Ok((manifest, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            synth: SynthConfig {
                num_patients: 24,
                base_size: 32,
                ..SynthConfig::default()
            },
            magnifications: vec![MagTag::BASE, MagTag::new(0.5).unwrap()],
            seed: 11,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn create_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::create(dir.path(), &small_spec()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.records, ds.records);
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.stats, ds.stats);
        assert!(ds.audit_pyramids().unwrap().is_empty());
    }

    #[test]
    fn malformed_rows_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        fs::write(
            &path,
            "id,patient_id,split,class_or_empty,mag_1\na,p,train,x,images/a.png\n",
        )
        .unwrap();
        match load_manifest(&path) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 4)),
            other => panic!("{other:?}"),
        }
        fs::write(
            &path,
            "id,patient_id,split,class_or_empty,mag_1\na,p,train,0,x\na,p,test,1,y\n",
        )
        .unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::DuplicateId(id)) if id == "a"));
    }
}
