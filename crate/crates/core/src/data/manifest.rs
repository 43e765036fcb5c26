//! Dataset manifest: a TOML file naming the two feature files, the class
//! names, and either an explicit splits file or a split seed with fractions.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::features::load_features;
use crate::data::{fractions_to_counts, split_dataset, CrossMediaDataset, Modality, Splits};
use crate::error::{Error, Result};
use crate::nn::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub image_features: PathBuf,
    pub text_features: PathBuf,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_fractions: Option<[f64; 3]>,
}

impl DatasetManifest {
    pub fn from_toml_str(content: &str, path: &Path) -> Result<Self> {
        let manifest: DatasetManifest = toml::from_str(content).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e
                .span()
                .map(|s| content[..s.start].lines().count())
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        if manifest.classes.len() < 2 {
            return Err(Error::Config(format!(
                "manifest declares {} classes, need at least 2",
                manifest.classes.len()
            )));
        }
        match (&manifest.splits_file, &manifest.split_seed) {
            (Some(_), Some(_)) => Err(Error::Config(
                "manifest must give splits_file or split_seed, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "manifest must give splits_file or split_seed".into(),
            )),
            _ => Ok(manifest),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&content, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One `doc_id,split` line per document after a header.
pub fn parse_splits(content: &str, path: &Path, doc_count: usize) -> Result<Splits> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut splits = Splits::default();
    let mut seen = vec![false; doc_count];
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, "doc_id,split")) => {}
        Some((n, l)) => return Err(err(n + 1, format!("bad splits header {l:?}"))),
        None => return Err(err(1, "empty splits file".into())),
    }
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let (doc, split) = line
            .split_once(',')
            .ok_or_else(|| err(line_no, format!("expected doc_id,split, got {line:?}")))?;
        let doc: usize = doc
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("bad doc_id {doc:?}")))?;
        if doc >= doc_count {
            return Err(err(
                line_no,
                format!("doc_id {doc} out of range (0..{doc_count})"),
            ));
        }
        if seen[doc] {
            return Err(err(line_no, format!("doc_id {doc} listed twice")));
        }
        seen[doc] = true;
        match split.trim() {
            "train" => splits.train.push(doc),
            "validation" => splits.validation.push(doc),
            "test" => splits.test.push(doc),
            other => return Err(err(line_no, format!("unknown split {other:?}"))),
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(err(0, format!("doc_id {missing} has no split assignment")));
    }
    Ok(splits)
}

pub fn render_splits(splits: &Splits) -> String {
    let mut out = String::from("doc_id,split\n");
    let mut rows: Vec<(usize, &str)> = splits
        .train
        .iter()
        .map(|&d| (d, "train"))
        .chain(splits.validation.iter().map(|&d| (d, "validation")))
        .chain(splits.test.iter().map(|&d| (d, "test")))
        .collect();
    rows.sort_unstable();
    for (d, s) in rows {
        out.push_str(&format!("{d},{s}\n"));
    }
    out
}

/// Loads the features named by a manifest and assigns splits. Relative paths
/// resolve against the manifest's directory.
pub fn load_dataset_from_manifest(manifest_path: &Path) -> Result<CrossMediaDataset> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let images = load_features(&resolve(&manifest.image_features), Modality::Image, None)?;
    let texts = load_features(&resolve(&manifest.text_features), Modality::Text, None)?;
    let mut dataset = CrossMediaDataset::from_samples(images, texts, manifest.classes.len())?;
    if let Some(splits_file) = &manifest.splits_file {
        let path = resolve(splits_file);
        let content = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let splits = parse_splits(&content, &path, dataset.doc_count())?;
        let mut seen = vec![false; dataset.class_count];
        for &d in &splits.train {
            seen[dataset.label(d)] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Sampling(format!(
                "class {missing} has no documents in the train split"
            )));
        }
        dataset.splits = splits;
    } else {
        let seed = manifest.split_seed.expect("validated");
        let fractions = manifest.split_fractions.unwrap_or([0.8, 0.1, 0.1]);
        let counts = fractions_to_counts(fractions, dataset.doc_count())?;
        split_dataset(&mut dataset, counts, &mut SeededRng::new(seed))?;
    }
    Ok(dataset)
}
