//! Plain-text feature files: a header line `#<modality>,<dim>` followed by one
//! sample per line as `label,<v1>,<v2>,...`.

use std::fs;
use std::path::Path;

use crate::data::{LabeledSample, Modality};
use crate::error::{Error, Result};

pub fn load_features(
    path: &Path,
    modality: Modality,
    expected_dim: Option<usize>,
) -> Result<Vec<LabeledSample>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&content, path, modality, expected_dim)
}

pub fn parse_features(
    content: &str,
    path: &Path,
    modality: Modality,
    expected_dim: Option<usize>,
) -> Result<Vec<LabeledSample>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty feature file".into()))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| parse_err(1, format!("header must start with '#', got {header:?}")))?;
    let mut parts = header.split(',');
    let tag = parts.next().unwrap_or("");
    let declared_modality = Modality::from_tag(tag)
        .ok_or_else(|| parse_err(1, format!("unknown modality tag {tag:?}")))?;
    if declared_modality != modality {
        return Err(parse_err(
            1,
            format!(
                "file declares modality {tag:?}, expected {:?}",
                modality.tag()
            ),
        ));
    }
    let dim: usize = parts
        .next()
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| parse_err(1, "header dimension missing or not a number".into()))?;
    if let Some(expected) = expected_dim {
        if dim != expected {
            return Err(parse_err(
                1,
                format!("declared dimension {dim}, expected {expected}"),
            ));
        }
    }

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or("");
        let label: usize = label_field
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("unknown label {label_field:?}")))?;
        let mut features = Vec::with_capacity(dim);
        for field in fields {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, format!("non-numeric field {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("non-finite value {field:?}")));
            }
            features.push(v);
        }
        if features.len() != dim {
            return Err(parse_err(
                line_no,
                format!("row has {} values, header declares {dim}", features.len()),
            ));
        }
        samples.push(LabeledSample {
            features,
            label,
            modality,
            pair_id: samples.len(),
        });
    }
    Ok(samples)
}

/// Writes samples in the same format `load_features` reads. Values use 17
/// significant digits so the round trip is bit-exact.
pub fn save_features(path: &Path, samples: &[LabeledSample], modality: Modality) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    let mut out = String::new();
    out.push_str(&format!("#{},{}\n", modality.tag(), dim));
    for s in samples {
        out.push_str(&s.label.to_string());
        for v in &s.features {
            out.push(',');
            out.push_str(&format!("{v:.16e}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
