//! Text checkpoint format shared by the pathway and metric networks.
//!
//! Layout:
//! ```text
//! crossmetric-checkpoint v1
//! kind <pathway|metric>
//! layer <name> <in_dim> <out_dim> <activation>
//! <out_dim weight rows, in_dim values each>
//! bias <out_dim values>
//! ...
//! ```
//! Parameters are written as decimal text with 17 significant digits, which
//! round-trips f64 bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metricnet::MetricNetwork;
use crate::nn::layer::{Activation, DenseLayer, LayerStack};
use crate::nn::matrix::Matrix;
use crate::pathway::PathwayNetwork;

const MAGIC: &str = "crossmetric-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Pathway,
    Metric,
}

impl CheckpointKind {
    fn tag(self) -> &'static str {
        match self {
            CheckpointKind::Pathway => "pathway",
            CheckpointKind::Metric => "metric",
        }
    }
}

fn render(kind: CheckpointKind, sections: &[(String, &DenseLayer)]) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let _ = writeln!(out, "kind {}", kind.tag());
    for (name, layer) in sections {
        let _ = writeln!(
            out,
            "layer {name} {} {} {}",
            layer.in_dim(),
            layer.out_dim(),
            layer.activation.tag()
        );
        for r in 0..layer.out_dim() {
            let row: Vec<String> = layer
                .weights
                .row(r)
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        let bias: Vec<String> = layer.bias.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "bias {}", bias.join(" "));
    }
    out
}

pub fn parse_checkpoint(
    content: &str,
    path: &Path,
) -> Result<(CheckpointKind, Vec<(String, DenseLayer)>)> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = content.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        Some((n, l)) => return Err(err(n, format!("bad header {l:?}"))),
        None => return Err(err(1, "empty checkpoint".into())),
    }
    let kind = match lines.next() {
        Some((_, "kind pathway")) => CheckpointKind::Pathway,
        Some((_, "kind metric")) => CheckpointKind::Metric,
        Some((n, l)) => return Err(err(n, format!("bad kind line {l:?}"))),
        None => return Err(err(2, "missing kind line".into())),
    };
    let mut sections = Vec::new();
    while let Some((n, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("layer") {
            return Err(err(n, format!("expected a layer line, got {line:?}")));
        }
        let name = parts
            .next()
            .ok_or_else(|| err(n, "layer name missing".into()))?
            .to_string();
        let in_dim: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(n, "bad in_dim".into()))?;
        let out_dim: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(n, "bad out_dim".into()))?;
        if in_dim == 0 || out_dim == 0 || in_dim.saturating_mul(out_dim) > 64_000_000 {
            return Err(err(
                n,
                format!("unreasonable layer dimensions {in_dim}x{out_dim}"),
            ));
        }
        let act_tag = parts
            .next()
            .ok_or_else(|| err(n, "activation missing".into()))?;
        let activation = Activation::from_tag(act_tag)
            .ok_or_else(|| err(n, format!("unknown activation {act_tag:?}")))?;
        if parts.next().is_some() {
            return Err(err(n, "trailing fields on layer line".into()));
        }
        let mut weights = Matrix::zeros(out_dim, in_dim);
        for r in 0..out_dim {
            let (wn, wline) = lines
                .next()
                .ok_or_else(|| err(n, "truncated weight rows".into()))?;
            let values: Vec<f64> = wline
                .split_whitespace()
                .map(|v| {
                    v.parse()
                        .map_err(|_| err(wn, format!("bad weight value {v:?}")))
                })
                .collect::<Result<_>>()?;
            if values.len() != in_dim {
                return Err(err(
                    wn,
                    format!("weight row has {} values, expected {in_dim}", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err(wn, "non-finite weight".into()));
            }
            weights.row_mut(r).copy_from_slice(&values);
        }
        let (bn, bline) = lines
            .next()
            .ok_or_else(|| err(n, "missing bias line".into()))?;
        let bline = bline
            .strip_prefix("bias ")
            .ok_or_else(|| err(bn, format!("expected bias line, got {bline:?}")))?;
        let bias: Vec<f64> = bline
            .split_whitespace()
            .map(|v| {
                v.parse()
                    .map_err(|_| err(bn, format!("bad bias value {v:?}")))
            })
            .collect::<Result<_>>()?;
        if bias.len() != out_dim {
            return Err(err(
                bn,
                format!("bias has {} values, expected {out_dim}", bias.len()),
            ));
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(err(bn, "non-finite bias".into()));
        }
        sections.push((name, DenseLayer::from_parts(weights, bias, activation)?));
    }
    if sections.is_empty() {
        return Err(err(3, "checkpoint has no layers".into()));
    }
    Ok((kind, sections))
}

fn pathway_sections(net: &PathwayNetwork) -> Vec<(String, &DenseLayer)> {
    let mut sections = Vec::new();
    for (i, l) in net.image_stack.layers.iter().enumerate() {
        sections.push((format!("image_stack.{i}"), l));
    }
    for (i, l) in net.text_stack.layers.iter().enumerate() {
        sections.push((format!("text_stack.{i}"), l));
    }
    sections.push(("image_branch".to_string(), &net.image_branch));
    sections.push(("text_branch".to_string(), &net.text_branch));
    sections
}

pub fn render_pathway(net: &PathwayNetwork) -> String {
    render(CheckpointKind::Pathway, &pathway_sections(net))
}

pub fn save_pathway(path: &Path, net: &PathwayNetwork) -> Result<()> {
    fs::write(path, render_pathway(net)).map_err(|e| Error::io(path, e))
}

pub fn pathway_from_sections(
    path: &Path,
    sections: Vec<(String, DenseLayer)>,
) -> Result<PathwayNetwork> {
    let mut image_layers = Vec::new();
    let mut text_layers = Vec::new();
    let mut image_branch = None;
    let mut text_branch = None;
    for (name, layer) in sections {
        if let Some(idx) = name.strip_prefix("image_stack.") {
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("bad section name {name:?}"),
            })?;
            if idx != image_layers.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("out-of-order section {name:?}"),
                });
            }
            image_layers.push(layer);
        } else if let Some(idx) = name.strip_prefix("text_stack.") {
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("bad section name {name:?}"),
            })?;
            if idx != text_layers.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("out-of-order section {name:?}"),
                });
            }
            text_layers.push(layer);
        } else if name == "image_branch" {
            image_branch = Some(layer);
        } else if name == "text_branch" {
            text_branch = Some(layer);
        } else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("unknown section {name:?}"),
            });
        }
    }
    let missing = |what: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("checkpoint is missing {what}"),
    };
    if image_layers.is_empty() || text_layers.is_empty() {
        return Err(missing("stack layers"));
    }
    for stack in [&image_layers, &text_layers] {
        for pair in stack.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(missing("consistent stack dimensions"));
            }
        }
    }
    Ok(PathwayNetwork {
        image_stack: LayerStack {
            layers: image_layers,
        },
        text_stack: LayerStack {
            layers: text_layers,
        },
        image_branch: image_branch.ok_or_else(|| missing("image_branch"))?,
        text_branch: text_branch.ok_or_else(|| missing("text_branch"))?,
    })
}

pub fn load_pathway(path: &Path) -> Result<PathwayNetwork> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (kind, sections) = parse_checkpoint(&content, path)?;
    if kind != CheckpointKind::Pathway {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 2,
            message: format!("expected a pathway checkpoint, found {:?}", kind.tag()),
        });
    }
    pathway_from_sections(path, sections)
}

fn metric_sections(net: &MetricNetwork) -> Vec<(String, &DenseLayer)> {
    let mut sections: Vec<(String, &DenseLayer)> = net
        .hidden
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| (format!("hidden.{i}"), l))
        .collect();
    sections.push(("head".to_string(), &net.head));
    sections
}

pub fn render_metric(net: &MetricNetwork) -> String {
    render(CheckpointKind::Metric, &metric_sections(net))
}

pub fn save_metric(path: &Path, net: &MetricNetwork) -> Result<()> {
    fs::write(path, render_metric(net)).map_err(|e| Error::io(path, e))
}

pub fn metric_from_sections(
    path: &Path,
    sections: Vec<(String, DenseLayer)>,
) -> Result<MetricNetwork> {
    let mut hidden = Vec::new();
    let mut head = None;
    for (name, layer) in sections {
        if let Some(idx) = name.strip_prefix("hidden.") {
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("bad section name {name:?}"),
            })?;
            if idx != hidden.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("out-of-order section {name:?}"),
                });
            }
            hidden.push(layer);
        } else if name == "head" {
            head = Some(layer);
        } else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("unknown section {name:?}"),
            });
        }
    }
    let missing = |what: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("checkpoint is missing {what}"),
    };
    if hidden.is_empty() {
        return Err(missing("hidden layers"));
    }
    let head = head.ok_or_else(|| missing("head"))?;
    if head.out_dim() != 2 || head.in_dim() != hidden.last().unwrap().out_dim() {
        return Err(missing("a two-node head matching the hidden stack"));
    }
    Ok(MetricNetwork {
        hidden: LayerStack { layers: hidden },
        head,
    })
}

pub fn load_metric(path: &Path) -> Result<MetricNetwork> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (kind, sections) = parse_checkpoint(&content, path)?;
    if kind != CheckpointKind::Metric {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 2,
            message: format!("expected a metric checkpoint, found {:?}", kind.tag()),
        });
    }
    metric_from_sections(path, sections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::Activation;
    use crate::nn::rng::SeededRng;

    #[test]
    fn pathway_roundtrip_is_bit_exact() {
        let mut rng = SeededRng::new(1);
        let net = PathwayNetwork::with_hidden_dims(5, 7, &[6, 4], Activation::Relu, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pathway.ckpt");
        save_pathway(&path, &net).unwrap();
        let loaded = load_pathway(&path).unwrap();
        assert_eq!(loaded, net);
        // saving the loaded network reproduces the file byte for byte
        save_pathway(&dir.path().join("again.ckpt"), &loaded).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(dir.path().join("again.ckpt")).unwrap()
        );
    }

    #[test]
    fn metric_roundtrip_is_bit_exact() {
        let mut rng = SeededRng::new(2);
        let net = MetricNetwork::with_hidden_dims(4, &[5, 3], &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metric.ckpt");
        save_metric(&path, &net).unwrap();
        assert_eq!(load_metric(&path).unwrap(), net);
    }

    #[test]
    fn kind_mismatch_rejected() {
        let mut rng = SeededRng::new(3);
        let net = MetricNetwork::with_hidden_dims(4, &[5], &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metric.ckpt");
        save_metric(&path, &net).unwrap();
        assert!(load_pathway(&path).is_err());
    }

    #[test]
    fn corrupted_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(load_pathway(&path).is_err());
    }

    #[test]
    fn truncated_weights_name_a_line() {
        let content = format!("{MAGIC}\nkind metric\nlayer hidden.0 2 2 relu\n1.0 2.0\n");
        let err = parse_checkpoint(&content, Path::new("x.ckpt")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err:?}");
    }
}
