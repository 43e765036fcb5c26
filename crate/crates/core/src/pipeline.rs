//! End-to-end orchestration used by the CLI and the integration tests:
//! dataset preparation, the three training stages, evaluation, and reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::PipelineConfig;
use crate::data::{
    self, generate_synthetic, load_dataset_from_manifest, standardize, CrossMediaDataset, Modality,
};
use crate::error::{Error, Result};
use crate::eval::{cosine_baseline, evaluate_task, RetrievalReport, Task};
use crate::metricnet::{sample_pairs, score_matrix, train_metric, MetricNetwork};
use crate::nn::layer::Activation;
use crate::nn::rng::SeededRng;
use crate::pathway::{
    extract_shared_representation, finetune, pretrain, PathwayNetwork, SharedRepresentation,
};

pub const THREADS_ENV: &str = "CROSSMETRIC_THREADS";

pub fn eval_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Loads or generates the dataset, assigns splits, standardizes on train
/// statistics, and optionally applies the intra-media refiner.
pub fn prepare_dataset(config: &PipelineConfig, base_dir: &Path) -> Result<CrossMediaDataset> {
    config.validate()?;
    let mut dataset = if let Some(manifest) = &config.dataset.manifest {
        let path = if manifest.is_absolute() {
            manifest.clone()
        } else {
            base_dir.join(manifest)
        };
        load_dataset_from_manifest(&path)?
    } else {
        let synth = config.dataset.synthetic.as_ref().expect("validated");
        let mut ds = generate_synthetic(synth)?;
        let counts = data::fractions_to_counts(config.split_fractions, ds.doc_count())?;
        let mut rng = SeededRng::new(config.seed).child("split");
        data::split_dataset(&mut ds, counts, &mut rng)?;
        ds
    };
    standardize(&mut dataset)?;
    if config.use_intra_refine {
        let root = SeededRng::new(config.seed);
        for modality in [Modality::Image, Modality::Text] {
            let mut rng = root.child(&format!("refine-{}", modality.tag()));
            let outcome = data::intra_modality_refine(
                &dataset,
                modality,
                config.refine_hidden_dim,
                &config.refine.to_sgd(),
                &mut rng,
            )?;
            let samples = match modality {
                Modality::Image => &mut dataset.images,
                Modality::Text => &mut dataset.texts,
            };
            for (sample, refined) in samples.iter_mut().zip(outcome.features) {
                sample.features = refined;
            }
        }
        // refined features have their own scale; re-standardize on train
        standardize(&mut dataset)?;
    }
    Ok(dataset)
}

/// Per-dimension z-scoring of the shared representation, fit on the train
/// split. The metric network trains and scores on scaled embeddings: the
/// pathway losses can leave the embeddings at an arbitrarily small scale,
/// which would stall metric training. The cosine baseline stays on the raw
/// representation. The scaler is recomputed from the train split at eval
/// time, so it needs no checkpoint of its own.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn embedding_scaler(representation: &SharedRepresentation) -> EmbeddingScaler {
    let dim = representation.image_embeddings.cols();
    let rows = representation.image_embeddings.rows() + representation.text_embeddings.rows();
    let mut mean = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for m in [
        &representation.image_embeddings,
        &representation.text_embeddings,
    ] {
        for r in 0..m.rows() {
            for (c, v) in m.row(r).iter().enumerate() {
                mean[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let n = rows.max(1) as f64;
    let std = mean
        .iter()
        .zip(&sq)
        .map(|(&s, &q)| ((q / n - (s / n) * (s / n)).max(0.0)).sqrt().max(1e-8))
        .collect();
    for v in &mut mean {
        *v /= n;
    }
    EmbeddingScaler { mean, std }
}

pub fn scale_representation(
    mut representation: SharedRepresentation,
    scaler: &EmbeddingScaler,
) -> SharedRepresentation {
    for m in [
        &mut representation.image_embeddings,
        &mut representation.text_embeddings,
    ] {
        for r in 0..m.rows() {
            for (c, v) in m.row_mut(r).iter_mut().enumerate() {
                *v = (*v - scaler.mean[c]) / scaler.std[c];
            }
        }
    }
    representation
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub artifacts: BTreeMap<String, String>,
    pub checksums: BTreeMap<String, String>,
    pub timing_seconds: BTreeMap<String, f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, content).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_loss_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut out = String::from("iteration,loss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{i},{l:.16e}\n"));
    }
    write_atomic(path, &out)
}

pub struct TrainOutput {
    pub manifest_path: PathBuf,
    pub pretrain_history: Vec<f64>,
    pub finetune_history: Vec<f64>,
    pub metric_history: Vec<f64>,
}

/// The three training stages: contrastive pretraining, double-triplet
/// fine-tuning, then metric-network training on the extracted representation.
pub fn run_train(config: &PipelineConfig, base_dir: &Path, out_dir: &Path) -> Result<TrainOutput> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dataset = prepare_dataset(config, base_dir)?;
    let root = SeededRng::new(config.seed);

    let mut artifacts: BTreeMap<String, String> = BTreeMap::new();
    let mut timing: BTreeMap<String, f64> = BTreeMap::new();

    let mut net = PathwayNetwork::new(
        dataset.image_dim(),
        dataset.text_dim(),
        Activation::Relu,
        &mut root.child("init-pathway"),
    );

    let pretrain_history = if config.skip_pretrain {
        Vec::new()
    } else {
        let start = Instant::now();
        let outcome = pretrain(
            &mut net,
            &dataset,
            &config.pretrain.to_sgd(),
            &config.margins,
            &mut root.child("pretrain"),
        )?;
        timing.insert("pretrain".into(), start.elapsed().as_secs_f64());
        outcome.loss_history
    };
    checkpoint::save_pathway(&out_dir.join("pathway_pretrained.ckpt"), &net)?;
    artifacts.insert(
        "pathway_pretrained".into(),
        "pathway_pretrained.ckpt".into(),
    );
    write_loss_history(&out_dir.join("pretrain_loss.csv"), &pretrain_history)?;
    artifacts.insert("pretrain_loss".into(), "pretrain_loss.csv".into());

    let start = Instant::now();
    let finetune_outcome = finetune(
        &mut net,
        &dataset,
        &config.finetune.to_sgd(),
        &config.margins,
        &mut root.child("finetune"),
    )?;
    timing.insert("finetune".into(), start.elapsed().as_secs_f64());
    checkpoint::save_pathway(&out_dir.join("pathway.ckpt"), &net)?;
    artifacts.insert("pathway".into(), "pathway.ckpt".into());
    write_loss_history(
        &out_dir.join("finetune_loss.csv"),
        &finetune_outcome.loss_history,
    )?;
    artifacts.insert("finetune_loss".into(), "finetune_loss.csv".into());

    let mut metric_history = Vec::new();
    if !config.baseline_only {
        let representation = extract_shared_representation(&net, &dataset, &dataset.splits.train)?;
        let scaler = embedding_scaler(&representation);
        let representation = scale_representation(representation, &scaler);
        let mut pair_rng = root.child("pairs");
        let pairs = sample_pairs(
            &representation,
            config.effective_pair_count(dataset.splits.train.len()),
            &mut pair_rng,
        )?;
        let mut metric_net = MetricNetwork::new(net.embed_dim(), &mut root.child("init-metric"));
        let start = Instant::now();
        let outcome = train_metric(
            &mut metric_net,
            &representation,
            &pairs,
            &config.metric.to_sgd(),
            &mut root.child("metric"),
        )?;
        timing.insert("metric".into(), start.elapsed().as_secs_f64());
        metric_history = outcome.loss_history;
        checkpoint::save_metric(&out_dir.join("metric.ckpt"), &metric_net)?;
        artifacts.insert("metric".into(), "metric.ckpt".into());
        write_loss_history(&out_dir.join("metric_loss.csv"), &metric_history)?;
        artifacts.insert("metric_loss".into(), "metric_loss.csv".into());
    }

    let mut checksums = BTreeMap::new();
    for (name, rel) in &artifacts {
        checksums.insert(name.clone(), sha256_file(&out_dir.join(rel))?);
    }
    let manifest = RunManifest {
        config: config.clone(),
        artifacts,
        checksums,
        timing_seconds: timing,
    };
    let manifest_path = out_dir.join("run_manifest.toml");
    write_atomic(
        &manifest_path,
        &toml::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(TrainOutput {
        manifest_path,
        pretrain_history,
        finetune_history: finetune_outcome.loss_history,
        metric_history,
    })
}

pub struct EvalOutput {
    pub cosine_image_to_text: RetrievalReport,
    pub cosine_text_to_image: RetrievalReport,
    pub metric_image_to_text: Option<RetrievalReport>,
    pub metric_text_to_image: Option<RetrievalReport>,
}

impl EvalOutput {
    pub fn cosine_average(&self) -> f64 {
        (self.cosine_image_to_text.map + self.cosine_text_to_image.map) / 2.0
    }

    pub fn metric_average(&self) -> Option<f64> {
        match (&self.metric_image_to_text, &self.metric_text_to_image) {
            (Some(a), Some(b)) => Some((a.map + b.map) / 2.0),
            _ => None,
        }
    }
}

fn task_file_tag(task: Task) -> &'static str {
    match task {
        Task::ImageToText => "i2t",
        Task::TextToImage => "t2i",
    }
}

fn write_report_files(out_dir: &Path, report: &RetrievalReport, scorer: &str) -> Result<()> {
    let tag = task_file_tag(report.task);
    let mut pr = String::from("recall,precision\n");
    for (r, p) in &report.pr_points {
        pr.push_str(&format!("{r:.2},{p:.6}\n"));
    }
    write_atomic(&out_dir.join(format!("pr_{tag}_{scorer}.csv")), &pr)?;
    let mut ap = String::from("query_index,ap\n");
    for (i, v) in report.per_query_ap.iter().enumerate() {
        ap.push_str(&format!("{i},{v:.6}\n"));
    }
    write_atomic(
        &out_dir.join(format!("per_query_ap_{tag}_{scorer}.csv")),
        &ap,
    )
}

/// Scores the metric network over the test representation; the text-to-image
/// matrix is the transpose of image-to-text because the pair input is always
/// image-first.
pub fn metric_reports(
    metric_net: &MetricNetwork,
    representation: &SharedRepresentation,
    threads: usize,
) -> Result<(RetrievalReport, RetrievalReport)> {
    let i2t = score_matrix(
        metric_net,
        &representation.image_embeddings,
        Modality::Image,
        &representation.text_embeddings,
        Modality::Text,
        threads,
    )?;
    let t2i_scores = i2t.scores.transpose();
    let image_to_text = evaluate_task(
        Task::ImageToText,
        &i2t.scores,
        &representation.image_labels,
        &representation.text_labels,
    )?;
    let text_to_image = evaluate_task(
        Task::TextToImage,
        &t2i_scores,
        &representation.text_labels,
        &representation.image_labels,
    )?;
    Ok((image_to_text, text_to_image))
}

pub fn render_map_summary(output: &EvalOutput) -> String {
    let fmt = |v: Option<f64>| match v {
        Some(v) => format!("{v:.6}"),
        None => "n/a".to_string(),
    };
    let mut out = String::from("task,cosine,metric_network\n");
    out.push_str(&format!(
        "Image->Text,{:.6},{}\n",
        output.cosine_image_to_text.map,
        fmt(output.metric_image_to_text.as_ref().map(|r| r.map)),
    ));
    out.push_str(&format!(
        "Text->Image,{:.6},{}\n",
        output.cosine_text_to_image.map,
        fmt(output.metric_text_to_image.as_ref().map(|r| r.map)),
    ));
    out.push_str(&format!(
        "Average,{:.6},{}\n",
        output.cosine_average(),
        fmt(output.metric_average()),
    ));
    out
}

/// Evaluates the test split with the metric network and the cosine baseline,
/// writing the MAP summary, PR curves, and per-query APs.
pub fn run_eval(config: &PipelineConfig, base_dir: &Path, run_dir: &Path) -> Result<EvalOutput> {
    config.validate()?;
    let dataset = prepare_dataset(config, base_dir)?;
    let pathway_path = run_dir.join("pathway.ckpt");
    let net = checkpoint::load_pathway(&pathway_path)?;
    if net.image_stack.in_dim() != dataset.image_dim()
        || net.text_stack.in_dim() != dataset.text_dim()
    {
        return Err(Error::shape(
            "run_eval",
            format!(
                "checkpoint inputs {}x{}",
                net.image_stack.in_dim(),
                net.text_stack.in_dim()
            ),
            format!(
                "dataset dims {}x{}",
                dataset.image_dim(),
                dataset.text_dim()
            ),
        ));
    }
    let representation = extract_shared_representation(&net, &dataset, &dataset.splits.test)?;
    let (cosine_i2t, cosine_t2i, zero_norm) = cosine_baseline(&representation)?;
    if zero_norm > 0 {
        eprintln!("warning: {zero_norm} zero-norm embedding rows scored as cosine 0");
    }

    let metric_path = run_dir.join("metric.ckpt");
    let (metric_i2t, metric_t2i) = if config.baseline_only {
        (None, None)
    } else {
        let metric_net = checkpoint::load_metric(&metric_path)?;
        if metric_net.embed_dim() != net.embed_dim() {
            return Err(Error::shape(
                "run_eval",
                format!("metric checkpoint for {}-d embeddings", net.embed_dim()),
                format!("{}-d", metric_net.embed_dim()),
            ));
        }
        let train_rep = extract_shared_representation(&net, &dataset, &dataset.splits.train)?;
        let scaler = embedding_scaler(&train_rep);
        let scaled = scale_representation(representation.clone(), &scaler);
        let (a, b) = metric_reports(&metric_net, &scaled, eval_threads())?;
        (Some(a), Some(b))
    };

    let eval_dir = run_dir.join("eval");
    fs::create_dir_all(&eval_dir).map_err(|e| Error::io(&eval_dir, e))?;
    let output = EvalOutput {
        cosine_image_to_text: cosine_i2t,
        cosine_text_to_image: cosine_t2i,
        metric_image_to_text: metric_i2t,
        metric_text_to_image: metric_t2i,
    };
    write_report_files(&eval_dir, &output.cosine_image_to_text, "cosine")?;
    write_report_files(&eval_dir, &output.cosine_text_to_image, "cosine")?;
    if let (Some(a), Some(b)) = (&output.metric_image_to_text, &output.metric_text_to_image) {
        write_report_files(&eval_dir, a, "metric")?;
        write_report_files(&eval_dir, b, "metric")?;
    }
    write_atomic(
        &eval_dir.join("map_summary.txt"),
        &render_map_summary(&output),
    )?;
    Ok(output)
}

#[derive(Debug, Clone)]
struct RunSummary {
    name: String,
    skip_pretrain: bool,
    cosine: [f64; 3],
    metric: Option<[f64; 3]>,
}

fn parse_map_summary(content: &str, path: &Path) -> Result<([f64; 3], Option<[f64; 3]>)> {
    let mut cosine = [f64::NAN; 3];
    let mut metric = [None; 3];
    for (i, line) in content.lines().skip(1).enumerate() {
        if i >= 3 {
            break;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: format!("bad summary line {line:?}"),
            });
        }
        cosine[i] = fields[1].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: format!("bad cosine MAP {:?}", fields[1]),
        })?;
        metric[i] = fields[2].parse().ok();
    }
    let metric = match metric {
        [Some(a), Some(b), Some(c)] => Some([a, b, c]),
        _ => None,
    };
    Ok((cosine, metric))
}

/// Builds the comparison tables from all completed runs under `root`:
/// cosine vs metric network per run, and with- vs without-pretrain when both
/// arms are present.
pub fn run_report(root: &Path) -> Result<String> {
    let mut runs = Vec::new();
    let mut candidates: Vec<PathBuf> = vec![root.to_path_buf()];
    if let Ok(entries) = fs::read_dir(root) {
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        candidates.extend(dirs);
    }
    for dir in candidates {
        let manifest_path = dir.join("run_manifest.toml");
        let summary_path = dir.join("eval").join("map_summary.txt");
        if !manifest_path.exists() || !summary_path.exists() {
            continue;
        }
        let manifest: RunManifest = toml::from_str(
            &fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
        )
        .map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            line: 0,
            message: e.message().to_string(),
        })?;
        let content = fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        let (cosine, metric) = parse_map_summary(&content, &summary_path)?;
        runs.push(RunSummary {
            name: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| ".".into()),
            skip_pretrain: manifest.config.skip_pretrain,
            cosine,
            metric,
        });
    }
    if runs.is_empty() {
        return Err(Error::Usage(format!(
            "no completed runs (run_manifest.toml + eval/map_summary.txt) under {}",
            root.display()
        )));
    }

    let mut out = String::new();
    out.push_str("Similarity metric comparison (MAP)\n");
    out.push_str("run                         task         cosine    metric_network  flag\n");
    for run in &runs {
        for (i, task) in ["Image->Text", "Text->Image", "Average"].iter().enumerate() {
            let metric = run.metric.map(|m| m[i]);
            let flag = match metric {
                Some(m) if m < run.cosine[i] => "metric_below_cosine",
                Some(_) => "",
                None => "baseline_only",
            };
            out.push_str(&format!(
                "{:<27} {:<12} {:<9.4} {:<15} {}\n",
                run.name,
                task,
                run.cosine[i],
                metric
                    .map(|m| format!("{m:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
                flag,
            ));
        }
    }

    let with: Vec<&RunSummary> = runs
        .iter()
        .filter(|r| !r.skip_pretrain && r.metric.is_some())
        .collect();
    let without: Vec<&RunSummary> = runs
        .iter()
        .filter(|r| r.skip_pretrain && r.metric.is_some())
        .collect();
    out.push('\n');
    if with.is_empty() || without.is_empty() {
        out.push_str("Pretraining comparison: only one arm present, table omitted\n");
    } else {
        let mean = |rs: &[&RunSummary], i: usize| {
            rs.iter().map(|r| r.metric.unwrap()[i]).sum::<f64>() / rs.len() as f64
        };
        out.push_str("Pretraining comparison (metric-network MAP, averaged over runs)\n");
        out.push_str("task         with_pretrain  without_pretrain\n");
        for (i, task) in ["Image->Text", "Text->Image", "Average"].iter().enumerate() {
            out.push_str(&format!(
                "{:<12} {:<14.4} {:<16.4}\n",
                task,
                mean(&with, i),
                mean(&without, i)
            ));
        }
    }
    Ok(out)
}

/// Writes a synthetic dataset to disk: the two feature files, the split
/// assignments, and a manifest referencing them.
pub fn run_synth(config: &PipelineConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    let synth = config
        .dataset
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("synth requires a synthetic dataset config".into()))?;
    let mut dataset = generate_synthetic(synth)?;
    let counts = data::fractions_to_counts(config.split_fractions, dataset.doc_count())?;
    data::split_dataset(
        &mut dataset,
        counts,
        &mut SeededRng::new(config.seed).child("split"),
    )?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    data::save_features(
        &out_dir.join("images.features"),
        &dataset.images,
        Modality::Image,
    )?;
    data::save_features(
        &out_dir.join("texts.features"),
        &dataset.texts,
        Modality::Text,
    )?;
    write_atomic(
        &out_dir.join("splits.csv"),
        &data::manifest::render_splits(&dataset.splits),
    )?;
    let manifest = crate::data::DatasetManifest {
        image_features: "images.features".into(),
        text_features: "texts.features".into(),
        classes: (0..synth.classes).map(|c| format!("class{c}")).collect(),
        splits_file: Some("splits.csv".into()),
        split_seed: None,
        split_fractions: None,
    };
    manifest.save(&out_dir.join("dataset.toml"))
}
