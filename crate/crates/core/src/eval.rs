//! Retrieval evaluation: ranking, AP/MAP over the full returned list, PR
//! curves, and the cosine-similarity baseline on the shared representation.

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::nn::matrix::{dot, Matrix};
use crate::pathway::SharedRepresentation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ImageToText,
    TextToImage,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::ImageToText => "Image->Text",
            Task::TextToImage => "Text->Image",
        }
    }

    pub fn query_modality(self) -> Modality {
        match self {
            Task::ImageToText => Modality::Image,
            Task::TextToImage => Modality::Text,
        }
    }
}

/// A ranked gallery for one query: descending score, ties broken by ascending
/// gallery index.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub relevance: Vec<bool>,
}

pub fn rank_gallery(
    scores: &[f64],
    gallery_labels: &[usize],
    query_label: usize,
) -> Result<Ranking> {
    if scores.len() != gallery_labels.len() {
        return Err(Error::shape(
            "rank_gallery",
            format!("{} labels", scores.len()),
            format!("{} labels", gallery_labels.len()),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score in rank_gallery".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let relevance = order
        .iter()
        .map(|&i| gallery_labels[i] == query_label)
        .collect();
    Ok(Ranking { order, relevance })
}

/// AP = (1/M) sum_k P_k * Rel_k over the full list; 0 when no item is
/// relevant.
pub fn average_precision(ranking: &Ranking) -> f64 {
    let relevant_total = ranking.relevance.iter().filter(|r| **r).count();
    if relevant_total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in ranking.relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / relevant_total as f64
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::Usage("MAP over an empty query set".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// One point per rank: (recall = hits_k / M, precision = hits_k / k).
pub fn pr_curve(ranking: &Ranking) -> Vec<(f64, f64)> {
    let relevant_total = ranking.relevance.iter().filter(|r| **r).count();
    if relevant_total == 0 {
        return Vec::new();
    }
    let mut hits = 0usize;
    let mut points = Vec::with_capacity(ranking.relevance.len());
    for (k, &rel) in ranking.relevance.iter().enumerate() {
        if rel {
            hits += 1;
        }
        points.push((
            hits as f64 / relevant_total as f64,
            hits as f64 / (k + 1) as f64,
        ));
    }
    points
}

/// Fixed recall grid used when averaging per-query PR curves for reporting.
pub fn recall_grid() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 100.0).collect()
}

/// Per-query curves interpolated onto the fixed recall grid and averaged:
/// the precision at recall r is the precision at the first rank whose recall
/// reaches r. Queries without relevant items are excluded and counted.
pub fn average_pr_curves(curves: &[Vec<(f64, f64)>]) -> (Vec<(f64, f64)>, usize) {
    let grid = recall_grid();
    let mut sums = vec![0.0; grid.len()];
    let mut used = 0usize;
    let mut skipped = 0usize;
    for curve in curves {
        if curve.is_empty() {
            skipped += 1;
            continue;
        }
        used += 1;
        for (gi, &r) in grid.iter().enumerate() {
            let p = curve
                .iter()
                .find(|(recall, _)| *recall >= r - 1e-12)
                .map(|(_, precision)| *precision)
                .unwrap_or(0.0);
            sums[gi] += p;
        }
    }
    let averaged = grid
        .iter()
        .zip(&sums)
        .map(|(&r, &s)| (r, if used > 0 { s / used as f64 } else { 0.0 }))
        .collect();
    (averaged, skipped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub task: Task,
    pub per_query_ap: Vec<f64>,
    pub map: f64,
    /// Averaged PR points on the fixed recall grid.
    pub pr_points: Vec<(f64, f64)>,
    pub skipped_queries: usize,
}

/// Evaluates one task given a full score matrix (queries x gallery).
pub fn evaluate_task(
    task: Task,
    scores: &Matrix,
    query_labels: &[usize],
    gallery_labels: &[usize],
) -> Result<RetrievalReport> {
    if scores.rows() != query_labels.len() || scores.cols() != gallery_labels.len() {
        return Err(Error::shape(
            "evaluate_task",
            format!("{}x{} scores", query_labels.len(), gallery_labels.len()),
            format!("{}x{}", scores.rows(), scores.cols()),
        ));
    }
    let mut per_query_ap = Vec::with_capacity(scores.rows());
    let mut curves = Vec::with_capacity(scores.rows());
    for q in 0..scores.rows() {
        let ranking = rank_gallery(scores.row(q), gallery_labels, query_labels[q])?;
        per_query_ap.push(average_precision(&ranking));
        curves.push(pr_curve(&ranking));
    }
    let map = mean_average_precision(&per_query_ap)?;
    let (pr_points, skipped_queries) = average_pr_curves(&curves);
    Ok(RetrievalReport {
        task,
        per_query_ap,
        map,
        pr_points,
        skipped_queries,
    })
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        // zero-norm rows score 0 (flagged by the caller)
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Both retrieval tasks scored by cosine similarity on the shared
/// representation. Returns (Image->Text report, Text->Image report,
/// zero-norm row count).
pub fn cosine_baseline(
    representation: &SharedRepresentation,
) -> Result<(RetrievalReport, RetrievalReport, usize)> {
    let img = &representation.image_embeddings;
    let txt = &representation.text_embeddings;
    let mut zero_norm = 0usize;
    for r in 0..img.rows() {
        if dot(img.row(r), img.row(r)) == 0.0 {
            zero_norm += 1;
        }
    }
    for r in 0..txt.rows() {
        if dot(txt.row(r), txt.row(r)) == 0.0 {
            zero_norm += 1;
        }
    }
    let mut i2t = Matrix::zeros(img.rows(), txt.rows());
    for r in 0..img.rows() {
        for c in 0..txt.rows() {
            i2t.set(r, c, cosine_similarity(img.row(r), txt.row(c)));
        }
    }
    let t2i = i2t.transpose();
    let image_to_text = evaluate_task(
        Task::ImageToText,
        &i2t,
        &representation.image_labels,
        &representation.text_labels,
    )?;
    let text_to_image = evaluate_task(
        Task::TextToImage,
        &t2i,
        &representation.text_labels,
        &representation.image_labels,
    )?;
    Ok((image_to_text, text_to_image, zero_norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking_from(relevance: &[u8]) -> Ranking {
        Ranking {
            order: (0..relevance.len()).collect(),
            relevance: relevance.iter().map(|&r| r == 1).collect(),
        }
    }

    #[test]
    fn rank_orders_by_score_then_index() {
        let r = rank_gallery(&[0.9, 0.1, 0.5], &[0, 0, 0], 0).unwrap();
        assert_eq!(r.order, vec![0, 2, 1]);
        let tied = rank_gallery(&[0.5, 0.5, 0.5, 0.5], &[0, 1, 0, 1], 0).unwrap();
        assert_eq!(tied.order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn nan_score_rejected() {
        assert!(rank_gallery(&[0.1, f64::NAN], &[0, 1], 0).is_err());
    }

    #[test]
    fn rank_is_permutation_equivariant() {
        let scores = [0.3, 0.9, 0.1, 0.7];
        let labels = [1usize, 0, 1, 0];
        let base = rank_gallery(&scores, &labels, 0).unwrap();
        // permute gallery, rank, then map indices back
        let perm = [2usize, 0, 3, 1];
        let p_scores: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let p_labels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let permuted = rank_gallery(&p_scores, &p_labels, 0).unwrap();
        let unmapped: Vec<usize> = permuted.order.iter().map(|&i| perm[i]).collect();
        assert_eq!(unmapped, base.order);
        assert_eq!(permuted.relevance, base.relevance);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&ranking_from(&[1, 1, 0, 0])), 1.0);
        let ap = average_precision(&ranking_from(&[1, 0, 1]));
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&ranking_from(&[0, 1])), 0.5);
        assert_eq!(average_precision(&ranking_from(&[0, 0])), 0.0);
    }

    #[test]
    fn map_examples() {
        assert_eq!(mean_average_precision(&[0.7]).unwrap(), 0.7);
        assert_eq!(mean_average_precision(&[1.0, 0.5]).unwrap(), 0.75);
        assert!(mean_average_precision(&[]).is_err());
    }

    #[test]
    fn pr_curve_examples() {
        assert_eq!(
            pr_curve(&ranking_from(&[1, 1])),
            vec![(0.5, 1.0), (1.0, 1.0)]
        );
        assert_eq!(
            pr_curve(&ranking_from(&[0, 1])),
            vec![(0.0, 0.0), (1.0, 0.5)]
        );
        let curve = pr_curve(&ranking_from(&[0, 1, 0, 1, 0]));
        assert_eq!(curve.last().unwrap().0, 1.0);
        // precision at full recall equals M / n
        assert_eq!(curve.last().unwrap().1, 2.0 / 5.0);
    }

    #[test]
    fn ap_is_one_iff_relevant_first() {
        assert_eq!(average_precision(&ranking_from(&[1, 1, 1, 0])), 1.0);
        assert!(average_precision(&ranking_from(&[1, 0, 1, 0])) < 1.0);
    }

    #[test]
    fn ranking_invariant_under_monotone_transform() {
        let scores = [0.12, 0.7, 0.33, 0.99, 0.5];
        let labels = [0usize, 1, 0, 1, 0];
        let base = rank_gallery(&scores, &labels, 1).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (s * 3.0).exp() + 1.0).collect();
        let after = rank_gallery(&transformed, &labels, 1).unwrap();
        assert_eq!(base, after);
    }

    #[test]
    fn cosine_properties() {
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        let a = [0.3, -0.7];
        let b = [1.1, 0.4];
        let scaled: Vec<f64> = b.iter().map(|v| v * 7.5).collect();
        assert!((cosine_similarity(&a, &b) - cosine_similarity(&a, &scaled)).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn cosine_baseline_ranks_own_pair_first_on_identical_sets() {
        let emb = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let rep = SharedRepresentation {
            image_embeddings: emb.clone(),
            text_embeddings: emb,
            image_labels: vec![0, 1, 2],
            text_labels: vec![0, 1, 2],
            doc_ids: vec![0, 1, 2],
        };
        let (i2t, _, zero_norm) = cosine_baseline(&rep).unwrap();
        assert_eq!(zero_norm, 0);
        assert_eq!(i2t.map, 1.0);
    }

    #[test]
    fn random_scores_give_chance_level_map() {
        // balanced 10-class gallery of 1000, 100 queries: MAP ~ 0.1
        use rand::Rng as _;
        let mut rng = crate::nn::SeededRng::new(77);
        let gallery_labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let mut aps = Vec::new();
        for q in 0..100 {
            let scores: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1.0)).collect();
            let ranking = rank_gallery(&scores, &gallery_labels, q % 10).unwrap();
            aps.push(average_precision(&ranking));
        }
        let map = mean_average_precision(&aps).unwrap();
        assert!((map - 0.1).abs() < 0.03, "map = {map}");
    }
}
