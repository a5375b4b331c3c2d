//! Train-versus-generated comparison: ingredient counts, marginals, phi correlations and
//! mean weights.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bitmask::BitMask;
use crate::error::{Error, Result};
use crate::vocab::Recipe;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub support: usize,
    /// Fraction of recipes with k ingredients, k = 0..=n.
    pub count_histogram: Vec<f64>,
    pub marginals: Vec<f64>,
    /// Phi coefficients; `None` where an ingredient has zero variance.
    pub corr: Vec<Vec<Option<f64>>>,
    /// Mean grams given presence; `None` for never-present ingredients or mask-only input.
    pub mean_weights: Vec<Option<f64>>,
}

impl DistributionSummary {
    pub fn n(&self) -> usize {
        self.marginals.len()
    }

    /// Expected grams per recipe, marginal × conditional mean.
    pub fn total_weight(&self, i: usize) -> f64 {
        self.mean_weights[i].map_or(0.0, |w| w * self.marginals[i])
    }
}

/// Statistics of full recipes.
pub fn summarize(samples: &[Recipe]) -> Result<DistributionSummary> {
    let masks: Vec<&BitMask> = samples.iter().map(|r| &r.mask).collect();
    let mut summary = summarize_refs(&masks)?;
    let n = summary.n();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for r in samples {
        for i in 0..n {
            if r.mask.get(i) {
                sums[i] += r.weights_grams[i];
                counts[i] += 1;
            }
        }
    }
    summary.mean_weights = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(summary)
}

/// Statistics of masks alone; mean weights are all `None`.
pub fn summarize_masks(masks: &[BitMask]) -> Result<DistributionSummary> {
    summarize_refs(&masks.iter().collect::<Vec<_>>())
}

fn summarize_refs(masks: &[&BitMask]) -> Result<DistributionSummary> {
    let first = masks.first().ok_or(Error::EmptyInput("no samples to summarize"))?;
    let n = first.len();
    if let Some(m) = masks.iter().find(|m| m.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: m.len(),
        });
    }
    let total = masks.len() as f64;
    let mut hist = vec![0.0; n + 1];
    let mut ones = vec![0.0; n];
    let mut joint = vec![vec![0.0; n]; n];
    for m in masks {
        let on: Vec<usize> = (0..n).filter(|&i| m.get(i)).collect();
        hist[on.len()] += 1.0;
        for &i in &on {
            ones[i] += 1.0;
            for &j in &on {
                joint[i][j] += 1.0;
            }
        }
    }
    let marginals: Vec<f64> = ones.iter().map(|c| c / total).collect();
    let mut corr = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let (pi, pj) = (marginals[i], marginals[j]);
            let var = pi * (1.0 - pi) * pj * (1.0 - pj);
            let v = if var <= 0.0 {
                None
            } else if i == j {
                Some(1.0)
            } else {
                Some(((joint[i][j] / total - pi * pj) / var.sqrt()).clamp(-1.0, 1.0))
            };
            corr[i][j] = v;
            corr[j][i] = v;
        }
    }
    Ok(DistributionSummary {
        support: masks.len(),
        count_histogram: hist.iter().map(|c| c / total).collect(),
        marginals,
        corr,
        mean_weights: vec![None; n],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    /// Ingredients (by training frequency) whose correlations enter the agreement score.
    pub corr_top: usize,
    /// Ingredients (by training total weight) whose mean weights are compared; `None` for all.
    pub weight_top: Option<usize>,
    /// Only compare mean weights of ingredients present in at least this training fraction.
    pub weight_min_presence: f64,
    pub rare: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            corr_top: 50,
            weight_top: Some(10),
            weight_min_presence: 0.0,
            rare: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngredientGap {
    pub id: usize,
    pub train: f64,
    pub generated: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightError {
    pub id: usize,
    pub train_grams: f64,
    pub generated_grams: Option<f64>,
    /// |generated − train| / train; `None` when the ingredient was never generated.
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub train_support: usize,
    pub generated_support: usize,
    pub max_marginal_gap: f64,
    pub count_histogram_tv: f64,
    /// Pearson r between defined off-diagonal phi entries; `None` if fewer than two pairs
    /// are defined in both or either side is constant.
    pub corr_r: Option<f64>,
    pub corr_pairs: usize,
    pub weight_errors: Vec<WeightError>,
    /// Largest relative error; infinite if a compared ingredient was never generated.
    pub max_weight_error: Option<f64>,
    pub rare_gaps: Vec<IngredientGap>,
}

pub fn compare(train: &DistributionSummary, generated: &DistributionSummary) -> Result<ComparisonReport> {
    compare_with(train, generated, &CompareOptions::default())
}

pub fn compare_with(
    train: &DistributionSummary,
    generated: &DistributionSummary,
    options: &CompareOptions,
) -> Result<ComparisonReport> {
    let n = train.n();
    if generated.n() != n {
        return Err(Error::VocabularyMismatch(format!(
            "training summary has {n} ingredients, generated has {}",
            generated.n()
        )));
    }
    let gap = |i: usize| (generated.marginals[i] - train.marginals[i]).abs();
    let max_marginal_gap = (0..n).map(gap).fold(0.0, f64::max);
    let count_histogram_tv = 0.5
        * train
            .count_histogram
            .iter()
            .zip(&generated.count_histogram)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();

    // Most frequent first, ties by id.
    let mut by_freq: Vec<usize> = (0..n).collect();
    by_freq.sort_by(|&a, &b| train.marginals[b].total_cmp(&train.marginals[a]).then(a.cmp(&b)));
    let top: Vec<usize> = by_freq.iter().copied().take(options.corr_top).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &i) in top.iter().enumerate() {
        for &j in &top[k + 1..] {
            if let (Some(a), Some(b)) = (train.corr[i][j], generated.corr[i][j]) {
                xs.push(a);
                ys.push(b);
            }
        }
    }
    let corr_r = pearson(&xs, &ys);

    let mut by_weight: Vec<usize> = (0..n)
        .filter(|&i| train.mean_weights[i].is_some() && train.marginals[i] >= options.weight_min_presence)
        .collect();
    by_weight.sort_by(|&a, &b| train.total_weight(b).total_cmp(&train.total_weight(a)).then(a.cmp(&b)));
    if let Some(k) = options.weight_top {
        by_weight.truncate(k);
    }
    let weight_errors: Vec<WeightError> = by_weight
        .iter()
        .map(|&i| {
            let t = train.mean_weights[i].expect("filtered to present ingredients");
            let g = generated.mean_weights[i];
            WeightError {
                id: i,
                train_grams: t,
                generated_grams: g,
                relative_error: g.map(|g| (g - t).abs() / t.abs().max(f64::MIN_POSITIVE)),
            }
        })
        .collect();
    let max_weight_error = if weight_errors.is_empty() {
        None
    } else {
        Some(
            weight_errors
                .iter()
                .map(|e| e.relative_error.unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max),
        )
    };

    let rare_gaps = by_freq
        .iter()
        .rev()
        .take(options.rare)
        .map(|&i| IngredientGap {
            id: i,
            train: train.marginals[i],
            generated: generated.marginals[i],
            gap: gap(i),
        })
        .collect();

    Ok(ComparisonReport {
        train_support: train.support,
        generated_support: generated.support,
        max_marginal_gap,
        count_histogram_tv,
        corr_r,
        corr_pairs: xs.len(),
        weight_errors,
        max_weight_error,
        rare_gaps,
    })
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Writes counts.csv, marginals.csv, corr_train.csv, corr_generated.csv, weights.csv and
/// report.json into `dir`.
pub fn write_outputs(
    dir: &Path,
    names: &[String],
    train: &DistributionSummary,
    generated: &DistributionSummary,
    report: &ComparisonReport,
) -> Result<()> {
    let n = train.n();
    if names.len() != n || generated.n() != n {
        return Err(Error::VocabularyMismatch(format!(
            "{} names for summaries of size {n} and {}",
            names.len(),
            generated.n()
        )));
    }
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("counts.csv"))?;
    w.write_record(["ingredients", "train", "generated"])?;
    for k in 0..=n {
        w.write_record([
            k.to_string(),
            fmt(train.count_histogram[k]),
            fmt(generated.count_histogram[k]),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("marginals.csv"))?;
    w.write_record(["id", "name", "train", "generated", "gap"])?;
    for (i, name) in names.iter().enumerate().take(n) {
        w.write_record([
            i.to_string(),
            name.clone(),
            fmt(train.marginals[i]),
            fmt(generated.marginals[i]),
            fmt((generated.marginals[i] - train.marginals[i]).abs()),
        ])?;
    }
    w.flush()?;

    for (file, summary) in [("corr_train.csv", train), ("corr_generated.csv", generated)] {
        let mut w = csv::Writer::from_path(dir.join(file))?;
        // The corner cell names the statistic; empty cells are undefined (zero variance).
        w.write_record(std::iter::once("phi".to_string()).chain(names.iter().cloned()))?;
        for (i, row) in summary.corr.iter().enumerate() {
            w.write_record(
                std::iter::once(names[i].clone()).chain(row.iter().map(|v| v.map(fmt).unwrap_or_default())),
            )?;
        }
        w.flush()?;
    }

    let mut w = csv::Writer::from_path(dir.join("weights.csv"))?;
    w.write_record([
        "id",
        "name",
        "train_mean_grams",
        "generated_mean_grams",
        "relative_error",
    ])?;
    for (i, name) in names.iter().enumerate().take(n) {
        let rel = match (train.mean_weights[i], generated.mean_weights[i]) {
            (Some(t), Some(g)) if t != 0.0 => fmt((g - t).abs() / t.abs()),
            _ => String::new(),
        };
        w.write_record([
            i.to_string(),
            name.clone(),
            train.mean_weights[i].map(fmt).unwrap_or_default(),
            generated.mean_weights[i].map(fmt).unwrap_or_default(),
            rel,
        ])?;
    }
    w.flush()?;

    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::three_ingredient_fixture;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn masks(rows: &[&[u8]]) -> Vec<BitMask> {
        rows.iter().map(|r| BitMask::new(r.to_vec()).unwrap()).collect()
    }

    #[test]
    fn fixture_marginals() {
        let d = three_ingredient_fixture();
        let s = summarize(&d.recipes).unwrap();
        assert_eq!(s.marginals, vec![1.0, 1.0, 0.5]);
        assert_eq!(s.count_histogram, vec![0.0, 0.0, 0.5, 0.5]);
        assert_eq!(s.mean_weights, vec![Some(55.0), Some(45.0), Some(14.0)]);
        assert_eq!(s.corr[0][2], None);
        assert_eq!(s.corr[2][2], Some(1.0));
    }

    #[test]
    fn identical_recipes_have_no_defined_correlation() {
        let s = summarize_masks(&masks(&[&[1, 0, 1], &[1, 0, 1], &[1, 0, 1]])).unwrap();
        assert!(s.corr.iter().flatten().all(Option::is_none));
        assert_eq!(s.count_histogram, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn anticorrelated_pair_has_phi_minus_one() {
        let s = summarize_masks(&masks(&[&[1, 0], &[0, 1]])).unwrap();
        assert_eq!(s.corr[0][1], Some(-1.0));
        assert_eq!(s.corr[1][0], Some(-1.0));
    }

    #[test]
    fn phi_matches_contingency_table() {
        let rows = masks(&[&[1, 1], &[1, 0], &[1, 1], &[0, 0], &[0, 1], &[1, 1]]);
        let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
        for m in &rows {
            match (m.get(0), m.get(1)) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
        let phi = (a * d - b * c) / f64::sqrt((a + b) * (c + d) * (a + c) * (b + d));
        let s = summarize_masks(&rows).unwrap();
        assert_abs_diff_eq!(s.corr[0][1].unwrap(), phi, epsilon = 1e-12);
    }

    #[test]
    fn empty_input_errors() {
        assert!(matches!(summarize(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn shifted_marginal_is_the_max_gap() {
        let train = summarize_masks(&masks(&[&[1, 0, 1], &[0, 1, 1], &[1, 1, 0], &[0, 0, 1], &[1, 0, 0]])).unwrap();
        let mut generated = train.clone();
        generated.marginals[1] += 0.1;
        let r = compare(&train, &generated).unwrap();
        assert_abs_diff_eq!(r.max_marginal_gap, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn vocabulary_mismatch_errors() {
        let a = summarize_masks(&masks(&[&[1, 0]])).unwrap();
        let b = summarize_masks(&masks(&[&[1, 0, 1]])).unwrap();
        assert!(matches!(compare(&a, &b), Err(Error::VocabularyMismatch(_))));
    }

    #[test]
    fn outputs_are_written() {
        let d = three_ingredient_fixture();
        let s = summarize(&d.recipes).unwrap();
        let r = compare(&s, &s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = d.vocabulary.names().map(String::from).collect();
        write_outputs(dir.path(), &names, &s, &s, &r).unwrap();
        for f in [
            "counts.csv",
            "marginals.csv",
            "corr_train.csv",
            "corr_generated.csv",
            "weights.csv",
            "report.json",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let corr = fs::read_to_string(dir.path().join("corr_train.csv")).unwrap();
        assert!(corr.starts_with("phi,bun,patty,cheese"));
    }

    fn mask_set() -> impl Strategy<Value = Vec<BitMask>> {
        (1usize..6).prop_flat_map(|n| {
            prop::collection::vec(prop::collection::vec(0u8..2, n), 2..30)
                .prop_map(|rows| rows.into_iter().map(|r| BitMask::new(r).unwrap()).collect())
        })
    }

    proptest! {
        #[test]
        fn self_comparison_is_identity(ms in mask_set()) {
            let s = summarize_masks(&ms).unwrap();
            let r = compare(&s, &s).unwrap();
            prop_assert_eq!(r.max_marginal_gap, 0.0);
            prop_assert_eq!(r.count_histogram_tv, 0.0);
            if let Some(c) = r.corr_r {
                prop_assert!((c - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn correlations_bounded_and_symmetric(ms in mask_set()) {
            let s = summarize_masks(&ms).unwrap();
            for i in 0..s.n() {
                prop_assert!((0.0..=1.0).contains(&s.marginals[i]));
                for j in 0..s.n() {
                    prop_assert_eq!(s.corr[i][j], s.corr[j][i]);
                    if let Some(v) = s.corr[i][j] {
                        prop_assert!((-1.0..=1.0).contains(&v));
                    }
                }
            }
        }

        #[test]
        fn permutation_invariant(ms in mask_set(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = ms.clone();
            shuffled.shuffle(&mut crate::rng::stream(seed, 0));
            let a = summarize_masks(&ms).unwrap();
            let b = summarize_masks(&shuffled).unwrap();
            prop_assert_eq!(a.marginals, b.marginals);
            prop_assert_eq!(a.count_histogram, b.count_histogram);
            for (ra, rb) in a.corr.iter().zip(&b.corr) {
                for (x, y) in ra.iter().zip(rb) {
                    match (x, y) {
                        (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                        (None, None) => {}
                        _ => prop_assert!(false, "definedness differs"),
                    }
                }
            }
        }
    }
}
