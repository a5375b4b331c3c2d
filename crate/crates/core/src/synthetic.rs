//! Synthetic recipe corpus with known structure, for checking learned models.
//!
//! Recipes are drawn from a few latent styles. Each style has its own presence
//! probabilities; on top of that some ingredient pairs are planted to always co-occur and
//! others to exclude each other. Weights are a per-ingredient base amount (log-uniform)
//! times lognormal noise.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::vocab::{normalize_weights, Dataset, Ingredient, IngredientVocabulary, NormalizationMode, Recipe};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub recipes: usize,
    pub styles: usize,
    /// Pairs forced to appear together: the second follows the first.
    pub together: Vec<(usize, usize)>,
    /// Pairs that never appear together: the second is dropped when the first is present.
    pub exclusive: Vec<(usize, usize)>,
    pub base_grams: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 20 ingredients, 200 recipes, 3 styles, two co-occurring and two exclusive pairs.
    fn default() -> Self {
        Self {
            n: 20,
            recipes: 200,
            styles: 3,
            together: vec![(0, 1), (2, 3)],
            exclusive: vec![(4, 5), (6, 7)],
            base_grams: (5.0, 150.0),
            noise_sigma: 0.15,
            seed: 2024,
        }
    }
}

/// Builds the corpus and normalizes it per ingredient.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.recipes == 0 || spec.styles == 0 {
        return Err(Error::InvalidParameter(
            "synthetic corpus needs n, recipes and styles > 0".into(),
        ));
    }
    let (lo, hi) = spec.base_grams;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidParameter(format!(
            "base gram range ({lo}, {hi}) is invalid"
        )));
    }
    for &(a, b) in spec.together.iter().chain(&spec.exclusive) {
        if a >= spec.n || b >= spec.n || a == b {
            return Err(Error::InvalidParameter(format!(
                "pair ({a}, {b}) is invalid for n={}",
                spec.n
            )));
        }
    }
    let noise =
        LogNormal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidParameter(format!("noise sigma: {e}")))?;

    let mut rng = stream(derive_seed(spec.seed, "synthetic-structure"), 0);
    let base: Vec<f64> = (0..spec.n)
        .map(|_| (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp())
        .collect();
    // Each style is sparse: a handful of likely ingredients over a low background rate.
    let presence: Vec<Vec<f64>> = (0..spec.styles)
        .map(|_| {
            (0..spec.n)
                .map(|_| {
                    if rng.gen::<f64>() < 0.35 {
                        0.6 + 0.35 * rng.gen::<f64>()
                    } else {
                        0.05 + 0.15 * rng.gen::<f64>()
                    }
                })
                .collect()
        })
        .collect();

    let mut rng = stream(derive_seed(spec.seed, "synthetic-recipes"), 0);
    let mut recipes = Vec::with_capacity(spec.recipes);
    while recipes.len() < spec.recipes {
        let style = &presence[rng.gen_range(0..spec.styles)];
        let mut on: Vec<bool> = style.iter().map(|&p| rng.gen::<f64>() < p).collect();
        for &(a, b) in &spec.together {
            on[b] = on[a];
        }
        for &(a, b) in &spec.exclusive {
            if on[a] {
                on[b] = false;
            }
        }
        if !on.iter().any(|&b| b) {
            continue;
        }
        let grams = on
            .iter()
            .zip(&base)
            .map(|(&present, &g)| if present { g * noise.sample(&mut rng) } else { 0.0 })
            .collect();
        recipes.push(Recipe::from_grams(format!("synthetic-{:03}", recipes.len()), grams)?);
    }
    let vocabulary = IngredientVocabulary::new(
        (0..spec.n)
            .map(|id| Ingredient {
                id,
                name: format!("ingredient-{id:02}"),
                reference_weight: None,
            })
            .collect(),
    )?;
    normalize_weights(
        Dataset::new(vocabulary, recipes)?,
        NormalizationMode::PerIngredientStats,
    )
}
