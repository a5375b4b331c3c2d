//! Ingredient vocabulary, recipe ingestion and weight normalization.
//!
//! Two line-oriented input formats are accepted:
//!
//! * JSONL, one recipe per line: `{"name": "...", "ingredients": [{"name": "bun", "grams": 55}]}`
//! * CSV with header `recipe,ingredient,grams`, one row per ingredient. Consecutive rows
//!   sharing a recipe name form one recipe.
//!
//! Ingredient ids follow first appearance in the file; ingredients first seen in the same
//! recipe are ordered by case-folded name. Zero-gram entries count as absent.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bitmask::BitMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ingredient {
    pub id: usize,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_weight: Option<f64>,
}

/// Ordered ingredient list; defines the dimension `n` of masks and weight vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Ingredient>", into = "Vec<Ingredient>")]
pub struct IngredientVocabulary {
    entries: Vec<Ingredient>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

fn fold(name: &str) -> String {
    name.trim().to_lowercase()
}

impl IngredientVocabulary {
    pub fn new(entries: Vec<Ingredient>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.id != i {
                return Err(Error::InvalidParameter(format!(
                    "ingredient ids must be dense: entry {i} has id {}",
                    e.id
                )));
            }
            if let Some(w) = e.reference_weight {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "reference weight for '{}' must be positive, got {w}",
                        e.name
                    )));
                }
            }
            if lookup.insert(fold(&e.name), i).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate ingredient name '{}'",
                    e.name
                )));
            }
        }
        Ok(Self { entries, lookup })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(id, n)| Ingredient {
                    id,
                    name: n.as_ref().trim().to_string(),
                    reference_weight: None,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Ingredient] {
        &self.entries
    }

    pub fn name(&self, id: usize) -> &str {
        &self.entries[id].name
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Case- and whitespace-insensitive lookup.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup.get(&fold(name)).copied()
    }

    pub fn set_reference_weight(&mut self, name: &str, grams: f64) -> Result<()> {
        let id = self
            .index_of(name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown ingredient '{name}'")))?;
        if !(grams > 0.0 && grams.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "reference weight for '{name}' must be positive, got {grams}"
            )));
        }
        self.entries[id].reference_weight = Some(grams);
        Ok(())
    }
}

impl TryFrom<Vec<Ingredient>> for IngredientVocabulary {
    type Error = Error;

    fn try_from(entries: Vec<Ingredient>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<IngredientVocabulary> for Vec<Ingredient> {
    fn from(v: IngredientVocabulary) -> Self {
        v.entries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub name: String,
    pub mask: BitMask,
    pub weights_grams: Vec<f64>,
}

impl Recipe {
    /// Builds the mask from the weights: present iff grams > 0.
    pub fn from_grams(name: impl Into<String>, weights_grams: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if let Some(w) = weights_grams.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "recipe '{name}': weight {w} is negative or not finite"
            )));
        }
        let mask = BitMask::from_bools(weights_grams.iter().map(|&w| w > 0.0));
        Ok(Self {
            name,
            mask,
            weights_grams,
        })
    }

    pub fn n(&self) -> usize {
        self.weights_grams.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// `w = raw / reference - 1` on every coordinate.
    Reference,
    /// `w = raw / mean_present - 1` on present coordinates, 0 on absent ones.
    PerIngredientStats,
}

/// Per-ingredient affine map between grams and dimensionless weights:
/// `w = raw / scale - offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mode: NormalizationMode,
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl Normalization {
    /// Value given to absent coordinates in per-ingredient mode.
    pub const ABSENT_SENTINEL: f64 = 0.0;

    pub fn n(&self) -> usize {
        self.scale.len()
    }

    pub fn normalize(&self, grams: &[f64], mask: &BitMask) -> Vec<f64> {
        grams
            .iter()
            .enumerate()
            .map(|(i, &g)| match self.mode {
                NormalizationMode::PerIngredientStats if !mask.get(i) => Self::ABSENT_SENTINEL,
                _ => g / self.scale[i] - self.offset[i],
            })
            .collect()
    }

    /// Inverse of [`Normalization::normalize`]; absent coordinates map to 0 g.
    pub fn denormalize(&self, w: &[f64], mask: &BitMask) -> Vec<f64> {
        w.iter()
            .enumerate()
            .map(|(i, &v)| {
                if mask.get(i) {
                    (v + self.offset[i]) * self.scale[i]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Normalize every coordinate with the affine map, ignoring presence.
    pub fn from_grams(&self, grams: &[f64]) -> Vec<f64> {
        grams
            .iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(&g, (&s, &o))| g / s - o)
            .collect()
    }

    /// Denormalize every coordinate, ignoring presence. Used for raw-gram hit tests.
    pub fn to_grams(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(&v, (&s, &o))| (v + o) * s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub vocabulary: IngredientVocabulary,
    pub recipes: Vec<Recipe>,
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(vocabulary: IngredientVocabulary, recipes: Vec<Recipe>) -> Result<Self> {
        if recipes.is_empty() {
            return Err(Error::NoRecipes);
        }
        let n = vocabulary.len();
        for r in &recipes {
            if r.n() != n || r.mask.len() != n {
                return Err(Error::VocabularyMismatch(format!(
                    "recipe '{}' has {} entries, vocabulary has {n}",
                    r.name,
                    r.n()
                )));
            }
        }
        Ok(Self {
            vocabulary,
            recipes,
            normalization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn len(&self) -> usize {
        self.recipes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recipes.is_empty()
    }

    pub fn masks(&self) -> Vec<BitMask> {
        self.recipes.iter().map(|r| r.mask.clone()).collect()
    }

    /// Normalized weight vectors, one per recipe.
    pub fn normalized_weights(&self) -> Result<Vec<Vec<f64>>> {
        let norm = self
            .normalization
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("dataset has no normalization; call normalize_weights".into()))?;
        Ok(self
            .recipes
            .iter()
            .map(|r| norm.normalize(&r.weights_grams, &r.mask))
            .collect())
    }

    /// Subset of recipes by index, sharing vocabulary and normalization.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut d = Dataset::new(
            self.vocabulary.clone(),
            indices.iter().map(|&i| self.recipes[i].clone()).collect(),
        )?;
        d.normalization = self.normalization.clone();
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" | "json" => Some(Self::Jsonl),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
struct JsonRecipe {
    name: String,
    ingredients: Vec<JsonIngredient>,
}

#[derive(Serialize, Deserialize)]
struct JsonIngredient {
    name: String,
    grams: f64,
}

#[derive(Deserialize)]
struct CsvRow {
    recipe: String,
    ingredient: String,
    grams: f64,
}

struct RawRecipe {
    name: String,
    line: usize,
    items: Vec<(String, f64)>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_jsonl(path: &Path) -> Result<Vec<RawRecipe>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecipe = serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        out.push(RawRecipe {
            name: rec.name,
            line: i + 1,
            items: rec.ingredients.into_iter().map(|g| (g.name, g.grams)).collect(),
        });
    }
    Ok(out)
}

fn read_csv(path: &Path) -> Result<Vec<RawRecipe>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out: Vec<RawRecipe> = Vec::new();
    let headers = reader.headers()?.clone();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: CsvRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_error(path, line, e.to_string()))?;
        match out.last_mut() {
            Some(last) if last.name == row.recipe => last.items.push((row.ingredient, row.grams)),
            _ => out.push(RawRecipe {
                name: row.recipe,
                line,
                items: vec![(row.ingredient, row.grams)],
            }),
        }
    }
    Ok(out)
}

/// Load a recipe file, building the vocabulary on the fly.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let raw = match format {
        DataFormat::Jsonl => read_jsonl(path)?,
        DataFormat::Csv => read_csv(path)?,
    };
    build_dataset(path, raw)
}

fn build_dataset(path: &Path, raw: Vec<RawRecipe>) -> Result<Dataset> {
    if raw.is_empty() {
        return Err(Error::NoRecipes);
    }

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    for rec in &raw {
        let mut fresh: Vec<(String, &str)> = Vec::new();
        for (name, grams) in &rec.items {
            if name.trim().is_empty() {
                return Err(parse_error(path, rec.line, "empty ingredient name"));
            }
            if !grams.is_finite() || *grams < 0.0 {
                return Err(parse_error(
                    path,
                    rec.line,
                    format!("ingredient '{name}' has invalid weight {grams}"),
                ));
            }
            let key = fold(name);
            if !ids.contains_key(&key) && !fresh.iter().any(|(k, _)| *k == key) {
                fresh.push((key, name.trim()));
            }
        }
        fresh.sort_by(|a, b| a.0.cmp(&b.0));
        for (key, display) in fresh {
            ids.insert(key, names.len());
            names.push(display.to_string());
        }
    }

    let vocabulary = IngredientVocabulary::from_names(&names)?;
    let n = vocabulary.len();
    let mut seen = HashMap::new();
    let mut recipes = Vec::with_capacity(raw.len());
    for rec in raw {
        if let Some(first) = seen.insert(rec.name.clone(), rec.line) {
            log::warn!(
                "{}:{}: duplicate recipe name '{}' (first at line {first}); keeping both",
                path.display(),
                rec.line,
                rec.name
            );
        }
        let mut grams = vec![0.0; n];
        for (name, g) in rec.items {
            grams[ids[&fold(&name)]] += g;
        }
        recipes.push(Recipe::from_grams(rec.name, grams)?);
    }
    Dataset::new(vocabulary, recipes)
}

/// Populate `dataset.normalization`.
pub fn normalize_weights(mut dataset: Dataset, mode: NormalizationMode) -> Result<Dataset> {
    let n = dataset.n();
    let (scale, offset) = match mode {
        NormalizationMode::Reference => {
            let mut scale = Vec::with_capacity(n);
            for e in dataset.vocabulary.entries() {
                scale.push(
                    e.reference_weight
                        .ok_or_else(|| Error::MissingReference(e.name.clone()))?,
                );
            }
            (scale, vec![1.0; n])
        }
        NormalizationMode::PerIngredientStats => {
            let mut sum = vec![0.0; n];
            let mut count = vec![0usize; n];
            for r in &dataset.recipes {
                for i in 0..n {
                    if r.mask.get(i) {
                        sum[i] += r.weights_grams[i];
                        count[i] += 1;
                    }
                }
            }
            // Never-present ingredients keep scale 1; they only ever carry the sentinel.
            let scale = sum
                .iter()
                .zip(&count)
                .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 1.0 })
                .collect();
            (scale, vec![1.0; n])
        }
    };
    dataset.normalization = Some(Normalization { mode, scale, offset });
    Ok(dataset)
}

pub const FIXTURE_INGREDIENTS: [&str; 3] = ["bun", "patty", "cheese"];
pub const FIXTURE_REFERENCE_GRAMS: [f64; 3] = [55.0, 45.0, 14.0];

/// The two-burger benchmark: cheeseburger [1,1,1] and hamburger [1,1,0], normalized
/// against a 55 g bun, 45 g patty and 14 g cheese slice.
pub fn three_ingredient_fixture() -> Dataset {
    let vocabulary = IngredientVocabulary::new(
        FIXTURE_INGREDIENTS
            .iter()
            .zip(FIXTURE_REFERENCE_GRAMS)
            .enumerate()
            .map(|(id, (name, w))| Ingredient {
                id,
                name: (*name).to_string(),
                reference_weight: Some(w),
            })
            .collect(),
    )
    .expect("fixture vocabulary is valid");
    let recipes = vec![
        Recipe::from_grams("cheeseburger", vec![55.0, 45.0, 14.0]).expect("valid"),
        Recipe::from_grams("hamburger", vec![55.0, 45.0, 0.0]).expect("valid"),
    ];
    let dataset = Dataset::new(vocabulary, recipes).expect("fixture dataset is valid");
    normalize_weights(dataset, NormalizationMode::Reference).expect("fixture has references")
}

/// Load recipes and re-express them in the ingredient order of `vocabulary`.
pub fn load_recipes_in(
    path: impl AsRef<Path>,
    format: DataFormat,
    vocabulary: &IngredientVocabulary,
) -> Result<Vec<Recipe>> {
    let loaded = load_dataset(path, format)?;
    let map = loaded
        .vocabulary
        .names()
        .map(|name| {
            vocabulary
                .index_of(name)
                .ok_or_else(|| Error::VocabularyMismatch(format!("ingredient '{name}' is not in the vocabulary")))
        })
        .collect::<Result<Vec<_>>>()?;
    loaded
        .recipes
        .into_iter()
        .map(|r| {
            let mut grams = vec![0.0; vocabulary.len()];
            for (i, &g) in r.weights_grams.iter().enumerate() {
                grams[map[i]] = g;
            }
            Recipe::from_grams(r.name, grams)
        })
        .collect()
}

/// Write recipes as JSONL in the ingestion format (absent ingredients omitted).
pub fn write_jsonl<W: Write>(mut out: W, vocabulary: &IngredientVocabulary, recipes: &[Recipe]) -> Result<()> {
    for r in recipes {
        let ingredients: Vec<JsonIngredient> = r
            .weights_grams
            .iter()
            .enumerate()
            .filter(|(i, _)| r.mask.get(*i))
            .map(|(i, &g)| JsonIngredient {
                name: vocabulary.name(i).to_string(),
                grams: g,
            })
            .collect();
        let line = serde_json::json!({ "name": r.name, "ingredients": ingredients });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Resolve the format from `explicit` or the file extension.
pub fn resolve_format(path: &Path, explicit: Option<DataFormat>) -> Result<DataFormat> {
    explicit.or_else(|| DataFormat::from_path(path)).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "cannot infer format of {}; pass --format jsonl|csv",
            PathBuf::from(path).display()
        ))
    })
}
