//! Model genomes and the two genetic operators.
//!
//! A genome is an ordered map of named real matrices standing in for the
//! weights of a language model. Offspring are produced by task-vector
//! crossover against a shared base genome, followed by a perturbation of the
//! leading singular values of each weight matrix.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenomeError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("degenerate crossover weights: |{w1} + {w2}| < {epsilon}")]
    DegenerateWeights { w1: f64, w2: f64, epsilon: f64 },
    #[error("non-finite entry in tensor `{0}`")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("singular value decomposition of `{0}` did not converge")]
    NumericalFailure(String),
}

/// Identifier of a genome. Ids are handed out in increasing order, so a
/// smaller id is always an older genome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenomeId(pub u64);

impl fmt::Display for GenomeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{:05}", self.0)
    }
}

impl FromStr for GenomeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix('m').unwrap_or(s);
        digits
            .parse::<u64>()
            .map(GenomeId)
            .map_err(|_| format!("invalid genome id `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Crossover,
    Mutation,
    CrossoverMutation,
}

impl Operator {
    pub fn tag(self) -> &'static str {
        match self {
            Operator::Crossover => "crossover",
            Operator::Mutation => "mutation",
            Operator::CrossoverMutation => "crossover+mutation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parents: (GenomeId, GenomeId),
    pub operator: Operator,
    /// Raw (unnormalized) crossover weights, when crossover was involved.
    pub weights: Option<(f64, f64)>,
    /// Tensors whose spectrum was perturbed.
    #[serde(default)]
    pub mutated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelGenome {
    pub id: GenomeId,
    pub tensors: BTreeMap<String, Matrix>,
    pub lineage: Option<Lineage>,
    pub generation_born: u64,
}

impl ModelGenome {
    pub fn new(id: GenomeId, tensors: BTreeMap<String, Matrix>) -> Self {
        Self {
            id,
            tensors,
            lineage: None,
            generation_born: 0,
        }
    }

    pub fn shape_schema(&self) -> Vec<(&str, (usize, usize))> {
        self.tensors
            .iter()
            .map(|(k, m)| (k.as_str(), m.shape()))
            .collect()
    }

    /// Total number of scalar parameters.
    pub fn dimension(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }

    /// Flattens all tensors in name order, each row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dimension());
        for m in self.tensors.values() {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    out.push(m[(r, c)]);
                }
            }
        }
        out
    }

    /// Inner product of the flattened parameters with `direction`.
    pub fn project(&self, direction: &[f64]) -> Option<f64> {
        if direction.len() != self.dimension() {
            return None;
        }
        let mut acc = 0.0;
        let mut i = 0;
        for m in self.tensors.values() {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    acc += m[(r, c)] * direction[i];
                    i += 1;
                }
            }
        }
        Some(acc)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.tensors
            .values()
            .map(|m| m.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_finite(&self) -> Result<(), GenomeError> {
        for (name, m) in &self.tensors {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(GenomeError::NonFinite(name.clone()));
            }
        }
        Ok(())
    }

    /// Rounds every entry to the nearest single-precision value so that
    /// on-disk storage is lossless.
    pub fn round_to_storage(&mut self) {
        for m in self.tensors.values_mut() {
            m.apply(|x| *x = *x as f32 as f64);
        }
    }

    pub fn ensure_same_schema(&self, other: &ModelGenome) -> Result<(), GenomeError> {
        same_schema(&self.tensors, &other.tensors)
    }
}

fn same_schema(
    a: &BTreeMap<String, Matrix>,
    b: &BTreeMap<String, Matrix>,
) -> Result<(), GenomeError> {
    if a.len() != b.len() {
        return Err(GenomeError::SchemaMismatch(format!(
            "{} tensors vs {} tensors",
            a.len(),
            b.len()
        )));
    }
    for ((na, ma), (nb, mb)) in a.iter().zip(b.iter()) {
        if na != nb {
            return Err(GenomeError::SchemaMismatch(format!(
                "tensor `{na}` vs `{nb}`"
            )));
        }
        if ma.shape() != mb.shape() {
            return Err(GenomeError::SchemaMismatch(format!(
                "tensor `{na}` has shape {:?} vs {:?}",
                ma.shape(),
                mb.shape()
            )));
        }
    }
    Ok(())
}

/// Elementwise difference between a model and the shared base.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub tensors: BTreeMap<String, Matrix>,
}

pub fn task_vector(model: &ModelGenome, base: &ModelGenome) -> Result<TaskVector, GenomeError> {
    model.ensure_same_schema(base)?;
    let tensors = model
        .tensors
        .iter()
        .map(|(name, m)| (name.clone(), m - &base.tensors[name]))
        .collect();
    Ok(TaskVector { tensors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossoverParams {
    pub mu: f64,
    pub sigma: f64,
    pub resample_epsilon: f64,
}

impl Default for CrossoverParams {
    fn default() -> Self {
        Self {
            mu: 1.0,
            sigma: 0.5,
            resample_epsilon: 1e-3,
        }
    }
}

impl CrossoverParams {
    pub fn validate(&self) -> Result<(), GenomeError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(GenomeError::InvalidParams("crossover.sigma must be > 0".into()));
        }
        if !(self.resample_epsilon > 0.0 && self.resample_epsilon.is_finite()) {
            return Err(GenomeError::InvalidParams(
                "crossover.resample_epsilon must be > 0".into(),
            ));
        }
        if !self.mu.is_finite() {
            return Err(GenomeError::InvalidParams("crossover.mu must be finite".into()));
        }
        Ok(())
    }

    /// Draws (w1, w2) i.i.d. from N(mu, sigma^2), redrawing both until their
    /// sum is at least `resample_epsilon` away from zero.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let normal = Normal::new(self.mu, self.sigma).expect("validated sigma");
        loop {
            let w1 = normal.sample(rng);
            let w2 = normal.sample(rng);
            if (w1 + w2).abs() >= self.resample_epsilon {
                return (w1, w2);
            }
        }
    }
}

/// Merges two parents by normalized task arithmetic:
/// `child = base + (w1 tau1 + w2 tau2) / (w1 + w2)`.
pub fn crossover(
    p1: &ModelGenome,
    p2: &ModelGenome,
    base: &ModelGenome,
    omega1: f64,
    omega2: f64,
    epsilon: f64,
    child_id: GenomeId,
) -> Result<ModelGenome, GenomeError> {
    p1.ensure_same_schema(base)?;
    p2.ensure_same_schema(base)?;
    let total = omega1 + omega2;
    if !total.is_finite() || total.abs() < epsilon {
        return Err(GenomeError::DegenerateWeights {
            w1: omega1,
            w2: omega2,
            epsilon,
        });
    }
    let a = omega1 / total;
    let b = omega2 / total;
    let mut tensors = BTreeMap::new();
    for (name, w_base) in &base.tensors {
        let tau1 = &p1.tensors[name] - w_base;
        let tau2 = &p2.tensors[name] - w_base;
        // Sum the weighted task vectors before adding the base so that
        // swapping parents (and weights) is exact.
        let merged = tau1 * a + tau2 * b;
        tensors.insert(name.clone(), w_base + merged);
    }
    let child = ModelGenome {
        id: child_id,
        tensors,
        lineage: Some(Lineage {
            parents: (p1.id, p2.id),
            operator: Operator::Crossover,
            weights: Some((omega1, omega2)),
            mutated: Vec::new(),
        }),
        generation_born: p1.generation_born.max(p2.generation_born),
    };
    child.check_finite()?;
    Ok(child)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationParams {
    pub k: usize,
    pub sigma: f64,
    pub rate: f64,
}

impl Default for MutationParams {
    fn default() -> Self {
        Self {
            k: 256,
            sigma: 1.5,
            rate: 0.25,
        }
    }
}

impl MutationParams {
    pub fn validate(&self) -> Result<(), GenomeError> {
        if self.k < 1 {
            return Err(GenomeError::InvalidParams("mutation.k must be >= 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(GenomeError::InvalidParams("mutation.sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(GenomeError::InvalidParams(
                "mutation.rate must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Mutated {
    pub genome: ModelGenome,
    /// Tensors whose leading singular values were perturbed.
    pub perturbed: Vec<String>,
    /// Tensors selected for mutation whose decomposition failed; left as-is.
    pub failed: Vec<String>,
}

/// Adds `deltas[i]` to the i-th largest singular value of `w` and rebuilds the
/// matrix. Extra deltas beyond `min(m, n)` are ignored.
pub fn perturb_singular_values(w: &Matrix, deltas: &[f64]) -> Option<Matrix> {
    if !w.iter().all(|x| x.is_finite()) {
        return None;
    }
    let svd = w.clone().try_svd(true, true, SVD_EPS, SVD_MAX_ITER)?;
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut sigma: DVector<f64> = svd.singular_values;
    for (s, d) in sigma.iter_mut().zip(deltas) {
        *s += d;
    }
    let rebuilt = u * DMatrix::from_diagonal(&sigma) * v_t;
    rebuilt.iter().all(|x| x.is_finite()).then_some(rebuilt)
}

/// Singular values in descending order.
pub fn singular_values(w: &Matrix) -> Option<Vec<f64>> {
    if !w.iter().all(|x| x.is_finite()) {
        return None;
    }
    let svd = w.clone().try_svd(false, false, SVD_EPS, SVD_MAX_ITER)?;
    Some(svd.singular_values.iter().copied().collect())
}

/// Perturbs the leading singular values of each matrix, each matrix being
/// selected independently with probability `rate`. Vectors (one row or one
/// column) pass through untouched.
pub fn mutate_svd<R: Rng + ?Sized>(
    model: &ModelGenome,
    params: &MutationParams,
    rng: &mut R,
) -> Result<Mutated, GenomeError> {
    params.validate()?;
    let normal = Normal::new(0.0, params.sigma).expect("validated sigma");
    let mut tensors = BTreeMap::new();
    let mut perturbed = Vec::new();
    let mut failed = Vec::new();
    for (name, w) in &model.tensors {
        let selected = rng.random_bool(params.rate);
        let rank_dim = w.nrows().min(w.ncols());
        if !selected || rank_dim <= 1 {
            tensors.insert(name.clone(), w.clone());
            continue;
        }
        let count = params.k.min(rank_dim);
        let deltas: Vec<f64> = (0..count).map(|_| normal.sample(rng)).collect();
        match perturb_singular_values(w, &deltas) {
            Some(rebuilt) => {
                tensors.insert(name.clone(), rebuilt);
                perturbed.push(name.clone());
            }
            None => {
                log::warn!("svd of `{name}` failed; tensor left unmutated");
                tensors.insert(name.clone(), w.clone());
                failed.push(name.clone());
            }
        }
    }
    let lineage = match &model.lineage {
        Some(l) => Lineage {
            parents: l.parents,
            operator: match l.operator {
                Operator::Crossover if perturbed.is_empty() => Operator::Crossover,
                Operator::Crossover | Operator::CrossoverMutation => Operator::CrossoverMutation,
                Operator::Mutation => Operator::Mutation,
            },
            weights: l.weights,
            mutated: perturbed.clone(),
        },
        None => Lineage {
            parents: (model.id, model.id),
            operator: Operator::Mutation,
            weights: None,
            mutated: perturbed.clone(),
        },
    };
    Ok(Mutated {
        genome: ModelGenome {
            id: model.id,
            tensors,
            lineage: Some(lineage),
            generation_born: model.generation_born,
        },
        perturbed,
        failed,
    })
}
