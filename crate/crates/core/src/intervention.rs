//! Steering directions, their scales, and the plan consumed by the model hook.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::capture::HeadActivationSet;
use crate::error::{Error, Result};
use crate::model::HeadId;

const UNIT_TOLERANCE: f64 = 1e-9;

/// How the raw direction is derived from labeled, window-averaged rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMode {
    /// mean(truthful rows) - mean(untruthful rows).
    #[default]
    MassMeanShift,
    /// Mean over truthful rows only.
    TruthfulMean,
    /// Mean over all rows, labels ignored.
    OverallMean,
}

/// Token positions that receive the offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionScope {
    #[default]
    AllPositions,
    LastPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSpec {
    pub head: HeadId,
    pub direction: Array1<f64>,
    pub sigma: f64,
}

impl DirectionSpec {
    /// `direction` must already have unit norm.
    pub fn new(head: HeadId, direction: Array1<f64>, sigma: f64) -> Result<Self> {
        let norm = direction.dot(&direction).sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "direction for head {head} has norm {norm}, expected 1"
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma for head {head} must be finite and non-negative, got {sigma}"
            )));
        }
        Ok(Self {
            head,
            direction,
            sigma,
        })
    }

    /// `alpha * sigma * direction`, the vector added at the hook point.
    pub fn offset(&self, alpha: f64) -> Array1<f64> {
        let scale = alpha * self.sigma;
        self.direction.mapv(|v| scale * v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionPlan {
    entries: Vec<DirectionSpec>,
    alpha: f64,
    scope: InterventionScope,
}

impl InterventionPlan {
    pub fn new(entries: Vec<DirectionSpec>, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidAlpha(alpha));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.head) {
                return Err(Error::DuplicateHead(e.head));
            }
        }
        Ok(Self {
            entries,
            alpha,
            scope: InterventionScope::AllPositions,
        })
    }

    pub fn with_scope(mut self, scope: InterventionScope) -> Self {
        self.scope = scope;
        self
    }

    /// Same directions at a different strength.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Ok(Self::new(self.entries.clone(), alpha)?.with_scope(self.scope))
    }

    pub fn entries(&self) -> &[DirectionSpec] {
        &self.entries
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scope(&self) -> InterventionScope {
        self.scope
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PlanFile {
            alpha: self.alpha,
            scope: self.scope,
            entries: self
                .entries
                .iter()
                .map(|e| PlanEntry {
                    layer: e.head.layer,
                    head: e.head.head,
                    sigma: e.sigma,
                    direction: e.direction.to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PlanFile = serde_json::from_str(text)?;
        let entries = file
            .entries
            .into_iter()
            .map(|e| DirectionSpec::new(HeadId::new(e.layer, e.head), Array1::from(e.direction), e.sigma))
            .collect::<Result<_>>()?;
        Ok(Self::new(entries, file.alpha)?.with_scope(file.scope))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    alpha: f64,
    #[serde(default)]
    scope: InterventionScope,
    entries: Vec<PlanEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanEntry {
    layer: usize,
    head: usize,
    sigma: f64,
    direction: Vec<f64>,
}

fn class_mean(rows: ArrayView2<f64>, labels: &[bool], class: bool) -> Result<Array1<f64>> {
    let mut sum = Array1::zeros(rows.ncols());
    let mut count = 0usize;
    for (row, _) in rows.axis_iter(Axis(0)).zip(labels).filter(|(_, &l)| l == class) {
        sum += &row;
        count += 1;
    }
    if count == 0 {
        return Err(Error::MissingClass(class));
    }
    Ok(sum / count as f64)
}

/// Raw (unnormalized) biasing direction for one head.
pub fn compute_direction(rows: ArrayView2<f64>, labels: &[bool], mode: DirectionMode) -> Result<Array1<f64>> {
    if rows.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: rows.nrows(),
        });
    }
    let raw = match mode {
        DirectionMode::MassMeanShift => {
            let truthful = class_mean(rows, labels, true)?;
            let untruthful = class_mean(rows, labels, false)?;
            truthful - untruthful
        }
        DirectionMode::TruthfulMean => class_mean(rows, labels, true)?,
        DirectionMode::OverallMean => rows
            .mean_axis(Axis(0))
            .ok_or_else(|| Error::InsufficientSamples("no rows".into()))?,
    };
    if raw.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroDirection(None));
    }
    Ok(raw)
}

pub fn normalize(raw: ArrayView1<f64>) -> Result<Array1<f64>> {
    let norm = raw.dot(&raw).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroDirection(None));
    }
    Ok(raw.mapv(|v| v / norm))
}

/// Population standard deviation of the rows' projections onto `unit_direction`.
pub fn compute_sigma(rows: ArrayView2<f64>, unit_direction: ArrayView1<f64>) -> Result<f64> {
    if rows.nrows() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "sigma needs at least 2 rows, got {}",
            rows.nrows()
        )));
    }
    if rows.ncols() != unit_direction.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.ncols(),
            found: unit_direction.len(),
        });
    }
    let projections = rows.dot(&unit_direction);
    let n = projections.len() as f64;
    let mean = projections.sum() / n;
    let var = projections.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Assembles a plan from ranked heads; entries keep the rank order.
pub fn build_plan(
    ranked: &[HeadId],
    raw_directions: &BTreeMap<HeadId, Array1<f64>>,
    sigmas: &BTreeMap<HeadId, f64>,
    alpha: f64,
) -> Result<InterventionPlan> {
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(ranked.len());
    for &id in ranked {
        if !seen.insert(id) {
            return Err(Error::DuplicateHead(id));
        }
        let raw = raw_directions.get(&id).ok_or(Error::MissingHead(id))?;
        let sigma = *sigmas.get(&id).ok_or(Error::MissingHead(id))?;
        let unit = normalize(raw.view()).map_err(|_| Error::ZeroDirection(Some(id)))?;
        entries.push(DirectionSpec::new(id, unit, sigma)?);
    }
    InterventionPlan::new(entries, alpha)
}

/// Directions and sigmas for `ranked` computed from one activation set, then
/// assembled into a plan.
pub fn plan_from_activations(
    set: &HeadActivationSet,
    ranked: &[HeadId],
    mode: DirectionMode,
    alpha: f64,
) -> Result<InterventionPlan> {
    let mut raw = BTreeMap::new();
    let mut sigmas = BTreeMap::new();
    for &id in ranked {
        let rows = set.head(id).ok_or(Error::MissingHead(id))?;
        let direction = compute_direction(rows, set.labels(), mode).map_err(|e| match e {
            Error::ZeroDirection(None) => Error::ZeroDirection(Some(id)),
            other => other,
        })?;
        let unit = normalize(direction.view()).map_err(|_| Error::ZeroDirection(Some(id)))?;
        sigmas.insert(id, compute_sigma(rows, unit.view())?);
        raw.insert(id, direction);
    }
    build_plan(ranked, &raw, &sigmas, alpha)
}
