//! Exact arithmetic on right-continuous piecewise-constant functions.
//!
//! Every CDF/CCDF estimate in this crate is a [`StepFunction`]: a function
//! that equals `left_value` before the first breakpoint and `values[j]` on
//! `[breakpoints[j], breakpoints[j+1])`. Valid CDFs are the constrained
//! subtype [`ValidCdf`]. All operations here are exact: sup-norm distances
//! are computed on breakpoint unions, never on a sampling grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StepFnError {
    #[error("a step function needs at least one breakpoint")]
    Empty,
    #[error("breakpoints must be strictly increasing and finite")]
    BadBreakpoints,
    #[error("values must be finite")]
    BadValues,
    #[error("normalizer must be positive, got {0}")]
    NonpositiveNormalizer(f64),
    #[error("not a valid CDF: {0}")]
    InvalidCdf(&'static str),
}

/// Which tail an empirical step function accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    /// `t ↦ Σ wᵢ·1{vᵢ ≤ t} / normalizer` (CDF orientation).
    Le,
    /// `t ↦ Σ wᵢ·1{vᵢ > t} / normalizer` (CCDF orientation).
    Gt,
}

/// Right-continuous piecewise-constant function on sorted breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    #[serde(rename = "t")]
    breakpoints: Vec<f64>,
    #[serde(rename = "v")]
    values: Vec<f64>,
    #[serde(rename = "left")]
    left_value: f64,
}

impl StepFunction {
    pub fn new(
        breakpoints: Vec<f64>,
        values: Vec<f64>,
        left_value: f64,
    ) -> Result<Self, StepFnError> {
        if breakpoints.is_empty() {
            return Err(StepFnError::Empty);
        }
        if breakpoints.len() != values.len() {
            return Err(StepFnError::BadBreakpoints);
        }
        if !breakpoints.iter().all(|t| t.is_finite())
            || breakpoints.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(StepFnError::BadBreakpoints);
        }
        if !values.iter().all(|v| v.is_finite()) || !left_value.is_finite() {
            return Err(StepFnError::BadValues);
        }
        Ok(Self {
            breakpoints,
            values,
            left_value,
        })
    }

    /// Constant `c` everywhere except the formal breakpoint at `t0`.
    pub fn constant(t0: f64, c: f64) -> Self {
        Self {
            breakpoints: vec![t0],
            values: vec![c],
            left_value: c,
        }
    }

    /// The indicator CDF `1{t0 ≤ t}`.
    pub fn point_mass(t0: f64) -> Self {
        Self {
            breakpoints: vec![t0],
            values: vec![1.0],
            left_value: 0.0,
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn left_value(&self) -> f64 {
        self.left_value
    }

    /// Value on the final piece, i.e. the limit as `t → ∞`.
    pub fn final_value(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Right-continuous lookup by binary search.
    pub fn evaluate(&self, t: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|bp| *bp <= t);
        if idx == 0 {
            self.left_value
        } else {
            self.values[idx - 1]
        }
    }

    /// Jumps `(breakpoint, value_j − value_{j−1})`, the Stieltjes measure of
    /// the function (first jump is relative to `left_value`).
    pub fn jumps(&self) -> Vec<(f64, f64)> {
        let mut prev = self.left_value;
        self.breakpoints
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| {
                let j = v - prev;
                prev = v;
                (t, j)
            })
            .collect()
    }

    /// Builds a step function from a jump list, merging bit-identical
    /// positions and dropping exactly-zero jumps. Returns the constant
    /// `left_value` function anchored at `anchor` when all jumps cancel.
    pub fn from_jumps(left_value: f64, mut jumps: Vec<(f64, f64)>, anchor: f64) -> Self {
        jumps.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        let mut acc = left_value;
        let mut i = 0;
        while i < jumps.len() {
            let pos = jumps[i].0;
            let mut j = jumps[i].1;
            i += 1;
            while i < jumps.len() && jumps[i].0.total_cmp(&pos).is_eq() {
                j += jumps[i].1;
                i += 1;
            }
            if j != 0.0 {
                acc += j;
                breakpoints.push(pos);
                values.push(acc);
            }
        }
        if breakpoints.is_empty() {
            return Self::constant(anchor, left_value);
        }
        Self {
            breakpoints,
            values,
            left_value,
        }
    }

    /// Empirical weighted step function of `(value, weight)` samples.
    ///
    /// Breakpoints are the sorted unique sample values (zero-weight samples
    /// keep their breakpoint); ties are merged with summed weight.
    pub fn from_weighted_samples(
        points: &[(f64, f64)],
        normalizer: f64,
        tail: Tail,
    ) -> Result<Self, StepFnError> {
        if !(normalizer > 0.0) {
            return Err(StepFnError::NonpositiveNormalizer(normalizer));
        }
        if points.is_empty() {
            return Err(StepFnError::Empty);
        }
        let mut sorted: Vec<(f64, f64)> = points.to_vec();
        sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut breakpoints = Vec::new();
        let mut masses = Vec::new();
        for (v, w) in sorted {
            match breakpoints.last() {
                Some(&last) if f64::total_cmp(&last, &v).is_eq() => {
                    *masses.last_mut().unwrap() += w;
                }
                _ => {
                    breakpoints.push(v);
                    masses.push(w);
                }
            }
        }
        let total: f64 = masses.iter().sum();
        let mut values = Vec::with_capacity(masses.len());
        match tail {
            Tail::Le => {
                let mut acc = 0.0;
                for m in &masses {
                    acc += m;
                    values.push(acc / normalizer);
                }
                Self::new(breakpoints, values, 0.0)
            }
            Tail::Gt => {
                let mut acc = total;
                for m in &masses {
                    acc -= m;
                    values.push(acc / normalizer);
                }
                Self::new(breakpoints, values, total / normalizer)
            }
        }
    }

    /// Pointwise `a + b·f`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| a + b * v).collect(),
            left_value: a + b * self.left_value,
        }
    }

    /// Pointwise `1 − f`.
    pub fn one_minus(&self) -> Self {
        self.affine(1.0, -1.0)
    }

    /// Pointwise `min(f, cap)`.
    pub fn clip_upper(&self, cap: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v.min(cap)).collect(),
            left_value: self.left_value.min(cap),
        }
    }

    /// Pointwise linear combination `Σ cᵢ·fᵢ` over the breakpoint union.
    pub fn linear_combine(terms: &[(f64, &StepFunction)]) -> Result<Self, StepFnError> {
        if terms.is_empty() {
            return Err(StepFnError::Empty);
        }
        let mut union: Vec<f64> = terms
            .iter()
            .flat_map(|(_, f)| f.breakpoints.iter().copied())
            .collect();
        union.sort_unstable_by(f64::total_cmp);
        union.dedup_by(|a, b| a.total_cmp(b).is_eq());
        let left_value = terms.iter().map(|(c, f)| c * f.left_value).sum();
        let values = union
            .iter()
            .map(|&t| terms.iter().map(|(c, f)| c * f.evaluate(t)).sum())
            .collect();
        Self::new(union, values, left_value)
    }

    /// Exact `sup_t |f(t) − g(t)|`.
    ///
    /// The difference of two step functions is itself a step function, so
    /// the supremum is attained either on the shared left tail or at a
    /// breakpoint of the union.
    pub fn sup_norm_distance(&self, other: &StepFunction) -> f64 {
        let mut best = (self.left_value - other.left_value).abs();
        for &t in self.breakpoints.iter().chain(&other.breakpoints) {
            let d = (self.evaluate(t) - other.evaluate(t)).abs();
            if d > best {
                best = d;
            }
        }
        best
    }

    /// Running max clipped to `[0, 1]`, forced to reach 1 by `support_max`.
    ///
    /// When the running max never attains 1 the result gets a terminal
    /// breakpoint at `support_max` with value 1, so the output is a bona
    /// fide CDF on the declared return support.
    pub fn monotonize_clip(&self, support_max: f64) -> ValidCdf {
        let mut run = self.left_value;
        let mut breakpoints = Vec::with_capacity(self.breakpoints.len() + 1);
        let mut values = Vec::with_capacity(self.values.len() + 1);
        let left = run.clamp(0.0, 1.0);
        let mut prev = left;
        for (&t, &v) in self.breakpoints.iter().zip(&self.values) {
            run = run.max(v);
            let clipped = run.clamp(0.0, 1.0);
            if clipped != prev || breakpoints.is_empty() {
                breakpoints.push(t);
                values.push(clipped);
                prev = clipped;
            }
        }
        if breakpoints.is_empty() {
            breakpoints.push(support_max);
            values.push(1.0);
        } else if *values.last().unwrap() < 1.0 {
            let last_bp = *breakpoints.last().unwrap();
            if support_max > last_bp {
                breakpoints.push(support_max);
                values.push(1.0);
            } else {
                *values.last_mut().unwrap() = 1.0;
            }
        }
        ValidCdf(StepFunction {
            breakpoints,
            values,
            left_value: left,
        })
    }

    /// Mean of the Stieltjes measure defined by the jumps, `Σ tⱼ·Δf(tⱼ)`.
    ///
    /// For a valid CDF this is the ordinary expected value; for unnormalized
    /// estimates (e.g. raw importance-sampling CDFs) it equals the weighted
    /// sample mean exactly, whatever the total mass.
    pub fn jump_mean(&self) -> f64 {
        self.jumps().iter().map(|(t, j)| t * j).sum()
    }
}

/// A [`StepFunction`] that is a genuine CDF: starts at 0, nondecreasing,
/// within `[0, 1]`, and reaching exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidCdf(StepFunction);

impl ValidCdf {
    pub fn validate(f: StepFunction) -> Result<Self, StepFnError> {
        if f.left_value != 0.0 {
            return Err(StepFnError::InvalidCdf("left value must be 0"));
        }
        if f.values.windows(2).any(|w| w[0] > w[1]) || f.values[0] < 0.0 {
            return Err(StepFnError::InvalidCdf("values must be nondecreasing from 0"));
        }
        if f.final_value() != 1.0 {
            return Err(StepFnError::InvalidCdf("final value must be 1"));
        }
        Ok(Self(f))
    }

    /// Builds a CDF from nonnegative point masses, normalizing away the
    /// floating-point residue so the final value is exactly 1.
    pub fn from_masses(mut masses: Vec<(f64, f64)>) -> Result<Self, StepFnError> {
        masses.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut breakpoints = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (t, m) in masses {
            match breakpoints.last() {
                Some(&last) if f64::total_cmp(&last, &t).is_eq() => {
                    *probs.last_mut().unwrap() += m
                }
                _ => {
                    breakpoints.push(t);
                    probs.push(m);
                }
            }
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(StepFnError::NonpositiveNormalizer(total));
        }
        let mut acc = 0.0;
        let n = probs.len();
        let values = probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                acc += p;
                if i + 1 == n {
                    1.0
                } else {
                    (acc / total).min(1.0)
                }
            })
            .collect();
        Ok(Self(StepFunction::new(breakpoints, values, 0.0)?))
    }

    pub fn as_step(&self) -> &StepFunction {
        &self.0
    }

    pub fn into_step(self) -> StepFunction {
        self.0
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        self.0.evaluate(t)
    }
}

impl AsRef<StepFunction> for ValidCdf {
    fn as_ref(&self) -> &StepFunction {
        &self.0
    }
}
