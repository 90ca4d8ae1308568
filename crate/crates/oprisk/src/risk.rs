//! Risk functionals over step CDFs, plug-in estimation, and simultaneous
//! interval reporting.
//!
//! Distortion risks are evaluated exactly: on a support `[a, b]` where the
//! CDF is constant outside, `ρ = a + ∫_a^b g(1 − F(t)) dt`, and the
//! integrand is piecewise constant so the integral is a finite sum. The
//! mean is special-cased through the Stieltjes jump sum so that the plug-in
//! mean of an (even unnormalized) importance-sampling CDF coincides with
//! the direct weighted mean exactly.

use crate::stepfn::{StepFunction, ValidCdf};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("invalid distortion: {0}")]
    InvalidDistortion(String),
    #[error("alpha {0} out of range for {1}")]
    AlphaOutOfRange(f64, &'static str),
    #[error("unknown risk functional {0:?}")]
    UnknownRisk(String),
}

/// Named distortion functions `g: [0,1] → [0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionKind {
    /// `g(x) = x`: the expected value.
    Identity,
    /// `g(x) = min{x/(1−α), 1}`: upper-tail average (CVaR convention of the
    /// distortion-integral form).
    Cvar { alpha: f64 },
    /// `g(x) = max{(x−(1−α))/α, 0}`: lower-tail average, the complement of
    /// the CVaR distortion ("conditional cost-at-risk").
    Ccar { alpha: f64 },
    /// `g(x) = 1{x ≥ 1−α}`: recovers the α-quantile (VaR); not Lipschitz.
    VarQuantile { alpha: f64 },
    /// `g(x) = x^a` with `a < 1`; not Lipschitz at 0.
    PropHazard { a: f64 },
    /// `g(x) = Φ(Φ⁻¹(x) − Φ⁻¹(α))` with a standard-normal base.
    Wang { alpha: f64 },
}

/// A distortion with a cached Lipschitz constant of `g` (when finite).
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionFn {
    pub kind: DistortionKind,
    /// Lipschitz constant of `g` itself; the induced risk functional on
    /// supports of width `D` is `g_lipschitz·D`-Lipschitz.
    pub g_lipschitz: Option<f64>,
}

impl DistortionFn {
    pub fn new(kind: DistortionKind) -> Result<Self, RiskError> {
        let g_lipschitz = match &kind {
            DistortionKind::Identity => Some(1.0),
            DistortionKind::Cvar { alpha } => {
                if !(0.0..1.0).contains(alpha) {
                    return Err(RiskError::AlphaOutOfRange(*alpha, "cvar"));
                }
                Some(1.0 / (1.0 - alpha))
            }
            DistortionKind::Ccar { alpha } => {
                if !(*alpha > 0.0 && *alpha <= 1.0) {
                    return Err(RiskError::AlphaOutOfRange(*alpha, "ccar"));
                }
                Some(1.0 / alpha)
            }
            DistortionKind::VarQuantile { alpha } => {
                if !(0.0..1.0).contains(alpha) {
                    return Err(RiskError::AlphaOutOfRange(*alpha, "var"));
                }
                None
            }
            DistortionKind::PropHazard { a } => {
                if !(*a > 0.0 && *a <= 1.0) {
                    return Err(RiskError::AlphaOutOfRange(*a, "prop_hazard"));
                }
                if *a == 1.0 {
                    Some(1.0)
                } else {
                    None
                }
            }
            DistortionKind::Wang { alpha } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(RiskError::AlphaOutOfRange(*alpha, "wang"));
                }
                None
            }
        };
        let d = Self { kind, g_lipschitz };
        d.check_valid()?;
        Ok(d)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match &self.kind {
            DistortionKind::Identity => x,
            DistortionKind::Cvar { alpha } => (x / (1.0 - alpha)).min(1.0),
            DistortionKind::Ccar { alpha } => ((x - (1.0 - alpha)) / alpha).max(0.0),
            DistortionKind::VarQuantile { alpha } => {
                if x >= 1.0 - alpha {
                    1.0
                } else {
                    0.0
                }
            }
            DistortionKind::PropHazard { a } => x.powf(*a),
            DistortionKind::Wang { alpha } => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    1.0
                } else {
                    let normal = Normal::standard();
                    normal.cdf(normal.inverse_cdf(x) - normal.inverse_cdf(*alpha))
                }
            }
        }
    }

    /// `g(0) = 0`, `g(1) = 1`, nondecreasing — checked on a 1e3-point grid.
    fn check_valid(&self) -> Result<(), RiskError> {
        if self.eval(0.0) != 0.0 || self.eval(1.0) != 1.0 {
            return Err(RiskError::InvalidDistortion(
                "distortion must map 0 to 0 and 1 to 1".into(),
            ));
        }
        let mut prev = 0.0;
        for i in 1..=1000 {
            let x = i as f64 / 1000.0;
            let y = self.eval(x);
            if y < prev - 1e-12 {
                return Err(RiskError::InvalidDistortion(format!(
                    "distortion decreases near x = {x}"
                )));
            }
            prev = y;
        }
        Ok(())
    }
}

/// The risk-functional catalog.
#[derive(Debug, Clone, PartialEq)]
pub enum RiskKind {
    /// Expected value, computed via the Stieltjes jump sum.
    Mean,
    Distortion(DistortionFn),
    Variance,
    MeanVariance { lambda: f64 },
    Cpt {
        plus: DistortionFn,
        minus: DistortionFn,
        cut: f64,
    },
}

/// A named risk functional with its Lipschitz constant for a given return
/// width `D` (None for functionals that are not Lipschitz, e.g. VaR).
#[derive(Debug, Clone, PartialEq)]
pub struct RiskFunctional {
    pub name: String,
    pub kind: RiskKind,
    pub lipschitz: Option<f64>,
}

/// Exact distortion integral `a + Σ_j g(S(t_j))·(t_{j+1} − t_j)` over the
/// partition of `[a, b]` induced by the CDF's breakpoints.
pub fn distortion_risk(
    cdf: &ValidCdf,
    g: &DistortionFn,
    support: (f64, f64),
) -> Result<f64, RiskError> {
    let (a, b) = support;
    if !(b >= a) {
        return Err(RiskError::InvalidDistortion(format!(
            "support [{a}, {b}] is empty"
        )));
    }
    let f = cdf.as_step();
    let mut total = a;
    let mut lo = a;
    for &t in f.breakpoints() {
        if t <= a {
            continue;
        }
        let hi = t.min(b);
        if hi > lo {
            total += g.eval(1.0 - f.evaluate(lo)) * (hi - lo);
            lo = hi;
        }
        if hi >= b {
            break;
        }
    }
    if b > lo {
        total += g.eval(1.0 - f.evaluate(lo)) * (b - lo);
    }
    Ok(total)
}

/// Segment integrals `∫ S_Y du` and `∫ u·S_Y du` of the shifted variable
/// `Y = Z − a` over `[0, b − a]`, computed in the original coordinates
/// (`u = t − a`) so segment endpoints are taken exactly at the CDF's
/// breakpoints.
fn shifted_ccdf_integrals(cdf: &ValidCdf, support: (f64, f64)) -> (f64, f64) {
    let (a, b) = support;
    let f = cdf.as_step();
    let mut int_s = 0.0;
    let mut int_us = 0.0;
    let mut lo = a;
    for &t in f.breakpoints() {
        if t <= a {
            continue;
        }
        let hi = t.min(b);
        if hi > lo {
            let s = 1.0 - f.evaluate(lo);
            let (ul, uh) = (lo - a, hi - a);
            int_s += s * (uh - ul);
            int_us += s * (uh * uh - ul * ul) / 2.0;
            lo = hi;
        }
        if hi >= b {
            break;
        }
    }
    if b > lo {
        let s = 1.0 - f.evaluate(lo);
        let (ul, uh) = (lo - a, b - a);
        int_s += s * (uh - ul);
        int_us += s * (uh * uh - ul * ul) / 2.0;
    }
    (int_s, int_us)
}

/// Variance via `2·∫ u·S_Y(u) du − (∫ S_Y(u) du)²` for the shift
/// `Y = Z − a`; shift-invariant, exact on step CDFs.
pub fn variance_risk(cdf: &ValidCdf, support: (f64, f64)) -> f64 {
    let (int_s, int_us) = shifted_ccdf_integrals(cdf, support);
    2.0 * int_us - int_s * int_s
}

/// Pushforward of the CDF's point masses through `u`, as a CDF on `[0, ∞)`.
fn pushforward(cdf: &ValidCdf, u: impl Fn(f64) -> f64) -> ValidCdf {
    let masses: Vec<(f64, f64)> = cdf
        .as_step()
        .jumps()
        .into_iter()
        .map(|(t, m)| (u(t), m))
        .collect();
    ValidCdf::from_masses(masses).expect("pushforward of a CDF keeps unit mass")
}

/// Cumulative prospect theory risk: gains `u⁺(z) = max(z − c, 0)` distorted
/// by `g⁺` minus losses `u⁻(z) = max(c − z, 0)` distorted by `g⁻`, each
/// via the exact distortion integral on the transformed CDF.
pub fn cpt_risk(
    cdf: &ValidCdf,
    g_plus: &DistortionFn,
    g_minus: &DistortionFn,
    cut: f64,
    support: (f64, f64),
) -> Result<f64, RiskError> {
    let (a, b) = support;
    let plus = pushforward(cdf, |z| (z - cut).max(0.0));
    let minus = pushforward(cdf, |z| (cut - z).max(0.0));
    let hi_plus = (b - cut).max(0.0);
    let hi_minus = (cut - a).max(0.0);
    let rho_plus = distortion_risk(&plus, g_plus, (0.0, hi_plus))?;
    let rho_minus = distortion_risk(&minus, g_minus, (0.0, hi_minus))?;
    Ok(rho_plus - rho_minus)
}

/// Plug-in evaluation of a risk functional on a step CDF.
pub fn evaluate_risk(
    rf: &RiskFunctional,
    cdf: &ValidCdf,
    support: (f64, f64),
) -> Result<f64, RiskError> {
    match &rf.kind {
        RiskKind::Mean => Ok(cdf.as_step().jump_mean()),
        RiskKind::Distortion(g) => distortion_risk(cdf, g, support),
        RiskKind::Variance => Ok(variance_risk(cdf, support)),
        RiskKind::MeanVariance { lambda } => {
            Ok(cdf.as_step().jump_mean() + lambda * variance_risk(cdf, support))
        }
        RiskKind::Cpt { plus, minus, cut } => cpt_risk(cdf, plus, minus, *cut, support),
    }
}

/// Plug-in mean of any step function via the Stieltjes jump sum; equals the
/// direct weighted sample mean exactly, normalized or not.
pub fn mean_of_step(f: &StepFunction) -> f64 {
    f.jump_mean()
}

/// Parses a CLI risk name for return width `d`:
/// `mean`, `cvar:<alpha>`, `ccar:<alpha>`, `var:<alpha>`, `variance`,
/// `mean_variance:<lambda>`, `prop_hazard:<a>`, `cpt:<cut>`,
/// `wang:<alpha>`.
pub fn parse_risk(name: &str, d: f64) -> Result<RiskFunctional, RiskError> {
    let (head, arg) = match name.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (name, None),
    };
    let num = |what: &'static str| -> Result<f64, RiskError> {
        arg.ok_or_else(|| RiskError::UnknownRisk(name.into()))?
            .parse::<f64>()
            .map_err(|_| RiskError::AlphaOutOfRange(f64::NAN, what))
    };
    match head {
        "mean" => Ok(RiskFunctional {
            name: name.into(),
            kind: RiskKind::Mean,
            lipschitz: Some(d),
        }),
        "cvar" => {
            let alpha = num("cvar")?;
            let g = DistortionFn::new(DistortionKind::Cvar { alpha })?;
            let l = g.g_lipschitz.map(|gl| gl * d);
            Ok(RiskFunctional {
                name: name.into(),
                kind: RiskKind::Distortion(g),
                lipschitz: l,
            })
        }
        "ccar" => {
            let alpha = num("ccar")?;
            let g = DistortionFn::new(DistortionKind::Ccar { alpha })?;
            let l = g.g_lipschitz.map(|gl| gl * d);
            Ok(RiskFunctional {
                name: name.into(),
                kind: RiskKind::Distortion(g),
                lipschitz: l,
            })
        }
        "var" => {
            let alpha = num("var")?;
            let g = DistortionFn::new(DistortionKind::VarQuantile { alpha })?;
            Ok(RiskFunctional {
                name: name.into(),
                kind: RiskKind::Distortion(g),
                lipschitz: None,
            })
        }
        "prop_hazard" => {
            let a = num("prop_hazard")?;
            let g = DistortionFn::new(DistortionKind::PropHazard { a })?;
            let l = g.g_lipschitz.map(|gl| gl * d);
            Ok(RiskFunctional {
                name: name.into(),
                kind: RiskKind::Distortion(g),
                lipschitz: l,
            })
        }
        "wang" => {
            let alpha = num("wang")?;
            let g = DistortionFn::new(DistortionKind::Wang { alpha })?;
            Ok(RiskFunctional {
                name: name.into(),
                kind: RiskKind::Distortion(g),
                lipschitz: None,
            })
        }
        "variance" => Ok(RiskFunctional {
            name: name.into(),
            kind: RiskKind::Variance,
            lipschitz: Some(3.0 * d * d),
        }),
        "mean_variance" => {
            let lambda = num("mean_variance")?;
            Ok(RiskFunctional {
                name: name.into(),
                kind: RiskKind::MeanVariance { lambda },
                lipschitz: Some(1.0 + 3.0 * lambda * d * d),
            })
        }
        "cpt" => {
            let cut = num("cpt")?;
            let id = DistortionFn::new(DistortionKind::Identity)?;
            Ok(RiskFunctional {
                name: name.into(),
                kind: RiskKind::Cpt {
                    plus: id.clone(),
                    minus: id,
                    cut,
                },
                lipschitz: Some(d),
            })
        }
        _ => Err(RiskError::UnknownRisk(name.into())),
    }
}

/// The default catalog at level `alpha` for return width `d`.
pub fn named_functionals(alpha: f64, d: f64) -> Result<Vec<RiskFunctional>, RiskError> {
    Ok(vec![
        parse_risk("mean", d)?,
        parse_risk(&format!("cvar:{alpha}"), d)?,
        parse_risk(&format!("ccar:{alpha}"), d)?,
        parse_risk(&format!("var:{alpha}"), d)?,
        parse_risk("variance", d)?,
    ])
}

/// One line of an OPRA report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RiskReportEntry {
    pub name: String,
    pub estimate: f64,
    pub lipschitz: Option<f64>,
    /// `L·ε`; absent when the functional has no Lipschitz constant.
    pub halfwidth: Option<f64>,
}

/// Simultaneous plug-in risk estimates `ρ_p(F̂) ± L_p·ε`: a single CDF
/// error budget `ε` (holding with probability `1 − δ`) covers the whole
/// collection, without splitting δ across functionals.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RiskReport {
    pub entries: Vec<RiskReportEntry>,
    pub cdf_error: f64,
    pub delta: f64,
}

pub fn opra(
    f_hat: &ValidCdf,
    epsilon: f64,
    delta: f64,
    functionals: &[RiskFunctional],
    support: (f64, f64),
) -> Result<RiskReport, RiskError> {
    let entries = functionals
        .iter()
        .map(|rf| {
            let estimate = evaluate_risk(rf, f_hat, support)?;
            Ok(RiskReportEntry {
                name: rf.name.clone(),
                estimate,
                lipschitz: rf.lipschitz,
                halfwidth: rf.lipschitz.map(|l| l * epsilon),
            })
        })
        .collect::<Result<Vec<_>, RiskError>>()?;
    Ok(RiskReport {
        entries,
        cdf_error: epsilon,
        delta,
    })
}
