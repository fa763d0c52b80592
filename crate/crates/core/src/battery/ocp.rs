//! Open-circuit potentials loaded from coefficient tables.
//!
//! Each potential is a function of the stoichiometry `θ = c / c_max`, written
//! as a sum of terms `coef · θ^power · exp(exp_offset + exp_rate · θ)` or a
//! ratio of two such sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    #[serde(default)]
    pub power: f64,
    #[serde(default)]
    pub exp_offset: f64,
    #[serde(default)]
    pub exp_rate: f64,
}

impl Term {
    fn eval(&self, th: f64) -> (f64, f64) {
        let e = if self.exp_offset == 0.0 && self.exp_rate == 0.0 {
            1.0
        } else {
            (self.exp_offset + self.exp_rate * th).exp()
        };
        let (p, dp) = power(th, self.power);
        (self.coef * p * e, self.coef * e * (dp + self.exp_rate * p))
    }
}

/// `(θ^p, p θ^(p-1))`
fn power(th: f64, p: f64) -> (f64, f64) {
    if p == 0.0 {
        return (1.0, 0.0);
    }
    let v = if p.fract() == 0.0 && p.abs() <= 64.0 {
        th.powi(p as i32)
    } else if p == 0.5 {
        th.sqrt()
    } else {
        th.powf(p)
    };
    (v, p * v / th)
}

fn sum(terms: &[Term], th: f64) -> (f64, f64) {
    terms.iter().fold((0.0, 0.0), |(v, d), t| {
        let (tv, td) = t.eval(th);
        (v + tv, d + td)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Sum,
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub numerator: Vec<Term>,
    #[serde(default)]
    pub denominator: Vec<Term>,
}

/// One open-circuit potential `U(c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub representation: Representation,
    pub c_max: f64,
    pub coefficients: Coefficients,
    /// Stoichiometry interval on which the potential is validated.
    pub valid_range: [f64; 2],
}

impl Potential {
    /// `(U, dU/dc)` at concentration `c`.
    pub fn eval(&self, c: f64) -> (f64, f64) {
        let th = c / self.c_max;
        let (n, dn) = sum(&self.coefficients.numerator, th);
        let (u, du) = match self.representation {
            Representation::Sum => (n, dn),
            Representation::Ratio => {
                let (d, dd) = sum(&self.coefficients.denominator, th);
                (n / d, (dn * d - n * dd) / (d * d))
            }
        };
        (u, du / self.c_max)
    }

    pub fn value(&self, c: f64) -> f64 {
        self.eval(c).0
    }

    pub fn derivative(&self, c: f64) -> f64 {
        self.eval(c).1
    }

    /// Concentration interval matching `valid_range`.
    pub fn concentration_range(&self) -> (f64, f64) {
        (self.valid_range[0] * self.c_max, self.valid_range[1] * self.c_max)
    }

    fn validate(&self, label: &'static str) -> Result<()> {
        let [lo, hi] = self.valid_range;
        if !(self.c_max > 0.0) || !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Parse(format!("{label}: invalid c_max or valid_range")));
        }
        if self.representation == Representation::Ratio && self.coefficients.denominator.is_empty() {
            return Err(Error::Parse(format!("{label}: ratio representation needs a denominator")));
        }
        const SAMPLES: usize = 2000;
        for k in 0..=SAMPLES {
            let th = lo + (hi - lo) * k as f64 / SAMPLES as f64;
            let (u, du) = self.eval(th * self.c_max);
            if !u.is_finite() || !du.is_finite() {
                return Err(Error::Domain { what: label, value: th });
            }
            if du >= 0.0 {
                return Err(Error::Parse(format!(
                    "{label}: dU/dc = {du:e} ≥ 0 at stoichiometry {th}; potential must decrease on its valid range"
                )));
            }
        }
        Ok(())
    }
}

/// Positive and negative electrode potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpTable {
    #[serde(rename = "U_plus")]
    pub u_plus: Potential,
    #[serde(rename = "U_minus")]
    pub u_minus: Potential,
}

const DEFAULT_TABLE: &str = include_str!("../../data/ocp_lionsimba.json");

impl OcpTable {
    /// Parses and validates a table. Both potentials must be finite and
    /// strictly decreasing in concentration on their valid ranges.
    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        t.u_plus.validate("U_plus")?;
        t.u_minus.validate("U_minus")?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The checked-in LIONSIMBA potentials.
    pub fn lionsimba() -> Self {
        Self::from_json(DEFAULT_TABLE).expect("bundled OCP table is valid")
    }
}
