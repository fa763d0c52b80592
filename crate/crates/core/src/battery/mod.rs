//! Reduced single-particle lithium-ion model and the fast-charging problem.

mod ocp;

pub use ocp::{Coefficients, OcpTable, Potential, Representation, Term};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Constraint, OCProblem, ScalarField, SystemModel, Vector};

pub const C_MAX_POS: f64 = 51554.0;
pub const C_MAX_NEG: f64 = 30555.0;
pub const SOC_OFFSET: f64 = 0.9917;
pub const SOC_SPAN: f64 = -0.4962;
pub const TAU: f64 = 1.236e-8;
pub const R_F: f64 = 0.0022;
pub const K_POS: f64 = 5.031e-11;
pub const K_NEG: f64 = 2.334e-11;
pub const AREA_POS: f64 = 221.69;
pub const AREA_NEG: f64 = 189.6681;
pub const I_MAX: f64 = 300.0;
pub const V_MAX: f64 = 4.5;
/// Negative-electrode stoichiometry at zero SOC.
pub const THETA_NEG_EMPTY: f64 = 0.1;

/// Diagonal SPM dynamics with output rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SpmModel {
    pub a: [f64; 5],
    pub c_pos_ave: [f64; 5],
    pub c_pos_surf: [f64; 5],
    pub c_neg_ave: [f64; 5],
    pub c_neg_surf: [f64; 5],
    /// Constant added to both negative-electrode outputs.
    pub neg_offset: f64,
}

impl Default for SpmModel {
    fn default() -> Self {
        Self {
            a: [0.0, -0.0514, -0.4211, -0.2006, -1.6422],
            c_pos_ave: [-0.1639, 0.0, 0.0, 0.0, 0.0],
            c_pos_surf: [-0.1639, -0.1193, -0.8643, 0.0, 0.0],
            c_neg_ave: [0.1183, 0.0, 0.0, 0.0, 0.0],
            c_neg_surf: [0.1183, 0.0, 0.0, 0.0861, 0.6237],
            neg_offset: neg_offset(),
        }
    }
}

/// Offset placing the negative electrode at `THETA_NEG_EMPTY` when SOC = 0.
fn neg_offset() -> f64 {
    let x1_empty = initial_state_from_soc(0.0)[0];
    THETA_NEG_EMPTY * C_MAX_NEG - 0.1183 * x1_empty
}

fn dot(row: &[f64; 5], x: &Vector) -> f64 {
    row.iter().zip(x.iter()).map(|(r, v)| r * v).sum()
}

impl SpmModel {
    pub fn system(&self) -> SystemModel {
        SystemModel::linear_diagonal(self.a.to_vec())
    }

    pub fn pos_average(&self, x: &Vector) -> f64 {
        dot(&self.c_pos_ave, x)
    }

    pub fn pos_surface(&self, x: &Vector) -> f64 {
        dot(&self.c_pos_surf, x)
    }

    pub fn neg_average(&self, x: &Vector) -> f64 {
        dot(&self.c_neg_ave, x) + self.neg_offset
    }

    pub fn neg_surface(&self, x: &Vector) -> f64 {
        dot(&self.c_neg_surf, x) + self.neg_offset
    }

    pub fn soc(&self, x: &Vector) -> f64 {
        soc(self.pos_average(x))
    }

    /// Terminal voltage at state `x` and current `i` with gradients
    /// `(V, ∂V/∂x, ∂V/∂I)`.
    pub fn voltage(&self, x: &Vector, i: f64, ocp: &OcpTable) -> Result<(f64, Vector, f64)> {
        let v = voltage_partials(self.pos_surface(x), self.neg_surface(x), i, ocp)?;
        let gx = Vector::from_iterator(
            5,
            (0..5).map(|j| v.d_cps * self.c_pos_surf[j] + v.d_cns * self.c_neg_surf[j]),
        );
        Ok((v.value, gx, v.d_i))
    }
}

/// `(c_ave/51554 − 0.9917)/(−0.4962)`. Values outside `[0, 1]` are returned
/// unchanged and logged.
pub fn soc(c_ave: f64) -> f64 {
    let s = (c_ave / C_MAX_POS - SOC_OFFSET) / SOC_SPAN;
    if !(0.0..=1.0).contains(&s) {
        log::warn!("SOC {s} outside [0, 1] at c_ave = {c_ave}");
    }
    s
}

/// Inverse of [`soc`].
pub fn c_ave_from_soc(soc: f64) -> f64 {
    C_MAX_POS * (SOC_OFFSET + SOC_SPAN * soc)
}

fn i0(k: f64, c: f64, c_max: f64, what: &'static str) -> Result<(f64, f64)> {
    if !(c > 0.0 && c < c_max) {
        return Err(Error::Domain { what, value: c });
    }
    let r = (1000.0 * c * (c_max - c)).sqrt();
    Ok((k * r, k * 1000.0 * (c_max - 2.0 * c) / (2.0 * r)))
}

/// Exchange currents `(i0⁺, i0⁻)`.
pub fn exchange_currents(c_ps: f64, c_ns: f64) -> Result<(f64, f64)> {
    Ok((
        i0(K_POS, c_ps, C_MAX_POS, "positive surface concentration")?.0,
        i0(K_NEG, c_ns, C_MAX_NEG, "negative surface concentration")?.0,
    ))
}

/// Voltage and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltagePartials {
    pub value: f64,
    pub d_cps: f64,
    pub d_cns: f64,
    pub d_i: f64,
}

pub fn voltage(c_ps: f64, c_ns: f64, i: f64, ocp: &OcpTable) -> Result<f64> {
    Ok(voltage_partials(c_ps, c_ns, i, ocp)?.value)
}

pub fn voltage_partials(c_ps: f64, c_ns: f64, i: f64, ocp: &OcpTable) -> Result<VoltagePartials> {
    let (ip, dip) = i0(K_POS, c_ps, C_MAX_POS, "positive surface concentration")?;
    let (ineg, din) = i0(K_NEG, c_ns, C_MAX_NEG, "negative surface concentration")?;
    let a = i / (AREA_POS * ip);
    let b = -i / (AREA_NEG * ineg);
    let (up, dup) = ocp.u_plus.eval(c_ps);
    let (un, dun) = ocp.u_minus.eval(c_ns);
    let ra = TAU / (1.0 + a * a).sqrt();
    let rb = TAU / (1.0 + b * b).sqrt();
    Ok(VoltagePartials {
        value: TAU * a.asinh() - TAU * b.asinh() + up - un + R_F * i,
        d_cps: ra * (-a / ip) * dip + dup,
        d_cns: -rb * (-b / ineg) * din - dun,
        d_i: ra / (AREA_POS * ip) + rb / (AREA_NEG * ineg) + R_F,
    })
}

/// Rest state at `soc0`: all decaying modes at zero.
pub fn initial_state_from_soc(soc0: f64) -> Vector {
    let mut x = Vector::zeros(5);
    x[0] = c_ave_from_soc(soc0) / -0.1639;
    x
}

/// Charging scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub soc0: f64,
    pub t_f: f64,
    #[serde(rename = "I_max", default = "default_i_max")]
    pub i_max: f64,
    #[serde(rename = "V_max", default = "default_v_max")]
    pub v_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

fn default_i_max() -> f64 {
    I_MAX
}

fn default_v_max() -> f64 {
    V_MAX
}

const DEFAULT_SCENARIO: &str = include_str!("../../data/spm_scenario.json");

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn default_charging() -> Self {
        Self::from_json(DEFAULT_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn problem(&self, ocp: &OcpTable) -> Result<OCProblem> {
        build_problem(self.soc0, self.t_f, self.i_max, self.v_max, ocp)
    }
}

/// Maximize terminal SOC subject to `0 ≤ I ≤ 300` and `V ≤ 4.5`.
pub fn build_charging_problem(soc0: f64, t_f: f64, ocp: &OcpTable) -> Result<OCProblem> {
    build_problem(soc0, t_f, I_MAX, V_MAX, ocp)
}

fn build_problem(soc0: f64, t_f: f64, i_max: f64, v_max: f64, ocp: &OcpTable) -> Result<OCProblem> {
    if !(0.0..1.0).contains(&soc0) {
        return Err(Error::InvalidArgument(format!("soc0 = {soc0} outside [0, 1)")));
    }
    let model = SpmModel::default();
    let x0 = initial_state_from_soc(soc0);
    let dsoc_dx1 = model.c_pos_ave[0] / (C_MAX_POS * SOC_SPAN);
    let m = model.clone();
    let phi = ScalarField::new(
        move |x| -soc(m.pos_average(x)),
        move |_| {
            let mut g = Vector::zeros(5);
            g[0] = -dsoc_dx1;
            g
        },
    );
    let (mv, mg, mu) = (model.clone(), model.clone(), model.clone());
    let (ov, og, ou) = (ocp.clone(), ocp.clone(), ocp.clone());
    let voltage = Constraint::mixed(
        "voltage",
        move |x, i| voltage(mv.pos_surface(x), mv.neg_surface(x), i, &ov).map_or(f64::NAN, |v| v - v_max),
        move |x, i| mg.voltage(x, i, &og).map_or_else(|_| Vector::from_element(5, f64::NAN), |v| v.1),
        move |x, i| voltage_partials(mu.pos_surface(x), mu.neg_surface(x), i, &ou).map_or(f64::NAN, |v| v.d_i),
    );
    Ok(OCProblem::new(
        "spm_charging",
        model.system(),
        x0.iter().copied().collect(),
        t_f,
        (0.0, i_max),
        phi,
    )?
    .with_constraint(voltage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn soc_examples() {
        assert_abs_diff_eq!(soc(51554.0 * 0.9917), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(soc(25545.01), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(soc(51554.0 * (0.9917 - 0.2481)), 0.5, epsilon = 1e-12);
        assert!(soc(60000.0) < 0.0);
    }

    #[test]
    fn exchange_current_examples() {
        let (ip, _) = exchange_currents(51554.0 / 2.0, 15000.0).unwrap();
        assert_relative_eq!(ip, 5.031e-11 * 25777.0 * 1000f64.sqrt(), max_relative = 1e-12);
        let (_, ineg) = exchange_currents(25000.0, 1e-12).unwrap();
        assert!(ineg < 1e-12);
        assert!(matches!(exchange_currents(51554.0, 15000.0), Err(Error::Domain { .. })));
        assert!(matches!(exchange_currents(25000.0, 0.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn zero_current_voltage_is_ocv_difference() {
        let ocp = OcpTable::lionsimba();
        let (cp, cn) = (40000.0, 10000.0);
        assert_eq!(
            voltage(cp, cn, 0.0, &ocp).unwrap(),
            ocp.u_plus.value(cp) - ocp.u_minus.value(cn)
        );
    }

    #[test]
    fn voltage_partials_match_finite_differences() {
        let ocp = OcpTable::lionsimba();
        for &(cp, cn, i) in &[(45000.0, 8000.0, 150.0), (30000.0, 18000.0, 300.0), (50000.0, 4000.0, 10.0)] {
            let p = voltage_partials(cp, cn, i, &ocp).unwrap();
            let f = |a: f64, b: f64, c: f64| voltage(a, b, c, &ocp).unwrap();
            let h = 1e-2;
            assert_relative_eq!(p.d_cps, (f(cp + h, cn, i) - f(cp - h, cn, i)) / (2.0 * h), max_relative = 1e-5);
            assert_relative_eq!(p.d_cns, (f(cp, cn + h, i) - f(cp, cn - h, i)) / (2.0 * h), max_relative = 1e-5);
            assert_relative_eq!(p.d_i, (f(cp, cn, i + h) - f(cp, cn, i - h)) / (2.0 * h), max_relative = 1e-5);
            assert!(p.d_i > 0.0 && p.d_cps < 0.0 && p.d_cns > 0.0);
        }
    }

    #[test]
    fn rest_state_at_zero_soc() {
        let x = initial_state_from_soc(0.0);
        assert_relative_eq!(x[0], 51554.0 * 0.9917 / -0.1639, max_relative = 1e-14);
        assert!(x.iter().skip(1).all(|v| *v == 0.0));
        let m = SpmModel::default();
        assert_relative_eq!(m.pos_surface(&x), m.pos_average(&x), max_relative = 1e-14);
        assert_relative_eq!(m.neg_average(&x) / C_MAX_NEG, THETA_NEG_EMPTY, max_relative = 1e-12);
        let ocp = OcpTable::lionsimba();
        let (v, _, _) = m.voltage(&x, 0.0, &ocp).unwrap();
        assert_eq!(v, ocp.u_plus.value(m.pos_surface(&x)) - ocp.u_minus.value(m.neg_surface(&x)));
    }

    #[test]
    fn charging_problem_shape() {
        let ocp = OcpTable::lionsimba();
        let p = build_charging_problem(0.1, 450.0, &ocp).unwrap();
        assert_eq!(p.constraints.len(), 3);
        assert_eq!(p.constraints[0].value(&p.x0, 300.0), 0.0);
        assert_eq!(p.constraints[1].value(&p.x0, 0.0), 0.0);
        assert_eq!(p.system.diagonal().unwrap()[0], 0.0);
        let soc_grad = -p.phi.grad(&p.x0);
        assert!(soc_grad[0] > 0.0);
        assert!(soc_grad.iter().skip(1).all(|v| *v == 0.0));
        assert_abs_diff_eq!(-p.phi.value(&p.x0), 0.1, epsilon = 1e-12);
        let gx = p.constraints[2].value_grad_x(&p.x0, 100.0);
        assert!(gx.iter().all(|v| *v >= 0.0));
        assert!(build_charging_problem(1.0, 10.0, &ocp).is_err());
    }

    #[test]
    fn scenario_defaults() {
        let s = Scenario::default_charging();
        assert_eq!((s.soc0, s.i_max, s.v_max), (0.1, 300.0, 4.5));
        let parsed = Scenario::from_json(r#"{"soc0": 0.2, "t_f": 100}"#).unwrap();
        assert_eq!(parsed.i_max, 300.0);
        assert_eq!(parsed.dt, None);
    }
}
