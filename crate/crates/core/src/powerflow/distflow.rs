//! Closed-form DistFlow receiving-end voltage for a single radial line and
//! its sensitivity to a regulation power injection at the receiving bus.
//!
//! With `w = V_k^2` the branch equation is the quadratic
//! `w^2 + (2(rP + xQ) - V_i^2) w + (r^2 + x^2)(P^2 + Q^2) = 0`;
//! the larger root is the normal high-voltage operating point.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistFlowError {
    #[error("infeasible operating point: discriminant {0:.3e} is negative")]
    Infeasible(f64),
    #[error("sensitivity undefined at the voltage-collapse point (zero discriminant)")]
    Singular,
    #[error("power factor must lie in (0, 1], got {0}")]
    PowerFactor(f64),
    #[error("non-finite line data")]
    NonFinite,
}

/// One line `i -> k` in per unit; `p`, `q` are the flows received by bus `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistFlowLine {
    pub v_send: f64,
    pub r: f64,
    pub x: f64,
    pub p: f64,
    pub q: f64,
}

impl DistFlowLine {
    fn b(&self) -> f64 {
        2.0 * (self.r * self.p + self.x * self.q) - self.v_send * self.v_send
    }

    fn c(&self) -> f64 {
        (self.r * self.r + self.x * self.x) * (self.p * self.p + self.q * self.q)
    }

    pub fn discriminant(&self) -> f64 {
        let b = self.b();
        b * b - 4.0 * self.c()
    }

    fn check(&self) -> Result<(), DistFlowError> {
        if [self.v_send, self.r, self.x, self.p, self.q].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(DistFlowError::NonFinite)
        }
    }
}

/// Receiving-end voltage magnitude on the high-voltage branch.
pub fn distflow_voltage(line: &DistFlowLine) -> Result<f64, DistFlowError> {
    line.check()?;
    let disc = line.discriminant();
    if disc < 0.0 {
        return Err(DistFlowError::Infeasible(disc));
    }
    Ok((0.5 * (-line.b() + disc.sqrt())).sqrt())
}

/// Decomposition of `dV_k / dP_reg` into reactive, real and upstream-voltage terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityTerms {
    /// `dV_k/dQ_ik * dQ_ik/dP_reg`, p.u. voltage per p.u. power.
    pub q_term: f64,
    /// `dV_k/dP_ik * dP_ik/dP_reg` with unit flow coupling.
    pub p_term: f64,
    /// `dV_k/dV_i * dV_i/dP_reg`; zero for an infinite sending bus.
    pub v_term: f64,
    /// `dV_k/dV_i`, reported for reference.
    pub dvk_dvi: f64,
    pub power_factor: f64,
}

impl SensitivityTerms {
    pub fn total(&self) -> f64 {
        self.q_term + self.p_term + self.v_term
    }
}

/// Analytic sensitivity of the receiving-end voltage to regulation power at
/// constant power factor, with the sending bus held fixed.
pub fn voltage_sensitivity(line: &DistFlowLine, power_factor: f64) -> Result<SensitivityTerms, DistFlowError> {
    if !(power_factor > 0.0 && power_factor <= 1.0) {
        return Err(DistFlowError::PowerFactor(power_factor));
    }
    line.check()?;
    let disc = line.discriminant();
    if disc < 0.0 {
        return Err(DistFlowError::Infeasible(disc));
    }
    if disc == 0.0 {
        return Err(DistFlowError::Singular);
    }
    let (r, x, p, q, vi) = (line.r, line.x, line.p, line.q, line.v_send);
    let b = line.b();
    let root = disc.sqrt();
    let w = 0.5 * (-b + root);
    let v = w.sqrt();
    let z2 = r * r + x * x;
    // dw/dy = 0.5 * (-db/dy + (2 b db/dy - 4 dc/dy) / (2 sqrt(disc)))
    let dw = |db: f64, dc: f64| 0.5 * (-db + (2.0 * b * db - 4.0 * dc) / (2.0 * root));
    let dv_dp = dw(2.0 * r, 2.0 * z2 * p) / (2.0 * v);
    let dv_dq = dw(2.0 * x, 2.0 * z2 * q) / (2.0 * v);
    let dv_dvi = dw(-2.0 * vi, 0.0) / (2.0 * v);
    let dq_dpreg = power_factor.acos().tan();
    let q_term = if power_factor == 1.0 { 0.0 } else { dv_dq * dq_dpreg };
    Ok(SensitivityTerms { q_term, p_term: dv_dp, v_term: 0.0, dvk_dvi: dv_dvi, power_factor })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: DistFlowLine = DistFlowLine { v_send: 1.0, r: 0.01, x: 0.01, p: 0.5, q: 0.1 };

    #[test]
    fn reference_point() {
        // Larger root of w^2 - 0.988 w + 5.2e-5 = 0, evaluated at 30 digits.
        let v = distflow_voltage(&BASE).unwrap();
        assert!((v - 0.993_955_414_300_373).abs() < 1e-13, "{v}");
    }

    #[test]
    fn lossless_and_no_flow_identities() {
        let lossless = DistFlowLine { r: 0.0, x: 0.0, v_send: 1.03, ..BASE };
        assert_eq!(distflow_voltage(&lossless).unwrap(), 1.03);
        let idle = DistFlowLine { p: 0.0, q: 0.0, v_send: 0.98, ..BASE };
        assert!((distflow_voltage(&idle).unwrap() - 0.98).abs() < 1e-15);
    }

    #[test]
    fn infeasible_point() {
        let heavy = DistFlowLine { r: 0.5, x: 0.5, p: 5.0, q: 1.0, ..BASE };
        assert!(matches!(distflow_voltage(&heavy), Err(DistFlowError::Infeasible(_))));
        assert!(matches!(voltage_sensitivity(&heavy, 0.97), Err(DistFlowError::Infeasible(_))));
    }

    #[test]
    fn unity_power_factor_has_no_reactive_term() {
        let s = voltage_sensitivity(&BASE, 1.0).unwrap();
        assert_eq!(s.q_term, 0.0);
        assert_eq!(s.v_term, 0.0);
        assert!(s.p_term < 0.0);
    }

    #[test]
    fn power_factor_domain() {
        for pf in [0.0, -0.5, 1.01, f64::NAN] {
            assert!(matches!(voltage_sensitivity(&BASE, pf), Err(DistFlowError::PowerFactor(_))));
        }
    }

    #[test]
    fn sensitivity_grows_with_loading() {
        let light = voltage_sensitivity(&DistFlowLine { p: 0.2, ..BASE }, 0.97).unwrap();
        let heavy = voltage_sensitivity(&DistFlowLine { p: 0.8, ..BASE }, 0.97).unwrap();
        assert!(heavy.total().abs() > light.total().abs());
    }
}
