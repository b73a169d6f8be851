//! Complexity exponents `(gamma, eta)` of the smoothed multilevel algorithm
//! under weak and strong rate assumptions, and the non-adaptive parameter
//! plan that attains them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weak rates `|E(g(Y^(l))) - E(g(Y))| <= min(delta^-a1 M^(-l a2), M^(-l a3))`
/// and strong rates `V(g(Y^(l)) - g(Y^(l-1))) <= delta^-b4 M^(-l b5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateAssumptions {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub beta4: f64,
    pub beta5: f64,
    pub r: usize,
    #[serde(rename = "M")]
    pub m: u32,
}

impl RateAssumptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha1 >= 0.0
            && self.alpha2 > 0.0
            && self.alpha3 >= 0.0
            && self.alpha3 <= self.alpha2
            && self.beta4 >= 0.0
            && self.beta5 > 0.0
            && self.m >= 2
            && [self.alpha1, self.alpha2, self.alpha3, self.beta4, self.beta5]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid rates {self:?}")))
        }
    }

    /// `q = min((r + 1 + a1) / a2, (r + 1) / a3)`, the second term infinite
    /// for `a3 = 0`.
    pub fn q(&self) -> f64 {
        let r1 = self.r as f64 + 1.0;
        let second = if self.alpha3 == 0.0 { f64::INFINITY } else { r1 / self.alpha3 };
        ((r1 + self.alpha1) / self.alpha2).min(second)
    }

    pub fn strong_ratio(&self) -> f64 {
        self.beta4 / self.beta5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplexityCase {
    /// `q <= b4 / b5`: single-level rate.
    SingleLevel,
    /// `q > b4 / b5`, `b5 > 1`.
    FastVariance,
    /// `q > b4 / b5`, `b5 < 1`.
    SlowVariance,
    /// `q > b4`, `b5 = 1`, with a cubed logarithm.
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityOrder {
    pub gamma: f64,
    pub eta: u32,
    pub case: ComplexityCase,
    pub q: f64,
    /// `q = b4 / b5`: the neighbouring case formulas coincide here.
    pub boundary: bool,
}

/// Cost exponents: cost `<= c eps^-gamma (log 1/eps)^eta`.
pub fn complexity_exponents(rates: &RateAssumptions) -> Result<ComplexityOrder> {
    rates.validate()?;
    let q = rates.q();
    let ratio = rates.strong_ratio();
    let r1 = rates.r as f64 + 1.0;
    let (case, gamma, eta) = if q <= ratio {
        (ComplexityCase::SingleLevel, 2.0 + q / r1, 1)
    } else if rates.beta5 > 1.0 {
        (ComplexityCase::FastVariance, 2.0 + ratio / r1, 1)
    } else if rates.beta5 < 1.0 {
        (
            ComplexityCase::SlowVariance,
            2.0 + (rates.beta4 + (1.0 - rates.beta5) * q) / r1,
            1,
        )
    } else if q > rates.beta4 {
        (ComplexityCase::Critical, 2.0 + rates.beta4 / r1, 3)
    } else {
        // b5 = 1 makes q > b4 / b5 and q > b4 the same condition
        return Err(Error::NotCovered(format!("q = {q}, beta4 = {}, beta5 = 1", rates.beta4)));
    };
    Ok(ComplexityOrder {
        gamma,
        eta,
        case,
        q,
        boundary: (q - ratio).abs() <= 1e-12 * q.abs().max(1.0),
    })
}

/// Oracle parameters for accuracy `eps`, real-valued and rounded up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPlan {
    pub eps: f64,
    pub delta: f64,
    pub k_real: f64,
    pub k: u64,
    pub l_star: f64,
    pub l0_real: f64,
    pub l1_real: f64,
    pub l0: u64,
    pub l1: u64,
    pub single_level: bool,
    pub n_l0_real: f64,
    pub n_l0: u64,
    /// Replications of the levels `l0 + 1 ..= l1` before rounding.
    pub schedule_real: Vec<f64>,
    pub schedule: Vec<u64>,
    /// Variance proxies `min(M^(L* b4) M^(-l b5), 1)` of those levels.
    pub variances: Vec<f64>,
}

pub fn plan_parameters(rates: &RateAssumptions, eps: f64) -> Result<ParameterPlan> {
    rates.validate()?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("need 0 < eps < 1, got {eps}")));
    }
    let r1 = rates.r as f64 + 1.0;
    let mf = rates.m as f64;
    let log_m_inv = (1.0 / eps).ln() / mf.ln();
    let l_star = log_m_inv / r1;
    let q = rates.q();
    let l1_real = q * l_star;
    let single_level = q <= rates.strong_ratio();
    let l0_real = if single_level {
        l1_real
    } else {
        (rates.strong_ratio() * l_star).min(l1_real)
    };
    let (l0, l1) = (l0_real.ceil() as u64, l1_real.ceil() as u64);
    let l0 = l0.min(l1);
    let n_l0_real = eps.powi(-2) * log_m_inv;

    let variances: Vec<f64> = (l0 + 1..=l1)
        .map(|l| (mf.powf(l_star * rates.beta4) * mf.powf(-(l as f64) * rates.beta5)).min(1.0))
        .collect();
    let g: f64 = variances
        .iter()
        .zip(l0 + 1..=l1)
        .map(|(v, l)| (v * mf.powi(l as i32)).sqrt())
        .sum();
    let base = eps.powi(-2) * (1.0 / eps).ln() * g;
    let schedule_real: Vec<f64> = variances
        .iter()
        .zip(l0 + 1..=l1)
        .map(|(v, l)| base * (v * mf.powi(-(l as i32))).sqrt())
        .collect();
    let k_real = eps.powf(-1.0 / r1);
    Ok(ParameterPlan {
        eps,
        delta: eps.powf(1.0 / r1),
        k_real,
        k: k_real.ceil() as u64,
        l_star,
        l0_real,
        l1_real,
        l0,
        l1,
        single_level,
        n_l0_real,
        n_l0: n_l0_real.ceil() as u64,
        schedule: schedule_real.iter().map(|n| n.ceil() as u64).collect(),
        schedule_real,
        variances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates(a1: f64, a2: f64, a3: f64, b4: f64, b5: f64, r: usize) -> RateAssumptions {
        RateAssumptions {
            alpha1: a1,
            alpha2: a2,
            alpha3: a3,
            beta4: b4,
            beta5: b5,
            r,
            m: 2,
        }
    }

    #[test]
    fn q_with_zero_alpha3() {
        assert_eq!(rates(1.0, 2.0, 0.0, 1.0, 1.0, 3).q(), 2.5);
        assert_eq!(rates(0.0, 1.0, 1.0, 1.0, 1.0, 3).q(), 4.0);
    }

    #[test]
    fn case_selection() {
        let c = complexity_exponents(&rates(0.0, 1.0, 1.0, 8.0, 1.0, 3)).unwrap();
        assert_eq!((c.case, c.eta), (ComplexityCase::SingleLevel, 1));
        assert!((c.gamma - 3.0).abs() < 1e-15);
        let c = complexity_exponents(&rates(0.0, 1.0, 1.0, 2.0, 2.0, 3)).unwrap();
        assert_eq!(c.case, ComplexityCase::FastVariance);
        assert!((c.gamma - 2.25).abs() < 1e-15);
        let c = complexity_exponents(&rates(0.0, 1.0, 1.0, 1.0, 0.5, 3)).unwrap();
        assert_eq!(c.case, ComplexityCase::SlowVariance);
        assert!((c.gamma - (2.0 + (1.0 + 0.5 * 4.0) / 4.0)).abs() < 1e-15);
        let c = complexity_exponents(&rates(0.0, 1.0, 1.0, 1.0, 1.0, 3)).unwrap();
        assert_eq!((c.case, c.eta), (ComplexityCase::Critical, 3));
        assert!((c.gamma - 2.25).abs() < 1e-15);
    }

    #[test]
    fn boundary_is_flagged() {
        let c = complexity_exponents(&rates(0.0, 1.0, 1.0, 8.0, 2.0, 3)).unwrap();
        assert!(c.boundary);
        assert_eq!(c.case, ComplexityCase::SingleLevel);
        assert!((c.gamma - 3.0).abs() < 1e-15);
    }

    #[test]
    fn plan_example() {
        let p = plan_parameters(&rates(0.0, 1.0, 1.0, 1.0, 2.0, 3), 2f64.powi(-8)).unwrap();
        assert!((p.l_star - 2.0).abs() < 1e-12);
        assert!((p.k_real - 4.0).abs() < 1e-12);
        assert!((p.delta - 0.25).abs() < 1e-12);
        assert!(plan_parameters(&rates(0.0, 1.0, 1.0, 1.0, 2.0, 3), 1.5).is_err());
    }
}
