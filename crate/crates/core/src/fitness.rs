//! Weibull host/pathogen fitness and infection bookkeeping.
//!
//! Host fitness is one minus the Weibull CDF of the combined autoimmunity and
//! viral load, `sqrt(a²·err_real² + Σ v²·err_gen_i²)`, floored at a fraction of
//! its maximum (1). Pathogen fitness inside a host is `v · CDF(v · err_gen)`,
//! floored at a fraction of its maximum (`v`). A pathogen infects a host when
//! its within-host fitness exceeds the infection threshold.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adversarial::IndividualId;

/// Slack applied to the inclusive deficit boundary so that a deficit that is
/// exactly the threshold up to rounding still counts.
const DEFICIT_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessParams {
    /// Weibull shape (effective phenotype dimensions).
    pub k: f64,
    /// Weibull scale.
    pub lambda: f64,
    /// Autoimmunity factor.
    pub a: f64,
    /// Viral reproduction factor.
    pub v: f64,
    pub infection_threshold: f64,
    pub host_floor_frac: f64,
    pub pathogen_floor_frac: f64,
    pub deficit_threshold: f64,
}

impl Default for FitnessParams {
    fn default() -> Self {
        Self {
            k: 2.0,
            lambda: 1.0,
            a: 1.0,
            v: 1.5,
            infection_threshold: 1.0,
            host_floor_frac: 0.01,
            pathogen_floor_frac: 0.0025,
            deficit_threshold: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum FitnessError {
    #[error("{name} must be in [0, 1], got {value}")]
    ErrorOutOfRange { name: &'static str, value: f64 },
    #[error("Weibull argument must be a non-negative number, got {0}")]
    NegativeArgument(f64),
    #[error("invalid fitness parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
}

impl FitnessParams {
    pub fn validate(&self) -> Result<(), FitnessError> {
        let positive = [("k", self.k), ("lambda", self.lambda), ("a", self.a), ("v", self.v)];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(FitnessError::InvalidParam { name, value });
            }
        }
        let fractions = [("host_floor_frac", self.host_floor_frac), ("pathogen_floor_frac", self.pathogen_floor_frac)];
        for (name, value) in fractions {
            if !(value > 0.0 && value < 1.0) {
                return Err(FitnessError::InvalidParam { name, value });
            }
        }
        let finite = [("infection_threshold", self.infection_threshold), ("deficit_threshold", self.deficit_threshold)];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(FitnessError::InvalidParam { name, value });
            }
        }
        Ok(())
    }

    /// Lowest value [`host_fitness`] can return.
    pub fn host_floor(&self) -> f64 {
        self.host_floor_frac
    }

    /// Lowest value [`pathogen_fitness`] can return.
    pub fn pathogen_floor(&self) -> f64 {
        self.pathogen_floor_frac * self.v
    }
}

/// `1 − exp(−(x/λ)^k)`.
pub fn weibull_cdf(k: f64, lambda: f64, x: f64) -> Result<f64, FitnessError> {
    if !(x >= 0.0) {
        return Err(FitnessError::NegativeArgument(x));
    }
    if !(k > 0.0) {
        return Err(FitnessError::InvalidParam { name: "k", value: k });
    }
    if !(lambda > 0.0) {
        return Err(FitnessError::InvalidParam { name: "lambda", value: lambda });
    }
    Ok(-libm::expm1(-libm::pow(x / lambda, k)))
}

fn check_error(name: &'static str, value: f64) -> Result<(), FitnessError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(FitnessError::ErrorOutOfRange { name, value })
    }
}

/// Host fitness given its own autoimmunity error and the `err_gen` of every
/// pathogen currently infecting it. Loads combine in quadrature.
pub fn host_fitness(err_real: f64, gen_errors: &[f64], p: &FitnessParams) -> Result<f64, FitnessError> {
    check_error("err_real", err_real)?;
    let mut load = p.a * p.a * err_real * err_real;
    for &e in gen_errors {
        check_error("err_gen", e)?;
        load += p.v * p.v * e * e;
    }
    let raw = 1.0 - weibull_cdf(p.k, p.lambda, libm::sqrt(load))?;
    Ok(raw.max(p.host_floor()))
}

/// Within-host pathogen fitness.
pub fn pathogen_fitness(err_gen: f64, p: &FitnessParams) -> Result<f64, FitnessError> {
    check_error("err_gen", err_gen)?;
    let raw = p.v * weibull_cdf(p.k, p.lambda, p.v * err_gen)?;
    Ok(raw.max(p.pathogen_floor()))
}

/// The 5% rule: a host only learns from a pathogen whose marginal fitness
/// deficit reaches `deficit_threshold` (inclusive).
pub fn should_train_host(host_fitness_without: f64, host_fitness_with: f64, p: &FitnessParams) -> bool {
    host_fitness_without - host_fitness_with >= p.deficit_threshold - DEFICIT_SLACK
}

/// Pathogens currently infecting one host, with their last measured `err_gen`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InfectionState {
    pub host_id: IndividualId,
    pub infecting: BTreeMap<IndividualId, f64>,
}

impl InfectionState {
    pub fn new(host_id: IndividualId) -> Self {
        Self { host_id, infecting: BTreeMap::new() }
    }

    /// Records a fresh `err_gen` measurement for `pathogen`. Returns whether the
    /// host is infected by it afterwards.
    pub fn update(&mut self, pathogen: IndividualId, err_gen: f64, p: &FitnessParams) -> Result<bool, FitnessError> {
        if pathogen_fitness(err_gen, p)? > p.infection_threshold {
            self.infecting.insert(pathogen, err_gen);
            Ok(true)
        } else {
            self.infecting.remove(&pathogen);
            Ok(false)
        }
    }

    pub fn is_infected_by(&self, pathogen: IndividualId) -> bool {
        self.infecting.contains_key(&pathogen)
    }

    /// `err_gen` of every infecting pathogen, in id order.
    pub fn loads(&self) -> Vec<f64> {
        self.infecting.values().copied().collect()
    }

    pub fn loads_excluding(&self, pathogen: IndividualId) -> Vec<f64> {
        self.infecting.iter().filter(|(id, _)| **id != pathogen).map(|(_, e)| *e).collect()
    }

    /// Host fitness with and without `pathogen`'s load, `err_real` held fixed.
    pub fn marginal_fitness(
        &self,
        err_real: f64,
        pathogen: IndividualId,
        p: &FitnessParams,
    ) -> Result<(f64, f64), FitnessError> {
        let without = host_fitness(err_real, &self.loads_excluding(pathogen), p)?;
        let with = host_fitness(err_real, &self.loads(), p)?;
        Ok((without, with))
    }
}

/// Convenience wrapper over [`InfectionState::update`] returning the new state.
pub fn update_infection(
    mut state: InfectionState,
    pathogen: IndividualId,
    err_gen: f64,
    p: &FitnessParams,
) -> Result<InfectionState, FitnessError> {
    state.update(pathogen, err_gen, p)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit(a: f64, v: f64) -> FitnessParams {
        FitnessParams { k: 2.0, lambda: 1.0, a, v, ..FitnessParams::default() }
    }

    #[test]
    fn cdf_closed_forms() {
        assert_eq!(weibull_cdf(3.0, 2.0, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(weibull_cdf(1.0, 1.0, core::f64::consts::LN_2).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(weibull_cdf(2.0, 1.0, 1.0).unwrap(), 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
        assert!(matches!(weibull_cdf(2.0, 1.0, -0.1), Err(FitnessError::NegativeArgument(_))));
        assert!(weibull_cdf(2.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn host_examples() {
        let p = FitnessParams::default();
        assert_eq!(host_fitness(0.0, &[], &p).unwrap(), 1.0);
        let huge = FitnessParams { a: 1e6, ..p };
        assert_eq!(host_fitness(1.0, &[], &huge).unwrap(), 0.01);
        let h = host_fitness(0.3, &[0.4], &unit(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(h, (-0.25f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(h, 0.7788, epsilon = 1e-4);
    }

    #[test]
    fn host_rejects_out_of_range() {
        let p = FitnessParams::default();
        assert!(host_fitness(1.2, &[], &p).is_err());
        assert!(host_fitness(0.2, &[-0.1], &p).is_err());
    }

    #[test]
    fn pathogen_examples() {
        let p = FitnessParams::default();
        assert_abs_diff_eq!(pathogen_fitness(0.0, &p).unwrap(), 0.0025 * 1.5, epsilon = 1e-15);
        let f = pathogen_fitness(1.0, &unit(1.0, 1.5)).unwrap();
        assert_abs_diff_eq!(f, 1.5 * (1.0 - (-2.25f64).exp()), epsilon = 1e-12);
        assert_abs_diff_eq!(f, 1.3419, epsilon = 1e-4);
        assert!(pathogen_fitness(0.2, &p).unwrap() <= pathogen_fitness(0.8, &p).unwrap());
        assert!(pathogen_fitness(1.5, &p).is_err());
    }

    #[test]
    fn infection_threshold() {
        let p = unit(1.0, 1.5);
        let host = IndividualId(0);
        let path = IndividualId(7);
        let s = update_infection(InfectionState::new(host), path, 0.0, &p).unwrap();
        assert!(!s.is_infected_by(path));
        let f = pathogen_fitness(0.9, &p).unwrap();
        assert_abs_diff_eq!(f, 1.5 * (1.0 - (-1.8225f64).exp()), epsilon = 1e-12);
        assert!(f > 1.0);
        let s = update_infection(s, path, 0.9, &p).unwrap();
        assert!(s.is_infected_by(path));
        assert_eq!(s.infecting[&path], 0.9);
        let s = update_infection(s, path, 0.3, &p).unwrap();
        assert!(!s.is_infected_by(path));
    }

    #[test]
    fn infection_update_idempotent() {
        let p = FitnessParams::default();
        let once = update_infection(InfectionState::new(IndividualId(1)), IndividualId(2), 0.95, &p).unwrap();
        let twice = update_infection(once.clone(), IndividualId(2), 0.95, &p).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn deficit_rule() {
        let p = FitnessParams::default();
        assert!(!should_train_host(0.80, 0.76, &p));
        assert!(should_train_host(0.80, 0.75, &p));
        assert!(should_train_host(1.0, 0.95, &p));
        assert!(!should_train_host(0.6, 0.6, &p));
    }

    #[test]
    fn marginal_fitness_isolates_one_pathogen() {
        let p = FitnessParams::default();
        let mut s = InfectionState::new(IndividualId(0));
        s.update(IndividualId(1), 0.9, &p).unwrap();
        s.update(IndividualId(2), 0.95, &p).unwrap();
        let (without, with) = s.marginal_fitness(0.1, IndividualId(2), &p).unwrap();
        assert_eq!(without, host_fitness(0.1, &[0.9], &p).unwrap());
        assert_eq!(with, host_fitness(0.1, &[0.9, 0.95], &p).unwrap());
        assert!(without > with);
        // a non-infecting pathogen contributes no deficit
        let (w0, w1) = s.marginal_fitness(0.1, IndividualId(9), &p).unwrap();
        assert_eq!(w0, w1);
    }

    #[test]
    fn params_validate() {
        assert!(FitnessParams::default().validate().is_ok());
        assert!(FitnessParams { k: 0.0, ..Default::default() }.validate().is_err());
        assert!(FitnessParams { host_floor_frac: 1.0, ..Default::default() }.validate().is_err());
    }
}
