//! Survival data types and non-parametric estimators.

mod beran;
mod sampling;

pub use beran::{beran_graph, beran_sf, beran_sf_from_weights, kernel_weights, Background, BeranGraph};
pub use sampling::{gumbel_argmax, gumbel_noise, gumbel_sample_time};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for the Beran at-risk mass.
pub const BERAN_EPS: f64 = 1e-8;

/// One `(x, T, delta)` observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub x: Vec<f64>,
    pub time: f64,
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(x: Vec<f64>, time: f64, event: bool) -> Self {
        Self { x, time, event }
    }
}

/// Risk-set ordering: ascending time, events before censorings at equal time.
pub fn risk_order(times: &[f64], events: &[bool]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| {
        times[a]
            .total_cmp(&times[b])
            .then(events[b].cmp(&events[a]))
            .then(a.cmp(&b))
    });
    order
}

/// Ordered collection of survival records with a cached risk-set ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    records: Vec<SurvivalRecord>,
    order: Vec<usize>,
}

impl SurvivalDataset {
    pub fn new(records: Vec<SurvivalRecord>) -> Result<Self> {
        let dim = records.first().map(|r| r.x.len()).unwrap_or(0);
        for (i, r) in records.iter().enumerate() {
            if !(r.time.is_finite() && r.time >= 0.0) {
                return Err(Error::contract(format!(
                    "record {i}: time {} must be finite and nonnegative",
                    r.time
                )));
            }
            if r.x.len() != dim {
                return Err(Error::contract(format!(
                    "record {i}: {} features, expected {dim}",
                    r.x.len()
                )));
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract(format!("record {i}: non-finite feature")));
            }
        }
        let times: Vec<f64> = records.iter().map(|r| r.time).collect();
        let events: Vec<bool> = records.iter().map(|r| r.event).collect();
        let order = risk_order(&times, &events);
        Ok(Self { records, order })
    }

    /// Builds a dataset from `(time, event)` pairs with empty feature vectors.
    pub fn from_outcomes(outcomes: &[(f64, bool)]) -> Result<Self> {
        Self::new(
            outcomes
                .iter()
                .map(|&(t, e)| SurvivalRecord::new(Vec::new(), t, e))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    /// Permutation sorting the records by the risk-set ordering.
    pub fn sorted_index(&self) -> &[usize] {
        &self.order
    }

    pub fn feature_dim(&self) -> usize {
        self.records.first().map(|r| r.x.len()).unwrap_or(0)
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.x.clone()).collect()
    }

    /// Share of right-censored records.
    pub fn censoring_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| !r.event).count() as f64 / self.records.len() as f64
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.records[i].clone()).collect())
    }

    pub fn time_range(&self) -> Option<(f64, f64)> {
        let first = self.order.first()?;
        let last = self.order.last()?;
        Some((self.records[*first].time, self.records[*last].time))
    }
}

/// Right-continuous step survival function.
///
/// `values[j]` holds on `[times[j], times[j + 1])`; the function is 1 on `[0, times[0])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSurvivalFunction {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl StepSurvivalFunction {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::contract(
                "survival function needs matching nonempty times and values",
            ));
        }
        if times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract("survival times must be nonnegative and strictly increasing"));
        }
        let mut prev = 1.0;
        for &v in &values {
            if !(0.0..=1.0).contains(&v) || v > prev {
                return Err(Error::contract(
                    "survival values must be non-increasing within [0, 1]",
                ));
            }
            prev = v;
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `S(t)`.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }
}

/// Point masses at the support times plus the mass left beyond the last time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteEventDistribution {
    pub times: Vec<f64>,
    pub masses: Vec<f64>,
    pub residual: f64,
}

impl DiscreteEventDistribution {
    /// `1 - sum_{j <= k} p_j` for every `k`.
    pub fn survival(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.masses
            .iter()
            .map(|p| {
                acc += p;
                1.0 - acc
            })
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.residual
    }
}

/// Product-limit estimate over every distinct observed time.
pub fn kaplan_meier(ds: &SurvivalDataset) -> Result<StepSurvivalFunction> {
    if ds.is_empty() {
        return Err(Error::contract("Kaplan-Meier needs a nonempty dataset"));
    }
    let recs = ds.records();
    let order = ds.sorted_index();
    let n = order.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut surv = 1.0;
    let mut i = 0;
    while i < n {
        let t = recs[order[i]].time;
        let at_risk = (n - i) as f64;
        let mut deaths = 0usize;
        let mut j = i;
        while j < n && recs[order[j]].time == t {
            deaths += recs[order[j]].event as usize;
            j += 1;
        }
        if deaths > 0 {
            surv *= 1.0 - deaths as f64 / at_risk;
        }
        times.push(t);
        values.push(surv);
        i = j;
    }
    StepSurvivalFunction::new(times, values)
}

/// Masses `S_{j-1} - S_j` of a step survival function, `S_0 = 1`.
pub fn sf_to_density(sf: &StepSurvivalFunction) -> DiscreteEventDistribution {
    let mut prev = 1.0;
    let masses = sf
        .values()
        .iter()
        .map(|&s| {
            let p = (prev - s).max(0.0);
            prev = s;
            p
        })
        .collect();
    DiscreteEventDistribution {
        times: sf.times().to_vec(),
        masses,
        residual: prev,
    }
}

pub fn km_density(ds: &SurvivalDataset) -> Result<DiscreteEventDistribution> {
    kaplan_meier(ds).map(|sf| sf_to_density(&sf))
}

/// `t_1 + sum_{i=1}^{n-1} S_i (t_{i+1} - t_i)`, i.e. the area under the step
/// function up to the last support time with `S_0 = 1` on `[0, t_1)`.
pub fn expected_event_time(sf: &StepSurvivalFunction) -> f64 {
    let t = sf.times();
    let s = sf.values();
    let mut total = t[0];
    for i in 0..t.len() - 1 {
        total += s[i] * (t[i + 1] - t[i]);
    }
    total
}

/// Harrell-style concordance with the pair weight `1[T_i < T_j] delta_i`.
///
/// Returns `None` when no admissible pair exists. Tied predictions count as discordant.
pub fn c_index_hard(pred: &[f64], times: &[f64], events: &[bool]) -> Result<Option<f64>> {
    if pred.len() != times.len() || times.len() != events.len() {
        return Err(Error::contract(format!(
            "c-index inputs differ in length: {} predictions, {} times, {} events",
            pred.len(),
            times.len(),
            events.len()
        )));
    }
    let mut num = 0u64;
    let mut den = 0u64;
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        for j in 0..times.len() {
            if times[i] < times[j] {
                den += 1;
                if pred[i] < pred[j] {
                    num += 1;
                }
            }
        }
    }
    Ok((den > 0).then(|| num as f64 / den as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(outcomes: &[(f64, bool)]) -> SurvivalDataset {
        SurvivalDataset::from_outcomes(outcomes).unwrap()
    }

    #[test]
    fn km_single_event() {
        let sf = kaplan_meier(&ds(&[(5.0, true)])).unwrap();
        assert_eq!(sf.eval(4.999), 1.0);
        assert_eq!(sf.eval(5.0), 0.0);
        assert_eq!(sf.eval(100.0), 0.0);
    }

    #[test]
    fn km_hand_example_with_censoring() {
        let sf = kaplan_meier(&ds(&[(1.0, true), (2.0, false), (3.0, true)])).unwrap();
        assert_eq!(sf.eval(0.5), 1.0);
        assert!((sf.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((sf.eval(2.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(sf.eval(3.0), 0.0);
    }

    #[test]
    fn km_all_censored_is_flat() {
        let sf = kaplan_meier(&ds(&[(1.0, false), (2.0, false), (4.0, false)])).unwrap();
        assert!(sf.values().iter().all(|&v| v == 1.0));
        let d = km_density(&ds(&[(1.0, false), (2.0, false)])).unwrap();
        assert!(d.masses.iter().all(|&p| p == 0.0));
        assert_eq!(d.residual, 1.0);
    }

    #[test]
    fn km_empty_is_contract_error() {
        assert!(matches!(
            kaplan_meier(&ds(&[])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn km_density_examples() {
        let d = km_density(&ds(&[(5.0, true)])).unwrap();
        assert_eq!(d.masses, vec![1.0]);
        assert_eq!(d.residual, 0.0);

        let d = km_density(&ds(&[(1.0, true), (2.0, false), (3.0, true)])).unwrap();
        assert_eq!(d.times, vec![1.0, 2.0, 3.0]);
        assert!((d.masses[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.masses[1], 0.0);
        assert!((d.masses[2] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn km_ties_put_events_before_censorings() {
        // At t = 2 two subjects are at risk (one dies, one censored): S drops by 1/2.
        let sf = kaplan_meier(&ds(&[(2.0, false), (2.0, true), (1.0, true), (3.0, true)])).unwrap();
        assert_eq!(sf.times(), &[1.0, 2.0, 3.0]);
        assert!((sf.eval(1.0) - 0.75).abs() < 1e-15);
        assert!((sf.eval(2.0) - 0.75 * (1.0 - 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn density_examples() {
        let sf = StepSurvivalFunction::new(vec![1.0, 2.0], vec![0.6, 0.2]).unwrap();
        let d = sf_to_density(&sf);
        assert!((d.masses[0] - 0.4).abs() < 1e-15);
        assert!((d.masses[1] - 0.4).abs() < 1e-15);
        assert_eq!(d.residual, 0.2);

        let flat = StepSurvivalFunction::new(vec![1.0, 2.0, 3.0], vec![1.0; 3]).unwrap();
        let d = sf_to_density(&flat);
        assert!(d.masses.iter().all(|&p| p == 0.0));
        assert_eq!(d.residual, 1.0);
    }

    #[test]
    fn expected_time_examples() {
        let sf = StepSurvivalFunction::new(vec![2.0, 4.0], vec![0.5, 0.0]).unwrap();
        assert_eq!(expected_event_time(&sf), 3.0);
        let sf = StepSurvivalFunction::new(vec![5.0], vec![0.0]).unwrap();
        assert_eq!(expected_event_time(&sf), 5.0);
        let sf = StepSurvivalFunction::new(vec![1.0, 3.0, 7.0], vec![1.0; 3]).unwrap();
        assert_eq!(expected_event_time(&sf), 7.0);
    }

    #[test]
    fn step_function_rejects_increase() {
        assert!(StepSurvivalFunction::new(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(StepSurvivalFunction::new(vec![2.0, 1.0], vec![0.5, 0.4]).is_err());
    }

    #[test]
    fn c_index_examples() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let e = [true; 4];
        assert_eq!(c_index_hard(&[1.0, 2.0, 3.0, 4.0], &t, &e).unwrap(), Some(1.0));
        assert_eq!(c_index_hard(&[4.0, 3.0, 2.0, 1.0], &t, &e).unwrap(), Some(0.0));
        // ties in the prediction are not concordant
        assert_eq!(c_index_hard(&[1.0, 1.0], &[1.0, 2.0], &[true, true]).unwrap(), Some(0.0));
        // only (1,2) and (1,3) are admissible: the censored second point anchors no pair
        let c = c_index_hard(&[1.0, 3.0, 2.0], &[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
        assert_eq!(c, Some(1.0));
    }

    #[test]
    fn c_index_undefined_without_admissible_pairs() {
        assert_eq!(
            c_index_hard(&[1.0, 2.0], &[1.0, 2.0], &[false, true]).unwrap(),
            None
        );
        assert!(c_index_hard(&[1.0], &[1.0, 2.0], &[true, true]).is_err());
    }
}
