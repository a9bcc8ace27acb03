//! Parameter boxes, observations and designs.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned box of named real parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct ParamSpace {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    #[serde(default)]
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawSpace> for ParamSpace {
    type Error = Error;

    fn try_from(raw: RawSpace) -> Result<Self> {
        let names = if raw.names.is_empty() {
            (1..=raw.lower.len())
                .map(|j| format!("theta_{j}"))
                .collect()
        } else {
            raw.names
        };
        ParamSpace::new(names, raw.lower, raw.upper)
    }
}

impl From<ParamSpace> for RawSpace {
    fn from(s: ParamSpace) -> Self {
        RawSpace {
            names: s.names,
            lower: s.lower,
            upper: s.upper,
        }
    }
}

impl ParamSpace {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidSpace("dimension must be at least 1".into()));
        }
        if names.len() != lower.len() || upper.len() != lower.len() {
            return Err(Error::InvalidSpace(format!(
                "{} names, {} lower bounds, {} upper bounds",
                names.len(),
                lower.len(),
                upper.len()
            )));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidSpace(format!(
                    "bounds of {} must satisfy lower < upper, got [{lo}, {hi}]",
                    names[j]
                )));
            }
        }
        Ok(ParamSpace {
            names,
            lower,
            upper,
        })
    }

    /// A box with default names `theta_1..theta_p`.
    pub fn from_bounds(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let names = (1..=lower.len()).map(|j| format!("theta_{j}")).collect();
        ParamSpace::new(names, lower, upper)
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        ParamSpace::from_bounds(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        if !self.contains(theta) {
            return Err(Error::OutOfBounds {
                theta: theta.to_vec(),
                lower: self.lower.clone(),
                upper: self.upper.clone(),
            });
        }
        Ok(())
    }

    /// Euclidean length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for (x, (lo, hi)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*lo, *hi);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| rng.random_range(*lo..=*hi))
            .collect()
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub theta: Vec<f64>,
    pub psi: f64,
}

impl Observation {
    pub fn new(theta: Vec<f64>, psi: f64) -> Self {
        Observation { theta, psi }
    }
}

/// An ordered list of observations sharing one dimension.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Design {
    observations: Vec<Observation>,
}

impl Design {
    pub fn new() -> Self {
        Design::default()
    }

    pub fn from_observations(observations: Vec<Observation>) -> Result<Self> {
        let mut d = Design::new();
        for o in observations {
            d.push(o)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, obs: Observation) -> Result<()> {
        if let Some(first) = self.observations.first() {
            if first.theta.len() != obs.theta.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.theta.len(),
                    got: obs.theta.len(),
                });
            }
        }
        self.observations.push(obs);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.observations.first().map(|o| o.theta.len())
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn thetas(&self) -> impl Iterator<Item = &[f64]> {
        self.observations.iter().map(|o| o.theta.as_slice())
    }

    pub fn psis(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.psi).collect()
    }

    /// The first `n` observations.
    pub fn prefix(&self, n: usize) -> Design {
        Design {
            observations: self.observations[..n.min(self.len())].to_vec(),
        }
    }

    /// Observation with the smallest `psi`; ties resolve to the earliest.
    pub fn argmin(&self) -> Option<&Observation> {
        self.observations
            .iter()
            .fold(None, |best: Option<&Observation>, o| match best {
                Some(b) if b.psi <= o.psi => Some(b),
                _ => Some(o),
            })
    }

    /// Observations grouped by bit-identical theta, in order of first appearance.
    pub fn replicate_groups(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut groups: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for o in &self.observations {
            match groups.iter_mut().find(|(t, _)| same_point(t, &o.theta)) {
                Some((_, psis)) => psis.push(o.psi),
                None => groups.push((o.theta.clone(), vec![o.psi])),
            }
        }
        groups
    }

    pub fn has_replicates(&self) -> bool {
        self.replicate_groups().iter().any(|(_, p)| p.len() > 1)
    }

    pub fn distinct_thetas(&self) -> usize {
        self.replicate_groups().len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let p = self.dim().unwrap_or(0);
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=p).map(|j| format!("theta_{j}")).collect();
        header.push("psi".into());
        w.write_record(&header)?;
        for o in &self.observations {
            let mut row: Vec<String> = o.theta.iter().map(|x| x.to_string()).collect();
            row.push(o.psi.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let cols = headers.len();
        if cols < 2 || &headers[cols - 1] != "psi" {
            return Err(Error::InvalidConfig(
                "design CSV needs columns theta_1..theta_p, psi".into(),
            ));
        }
        for (j, h) in headers.iter().take(cols - 1).enumerate() {
            if h != format!("theta_{}", j + 1) {
                return Err(Error::InvalidConfig(format!(
                    "unexpected design CSV column {h:?}"
                )));
            }
        }
        let mut d = Design::new();
        for record in r.records() {
            let record = record?;
            let values = record
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidConfig(format!("bad number {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let (theta, psi) = values.split_at(cols - 1);
            d.push(Observation::new(theta.to_vec(), psi[0]))?;
        }
        Ok(d)
    }
}

fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Mean and sample variance (n - 1 denominator; 0 for fewer than two values).
pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, ss / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_inverted_bounds() {
        assert!(ParamSpace::from_bounds(vec![1.0], vec![0.0]).is_err());
        assert!(ParamSpace::from_bounds(vec![], vec![]).is_err());
        assert!(ParamSpace::from_bounds(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn check_reports_bounds() {
        let s = ParamSpace::cube(2, -1.0, 1.0).unwrap();
        let err = s.check(&[0.0, 2.0]).unwrap_err().to_string();
        assert!(err.contains("upper=[1.0, 1.0]"), "{err}");
        assert!(matches!(
            s.check(&[0.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn argmin_prefers_earliest_tie() {
        let d = Design::from_observations(vec![
            Observation::new(vec![0.0], 3.0),
            Observation::new(vec![1.0], 1.0),
            Observation::new(vec![2.0], 1.0),
        ])
        .unwrap();
        assert_eq!(d.argmin().unwrap().theta, vec![1.0]);
    }

    #[test]
    fn replicate_groups_by_exact_theta() {
        let d = Design::from_observations(vec![
            Observation::new(vec![0.5, 0.5], 1.0),
            Observation::new(vec![0.1, 0.5], 2.0),
            Observation::new(vec![0.5, 0.5], 3.0),
        ])
        .unwrap();
        let g = d.replicate_groups();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].1, vec![1.0, 3.0]);
        assert!(d.has_replicates());
    }

    #[test]
    fn csv_rejects_wrong_header() {
        let csv = "x,y\n1,2\n";
        assert!(Design::read_csv(csv.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn csv_and_json_round_trip(rows in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6, -1e9f64..1e9), 0..20)) {
            let d = Design::from_observations(
                rows.iter().map(|(a, b, y)| Observation::new(vec![*a, *b], *y)).collect(),
            ).unwrap();
            let mut buf = Vec::new();
            d.write_csv(&mut buf).unwrap();
            if !d.is_empty() {
                prop_assert_eq!(&Design::read_csv(buf.as_slice()).unwrap(), &d);
            }
            let json = serde_json::to_string(&d).unwrap();
            prop_assert_eq!(serde_json::from_str::<Design>(&json).unwrap(), d);
        }

        #[test]
        fn samples_stay_in_bounds(seed in any::<u64>()) {
            use rand::SeedableRng;
            let s = ParamSpace::from_bounds(vec![-5.12, 0.0, 3.0], vec![5.12, 1e-3, 4.0]).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for x in s.sample_n(50, &mut rng) {
                prop_assert!(s.contains(&x));
            }
        }
    }
}
