use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant control `v: [0, T] → ℝⁿ` on `K` equal knots.
///
/// Knot `k` covers `[kT/K, (k+1)T/K)`. The declared bound `M` caps the
/// energy `½ Σ_k |v_k|² T/K` for admissible use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPath {
    n_channels: usize,
    t_final: f64,
    knots: Vec<Vec<f64>>,
    #[serde(default = "infinite_bound", with = "bound_serde")]
    bound: f64,
}

fn infinite_bound() -> f64 {
    f64::INFINITY
}

// JSON has no infinity; an unbounded control is written as null.
mod bound_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl ControlPath {
    pub fn new(n_channels: usize, t_final: f64, knots: Vec<Vec<f64>>, bound: f64) -> Result<Self> {
        let c = Self {
            n_channels,
            t_final,
            knots,
            bound,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn zeros(n_channels: usize, knots: usize, t_final: f64) -> Result<Self> {
        Self::new(
            n_channels,
            t_final,
            vec![vec![0.0; n_channels]; knots],
            f64::INFINITY,
        )
    }

    /// Same value on every knot.
    pub fn constant(values: &[f64], knots: usize, t_final: f64) -> Result<Self> {
        Self::new(
            values.len(),
            t_final,
            vec![values.to_vec(); knots],
            f64::INFINITY,
        )
    }

    pub fn with_bound(mut self, bound: f64) -> Result<Self> {
        self.bound = bound;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.knots.is_empty() {
            return Err(Error::InvalidParameter(
                "control needs at least one channel and one knot".into(),
            ));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "control horizon must be positive, got {}",
                self.t_final
            )));
        }
        if !(self.bound >= 0.0) {
            return Err(Error::InvalidParameter(
                "control bound M must be nonnegative".into(),
            ));
        }
        for (k, v) in self.knots.iter().enumerate() {
            if v.len() != self.n_channels {
                return Err(Error::InvalidParameter(format!(
                    "knot {k} has {} values, expected {}",
                    v.len(),
                    self.n_channels
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!("knot {k} is not finite")));
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn knot_count(&self) -> usize {
        self.knots.len()
    }

    pub fn knot_dt(&self) -> f64 {
        self.t_final / self.knots.len() as f64
    }

    pub fn knots(&self) -> &[Vec<f64>] {
        &self.knots
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Index of the knot containing `t` (the last knot for `t ≥ T`).
    pub fn knot_index(&self, t: f64) -> usize {
        let k = (t / self.knot_dt()).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.knots.len() - 1)
        }
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        &self.knots[self.knot_index(t)]
    }

    /// `½ Σ_k |v_k|² Δt`.
    pub fn cost(&self) -> f64 {
        0.5 * self.knot_dt() * self.knots.iter().flatten().map(|x| x * x).sum::<f64>()
    }

    pub fn is_admissible(&self) -> bool {
        self.cost() <= self.bound * (1.0 + 1e-12)
    }

    /// Rescales onto the admissible set; returns whether anything changed.
    pub fn enforce_bound(&mut self) -> bool {
        let cost = self.cost();
        if cost <= self.bound {
            return false;
        }
        let s = (self.bound / cost).sqrt();
        for x in self.knots.iter_mut().flatten() {
            *x *= s;
        }
        true
    }

    /// Knot-major flattening `[v_0^1, …, v_0^n, v_1^1, …]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.knots.iter().flatten().copied().collect()
    }

    pub fn from_flat(n_channels: usize, t_final: f64, flat: &[f64], bound: f64) -> Result<Self> {
        if n_channels == 0 || !flat.len().is_multiple_of(n_channels) {
            return Err(Error::InvalidParameter(
                "flat control length is not a multiple of the channel count".into(),
            ));
        }
        Self::new(
            n_channels,
            t_final,
            flat.chunks(n_channels).map(<[f64]>::to_vec).collect(),
            bound,
        )
    }

    /// Same control on `factor` times as many knots.
    pub fn refined(&self, factor: usize) -> Self {
        let knots = self
            .knots
            .iter()
            .flat_map(|v| std::iter::repeat_n(v.clone(), factor.max(1)))
            .collect();
        Self {
            knots,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_and_lookup() {
        let c = ControlPath::new(1, 1.0, vec![vec![1.0], vec![2.0]], f64::INFINITY).unwrap();
        assert_eq!(c.cost(), 0.5 * 0.5 * 5.0);
        assert_eq!(c.value_at(0.25), &[1.0]);
        assert_eq!(c.value_at(0.75), &[2.0]);
        assert_eq!(c.value_at(1.0), &[2.0]);
        assert_eq!(c.refined(2).cost(), c.cost());
    }

    #[test]
    fn bound_is_enforced_by_rescaling() {
        let mut c = ControlPath::constant(&[2.0, 0.0], 4, 1.0)
            .unwrap()
            .with_bound(0.5)
            .unwrap();
        assert!(!c.is_admissible());
        assert!(c.enforce_bound());
        assert!((c.cost() - 0.5).abs() < 1e-14);
        assert!(c.is_admissible());
    }

    #[test]
    fn bad_controls_rejected() {
        assert!(ControlPath::new(2, 1.0, vec![vec![1.0]], 1.0).is_err());
        assert!(ControlPath::new(1, 0.0, vec![vec![1.0]], 1.0).is_err());
        assert!(ControlPath::new(1, 1.0, vec![vec![f64::NAN]], 1.0).is_err());
        assert!(ControlPath::from_flat(2, 1.0, &[1.0, 2.0, 3.0], 1.0).is_err());
    }

    #[test]
    fn serde_round_trip_with_unbounded() {
        let c = ControlPath::constant(&[0.5], 3, 2.0).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"bound\":null"));
        assert_eq!(serde_json::from_str::<ControlPath>(&json).unwrap(), c);
    }
}
