//! Perturbation norms and their Hölder duals.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::Error;

/// The `p` of an `ℓ_p` perturbation ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    Inf,
    P(f64),
}

impl Norm {
    pub fn p(value: f64) -> Result<Self, Error> {
        if value.is_infinite() && value > 0.0 {
            Ok(Norm::Inf)
        } else if value.is_finite() && value >= 1.0 {
            Ok(Norm::P(value))
        } else {
            Err(Error::Property(format!("norm p must be >= 1 or inf, got {value}")))
        }
    }

    pub fn is_inf(self) -> bool {
        matches!(self, Norm::Inf)
    }

    /// `q` with `1/p + 1/q = 1`, as a norm.
    pub fn dual(self) -> Norm {
        match self {
            Norm::Inf => Norm::P(1.0),
            Norm::P(p) if p == 1.0 => Norm::Inf,
            Norm::P(p) => Norm::P(p / (p - 1.0)),
        }
    }

    pub fn eval(self, v: ArrayView1<f64>) -> f64 {
        match self {
            Norm::Inf => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            Norm::P(p) if p == 1.0 => v.iter().map(|x| x.abs()).sum(),
            Norm::P(p) if p == 2.0 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::P(p) => v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }

    /// A subgradient of the norm at `v`, with `sign(0) = 0` and the zero vector
    /// mapped to zero. For `ℓ_∞` the lowest index attaining the maximum is used.
    pub fn subgradient(self, v: ArrayView1<f64>) -> Array1<f64> {
        let mut g = Array1::zeros(v.len());
        match self {
            Norm::P(p) if p == 1.0 => {
                for (gi, &x) in g.iter_mut().zip(v.iter()) {
                    *gi = sign(x);
                }
            }
            Norm::Inf => {
                let mut best = 0.0;
                let mut arg = None;
                for (i, &x) in v.iter().enumerate() {
                    if x.abs() > best {
                        best = x.abs();
                        arg = Some(i);
                    }
                }
                if let Some(i) = arg {
                    g[i] = sign(v[i]);
                }
            }
            Norm::P(p) => {
                let n = self.eval(v);
                if n > 0.0 {
                    for (gi, &x) in g.iter_mut().zip(v.iter()) {
                        *gi = sign(x) * (x.abs() / n).powf(p - 1.0);
                    }
                }
            }
        }
        g
    }
}

pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::Inf => write!(f, "inf"),
            Norm::P(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        if t == "inf" || t == "infinity" {
            return Ok(Norm::Inf);
        }
        let p: f64 = t
            .parse()
            .map_err(|_| Error::Property(format!("invalid norm \"{s}\"")))?;
        Norm::p(p)
    }
}

impl Serialize for Norm {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Norm::Inf => s.serialize_str("inf"),
            Norm::P(p) => s.serialize_f64(*p),
        }
    }
}

impl<'de> Deserialize<'de> for Norm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Num(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(de::Error::custom),
            Raw::Num(p) => Norm::p(p).map_err(de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duals() {
        assert_eq!(Norm::Inf.dual(), Norm::P(1.0));
        assert_eq!(Norm::P(1.0).dual(), Norm::Inf);
        assert_eq!(Norm::P(2.0).dual(), Norm::P(2.0));
        assert!((match Norm::P(3.0).dual() {
            Norm::P(q) => q,
            Norm::Inf => 0.0,
        } - 1.5)
            .abs()
            < 1e-15);
    }

    #[test]
    fn parse_and_values() {
        assert_eq!("inf".parse::<Norm>().unwrap(), Norm::Inf);
        assert_eq!("2".parse::<Norm>().unwrap(), Norm::P(2.0));
        assert!("0.5".parse::<Norm>().is_err());
        let v = array![3.0, -4.0];
        assert_eq!(Norm::P(1.0).eval(v.view()), 7.0);
        assert_eq!(Norm::P(2.0).eval(v.view()), 5.0);
        assert_eq!(Norm::Inf.eval(v.view()), 4.0);
        assert_eq!(Norm::P(1.0).subgradient(array![0.0, -2.0].view()), array![0.0, -1.0]);
        assert_eq!(Norm::Inf.subgradient(v.view()), array![0.0, -1.0]);
    }

    #[test]
    fn serde_forms() {
        let n: Norm = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(n, Norm::Inf);
        let n: Norm = serde_json::from_str("2").unwrap();
        assert_eq!(n, Norm::P(2.0));
        assert_eq!(serde_json::to_string(&Norm::Inf).unwrap(), "\"inf\"");
    }
}
