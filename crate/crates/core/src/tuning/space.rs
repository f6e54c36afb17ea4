use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::Method;
use crate::seed::rng_for;

/// Parameter name → value. Integer parameters hold integral values.
pub type Config = BTreeMap<String, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Integer,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[serde(alias = "lin")]
    Linear,
    #[serde(alias = "logarithmic")]
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: Kind,
    pub low: f64,
    pub high: f64,
    pub scale: Scale,
}

impl ParamSpec {
    pub fn real(name: &str, low: f64, high: f64, scale: Scale) -> Self {
        Self {
            name: name.into(),
            kind: Kind::Real,
            low,
            high,
            scale,
        }
    }

    pub fn integer(name: &str, low: i64, high: i64) -> Self {
        Self {
            name: name.into(),
            kind: Kind::Integer,
            low: low as f64,
            high: high as f64,
            scale: Scale::Linear,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(Error::Config(format!("`{}`: bounds must be finite with low < high", self.name)));
        }
        if self.scale == Scale::Log && self.low <= 0.0 {
            return Err(Error::Config(format!("`{}`: log scale needs a positive lower bound", self.name)));
        }
        if self.kind == Kind::Integer && (self.low.fract() != 0.0 || self.high.fract() != 0.0) {
            return Err(Error::Config(format!("`{}`: integer bounds must be integral", self.name)));
        }
        Ok(())
    }

    fn warp(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => v,
            Scale::Log => v.log10(),
        }
    }

    fn unwarp(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => v,
            Scale::Log => 10f64.powf(v),
        }
    }

    /// Position of `v` within the bounds on the search scale, in [0, 1].
    pub fn normalize(&self, v: f64) -> f64 {
        let (lo, hi) = (self.warp(self.low), self.warp(self.high));
        ((self.warp(v) - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// Inverse of [`normalize`](Self::normalize), rounded and clamped for
    /// integers.
    pub fn denormalize(&self, u: f64) -> f64 {
        let (lo, hi) = (self.warp(self.low), self.warp(self.high));
        let v = self.unwarp(lo + u.clamp(0.0, 1.0) * (hi - lo)).clamp(self.low, self.high);
        match self.kind {
            Kind::Integer => v.round().clamp(self.low, self.high),
            Kind::Real => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        let s = Self { params };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::Config("search space has no parameters".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.params {
            p.validate()?;
            if !seen.insert(&p.name) {
                return Err(Error::Config(format!("parameter `{}` listed twice", p.name)));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.params.len()
    }

    pub fn normalize(&self, config: &Config) -> Vec<f64> {
        self.params.iter().map(|p| p.normalize(config[&p.name])).collect()
    }

    pub fn contains(&self, config: &Config) -> bool {
        config.len() == self.params.len()
            && self.params.iter().all(|p| {
                config.get(&p.name).is_some_and(|&v| {
                    v >= p.low && v <= p.high && (p.kind == Kind::Real || v.fract() == 0.0)
                })
            })
    }

    pub(crate) fn sample_with(&self, rng: &mut impl Rng) -> Config {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.denormalize(rng.random::<f64>())))
            .collect()
    }
}

/// Uniform draw on each parameter's scale: log-scale parameters are uniform
/// in log10, integers are rounded then clamped.
pub fn sample_config(space: &SearchSpace, seed: u64) -> Config {
    space.sample_with(&mut rng_for(seed, "sample-config"))
}

/// Search ranges per method, named after `MethodConfig` fields. The head
/// weight-decay range starts at 1e-9 since a log scale cannot reach zero.
pub fn default_space(method: Method) -> Result<SearchSpace> {
    use Scale::{Linear, Log};
    let prompt = || {
        vec![
            ParamSpec::real("sp_lr", 1e-9, 1.0, Log),
            ParamSpec::integer("sp_len", 50, 200),
            ParamSpec::integer("epochs", 5, 18),
        ]
    };
    let params = match method {
        Method::NShot | Method::NShotTs => vec![ParamSpec::integer("n_shot", 0, 8)],
        Method::RadiusNn => vec![ParamSpec::real("radius", 0.1, 150.0, Linear)],
        Method::Knn => vec![ParamSpec::integer("k", 1, 150)],
        Method::Ch => vec![
            ParamSpec::real("ch_lr", 1e-6, 1e-3, Log),
            ParamSpec::real("weight_decay", 1e-9, 1e-3, Log),
        ],
        Method::PtT2t | Method::PtTs => prompt(),
        Method::Ptec => {
            let mut p = prompt();
            p.insert(2, ParamSpec::real("ch_lr", 1e-9, 0.1, Log));
            p.insert(3, ParamSpec::real("weight_decay", 1e-9, 0.5, Log));
            p
        }
        Method::Gzip => return Err(Error::Config("gzip has no hyperparameters to tune".into())),
    };
    SearchSpace::new(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_decades_uniform() {
        let space = SearchSpace::new(vec![ParamSpec::real("lr", 1e-6, 1e-3, Scale::Log)]).unwrap();
        let mut rng = rng_for(3, "t");
        let mut hist = [0usize; 3];
        for _ in 0..10_000 {
            let v = space.sample_with(&mut rng)["lr"];
            hist[((v.log10() + 6.0).floor() as usize).min(2)] += 1;
        }
        for h in hist {
            assert!((h as f64 / 10_000.0 - 1.0 / 3.0).abs() < 0.03, "{hist:?}");
        }
    }

    #[test]
    fn integers_in_range() {
        let space = SearchSpace::new(vec![ParamSpec::integer("m", 50, 200)]).unwrap();
        let mut rng = rng_for(0, "t");
        for _ in 0..1000 {
            let c = space.sample_with(&mut rng);
            assert!(space.contains(&c));
        }
        assert_eq!(sample_config(&space, 9), sample_config(&space, 9));
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(SearchSpace::new(vec![ParamSpec::real("wd", 0.0, 1e-3, Scale::Log)]).is_err());
        assert!(SearchSpace::new(vec![ParamSpec::real("x", 1.0, 1.0, Scale::Linear)]).is_err());
    }
}
