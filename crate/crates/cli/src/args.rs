use std::fmt;

use serde_json::{Map, Value};

/// A problem with how the tool was invoked rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses ordinary floats and the `1e-4.95` shorthand (fractional exponent,
/// meaning 10^-4.95).
pub fn parse_real(s: &str) -> Result<f64, String> {
    let t = s.trim();
    if let Ok(v) = t.parse::<f64>() {
        return finite(v, s);
    }
    let (mant, exp) = t
        .split_once(['e', 'E'])
        .ok_or_else(|| format!("`{s}` is not a number"))?;
    let mant: f64 = mant.parse().map_err(|_| format!("`{s}` is not a number"))?;
    let exp: f64 = exp.parse().map_err(|_| format!("`{s}` has a malformed exponent"))?;
    finite(mant * 10f64.powf(exp), s)
}

fn finite(v: f64, s: &str) -> Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

/// Inverse-friendly rendering: positive values as `1e<log10>` with two
/// decimals when that reproduces them closely, plain otherwise.
pub fn format_real(v: f64) -> String {
    if v > 0.0 {
        let e = v.log10();
        let short = format!("1e{e:.2}");
        if let Ok(back) = parse_real(&short) {
            if ((back - v) / v).abs() < 1e-9 || !(1e-3..1e4).contains(&v) {
                return short;
            }
        }
    }
    format!("{v}")
}

pub fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got `{s}`"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("`{p}` is not a valid value"))?);
    }
    out.try_into().map_err(|_| unreachable!())
}

/// Turns string values that look like `1e-4.95` into numbers so that JSON
/// config files accept the same notation as flags.
pub fn normalize_reals(map: &mut Map<String, Value>) {
    for v in map.values_mut() {
        if let Value::String(s) = v {
            if let Ok(x) = parse_real(s) {
                if let Some(n) = serde_json::Number::from_f64(x) {
                    *v = Value::Number(n);
                }
            }
        }
    }
}

#[derive(clap::Args, Clone, Debug, Default)]
pub struct HyperArgs {
    #[arg(long, value_parser = parse_real)]
    pub sp_lr: Option<f64>,
    #[arg(long, value_parser = parse_real)]
    pub ch_lr: Option<f64>,
    /// Weight decay of the classification head.
    #[arg(long = "wd", value_parser = parse_real)]
    pub weight_decay: Option<f64>,
    /// Soft-prompt length.
    #[arg(long)]
    pub sp_len: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Per-instance weight of generation targets: max or mean.
    #[arg(long)]
    pub instance_weight: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_parser = parse_real)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub n_shot: Option<usize>,
    #[arg(long)]
    pub max_labels: Option<usize>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    /// Emit the best label when no score reaches the threshold.
    #[arg(long)]
    pub fallback_top1: bool,
}

impl HyperArgs {
    pub fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.into(), v);
            }
        };
        let real = |x: Option<f64>| x.and_then(serde_json::Number::from_f64).map(Value::Number);
        let int = |x: Option<usize>| x.map(|v| Value::from(v as u64));
        put("sp_lr", real(self.sp_lr));
        put("ch_lr", real(self.ch_lr));
        put("weight_decay", real(self.weight_decay));
        put("sp_len", int(self.sp_len));
        put("epochs", int(self.epochs));
        put("batch_size", int(self.batch_size));
        put("instance_weight", self.instance_weight.clone().map(Value::String));
        put("k", int(self.k));
        put("radius", real(self.radius));
        put("n_shot", int(self.n_shot));
        put("max_labels", int(self.max_labels));
        put("max_new_tokens", int(self.max_new_tokens));
        if self.fallback_top1 {
            put("fallback_top1", Some(Value::Bool(true)));
        }
        m
    }
}
