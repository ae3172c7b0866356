//! `key = value` run configuration.
//!
//! Lines are `key = value` with `#` comments and dotted keys. Every key is
//! optional except `net.dims`; unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use splitbcd::solver::CheckPolicy;
use splitbcd::state::RiskScale;
use splitbcd::{
    ActivationKind, Form, Hyperparams, LossKind, NetworkSpec, RegularizerKind, UpdateOrder,
    VnStrategy,
};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` already set on line {first}")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("line {line}: key `{key}`: {reason}")]
    Value { line: usize, key: String, reason: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        n_train: usize,
        n_test: usize,
        classes: usize,
        spread: f64,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        /// Seeded subsample sizes; all samples when absent.
        n_train: Option<usize>,
        n_test: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub form: Form,
    pub dims: Vec<usize>,
    pub activation: ActivationKind,
    pub residual: bool,
    pub bias: bool,
    /// `hp.seed` doubles as the run seed.
    pub hp: Hyperparams,
    pub init_std: f64,
    pub init_bias: f64,
    pub data: DataSource,
    pub epochs: usize,
    pub check: CheckPolicy,
    pub track_residual: bool,
    pub sgd_lr: f64,
    pub sgd_batch: usize,
    pub sgd_epochs: usize,
    pub compare_bcd_min: f64,
    pub compare_sgd_max: f64,
    pub output_dir: PathBuf,
    pub timing: bool,
}

/// Every recognised key, in the order [`RunConfig::serialize`] writes them.
pub const KEYS: &[&str] = &[
    "form",
    "seed",
    "net.dims",
    "net.activation",
    "net.residual",
    "net.bias",
    "hp.gamma",
    "hp.alpha",
    "hp.loss",
    "hp.risk_scale",
    "hp.w_reg",
    "hp.v_reg",
    "hp.order",
    "hp.vn_strategy",
    "hp.inner_iters",
    "hp.inner_tol",
    "init.std",
    "init.bias",
    "data.source",
    "data.n_train",
    "data.n_test",
    "data.classes",
    "data.spread",
    "data.seed",
    "data.train_images",
    "data.train_labels",
    "data.test_images",
    "data.test_labels",
    "train.epochs",
    "train.check",
    "train.residual",
    "sgd.lr",
    "sgd.batch",
    "sgd.epochs",
    "compare.bcd_min",
    "compare.sgd_max",
    "output.dir",
    "output.timing",
];

struct Entries {
    map: BTreeMap<&'static str, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &'static str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &'static str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn opt<T: FromStr>(&mut self, key: &'static str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, raw)) => raw.parse().map(Some).map_err(|e: T::Err| ConfigError::Value {
                line,
                key: key.into(),
                reason: e.to_string(),
            }),
        }
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(l, _)| *l)
    }
}

fn value_err(line: usize, key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        line,
        key: key.into(),
        reason: reason.into(),
    }
}

/// Reads a value that must satisfy `ok`, reporting `what` on failure.
fn checked<T: FromStr + Copy>(
    e: &mut Entries,
    key: &'static str,
    default: T,
    ok: impl Fn(T) -> bool,
    what: &str,
) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    let line = e.line_of(key);
    let v = e.get(key, default)?;
    if !ok(v) {
        return Err(match line {
            Some(line) => value_err(line, key, format!("must be {what}")),
            None => ConfigError::Invalid(format!("default of `{key}` must be {what}")),
        });
    }
    Ok(v)
}

fn list<T: FromStr>(e: &mut Entries, key: &'static str, default: Vec<T>) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    let Some((line, raw)) = e.take(key) else {
        return Ok(default);
    };
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|err: T::Err| value_err(line, key, format!("{part:?}: {err}")))
        })
        .collect()
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

fn split_lines(text: &str) -> Result<Entries, ConfigError> {
    let mut map: BTreeMap<&'static str, (usize, String)> = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        };
        let key = key.trim();
        let Some(&known) = KEYS.iter().find(|&&k| k == key) else {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        };
        if let Some((first, _)) = map.get(known) {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_string(),
                first: *first,
            });
        }
        map.insert(known, (line, value.trim().to_string()));
    }
    Ok(Entries { map })
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut e = split_lines(text)?;

    let form: Form = e.get("form", Form::ThreeSplit)?;
    let seed: u64 = e.get("seed", 0)?;
    let dims_line = e.line_of("net.dims");
    let dims: Vec<usize> = list(&mut e, "net.dims", vec![])?;
    let Some(dims_line) = dims_line else {
        return Err(ConfigError::Missing("net.dims"));
    };
    let activation = e.get("net.activation", ActivationKind::Relu)?;
    let residual = e.get("net.residual", form == Form::Residual)?;
    let bias = e.get("net.bias", true)?;
    let spec_err = |m: String| value_err(dims_line, "net.dims", m);
    let spec = NetworkSpec::uniform(dims.clone(), activation, residual, bias)
        .map_err(|err| spec_err(err.to_string()))?;
    if (form == Form::Residual) != residual {
        return Err(ConfigError::Invalid(format!(
            "`net.residual = {residual}` does not fit `form = {form}`"
        )));
    }

    let gamma = checked(&mut e, "hp.gamma", 1.0, positive, "positive")?;
    let alpha = checked(&mut e, "hp.alpha", 1.0, positive, "positive")?;
    let loss = e.get("hp.loss", LossKind::Squared)?;
    let risk_scale = e.get("hp.risk_scale", RiskScale::Mean)?;
    let depth = spec.depth();
    let reg_list = |e: &mut Entries, key: &'static str| -> Result<Vec<RegularizerKind>, ConfigError> {
        let line = e.line_of(key);
        let regs = list(e, key, vec![RegularizerKind::None])?;
        if regs.len() != 1 && regs.len() != depth {
            return Err(value_err(
                line.unwrap_or(0),
                key,
                format!("{} entries for {depth} layers (give 1 or {depth})", regs.len()),
            ));
        }
        Ok(regs)
    };
    let w_reg = reg_list(&mut e, "hp.w_reg")?;
    let v_reg = reg_list(&mut e, "hp.v_reg")?;
    let update_order = e.get("hp.order", UpdateOrder::Backward)?;
    let default_strategy = if loss == LossKind::CrossEntropy {
        VnStrategy::ProxLinear
    } else {
        VnStrategy::ProximalExact
    };
    let vn_strategy = e.get("hp.vn_strategy", default_strategy)?;
    let inner_iters = checked(&mut e, "hp.inner_iters", 200usize, |v| v > 0, "at least 1")?;
    let inner_tol = checked(&mut e, "hp.inner_tol", 1e-10, positive, "positive")?;
    let hp = Hyperparams {
        gamma,
        alpha,
        loss,
        risk_scale,
        w_reg,
        v_reg,
        update_order,
        vn_strategy,
        inner_iters,
        inner_tol,
        seed,
    };
    hp.update_order
        .blocks(form, depth)
        .map_err(|err| ConfigError::Invalid(format!("`hp.order`: {err}")))?;

    let init_std = checked(&mut e, "init.std", 0.01, |v: f64| v >= 0.0 && v.is_finite(), "nonnegative")?;
    let init_bias = checked(&mut e, "init.bias", 0.1, f64::is_finite, "finite")?;

    let source_line = e.line_of("data.source");
    let source: String = e.get("data.source", "synthetic".to_string())?;
    let out_dim = *dims.last().expect("validated dims");
    let data = match source.as_str() {
        "synthetic" => {
            let n_train = checked(&mut e, "data.n_train", 1000usize, |v| v > 0, "positive")?;
            let n_test = e.get("data.n_test", 200usize)?;
            let classes = checked(&mut e, "data.classes", out_dim, |v| v > 0, "positive")?;
            if classes != out_dim {
                return Err(ConfigError::Invalid(format!(
                    "`data.classes = {classes}` but the output layer has {out_dim} units"
                )));
            }
            if classes > n_train {
                return Err(ConfigError::Invalid(format!(
                    "{classes} classes need at least as many training samples, got {n_train}"
                )));
            }
            let spread = checked(&mut e, "data.spread", 0.05, |v: f64| v >= 0.0 && v.is_finite(), "nonnegative")?;
            let data_seed = e.get("data.seed", seed)?;
            for key in ["data.train_images", "data.train_labels", "data.test_images", "data.test_labels"] {
                if let Some(line) = e.line_of(key) {
                    return Err(value_err(line, key, "only used with `data.source = mnist`"));
                }
            }
            DataSource::Synthetic {
                n_train,
                n_test,
                classes,
                spread,
                seed: data_seed,
            }
        }
        "idx" | "mnist" => {
            for key in ["data.classes", "data.spread", "data.seed"] {
                if let Some(line) = e.line_of(key) {
                    return Err(value_err(line, key, "only used with `data.source = synthetic`"));
                }
            }
            let mut path = |key: &'static str| -> Result<Option<PathBuf>, ConfigError> {
                let Some((line, raw)) = e.take(key) else { return Ok(None) };
                let p = PathBuf::from(raw);
                if !p.is_file() {
                    return Err(value_err(line, key, format!("no such file {}", p.display())));
                }
                Ok(Some(p))
            };
            let train_images = path("data.train_images")?.ok_or(ConfigError::Missing("data.train_images"))?;
            let train_labels = path("data.train_labels")?.ok_or(ConfigError::Missing("data.train_labels"))?;
            let test_images = path("data.test_images")?;
            let test_labels = path("data.test_labels")?;
            if test_images.is_some() != test_labels.is_some() {
                return Err(ConfigError::Invalid(
                    "`data.test_images` and `data.test_labels` go together".into(),
                ));
            }
            if dims[0] != 784 || out_dim != 10 {
                return Err(spec_err(format!(
                    "IDX digit data needs 784 inputs and 10 outputs, got {} and {out_dim}",
                    dims[0]
                )));
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                n_train: e.opt("data.n_train")?,
                n_test: e.opt("data.n_test")?,
            }
        }
        other => {
            return Err(value_err(
                source_line.unwrap_or(0),
                "data.source",
                format!("unknown source {other:?} (expected synthetic or mnist)"),
            ))
        }
    };

    let epochs = checked(&mut e, "train.epochs", 50usize, |v| v > 0, "at least 1")?;
    let check = e.get("train.check", CheckPolicy::Auto)?;
    let track_residual = e.get("train.residual", true)?;
    let sgd_lr = checked(&mut e, "sgd.lr", 1e-3, |v: f64| v >= 0.0 && v.is_finite(), "nonnegative")?;
    let sgd_batch = checked(&mut e, "sgd.batch", 512usize, |v| v > 0, "positive")?;
    let sgd_epochs = checked(&mut e, "sgd.epochs", epochs, |v| v > 0, "at least 1")?;
    let compare_bcd_min = e.get("compare.bcd_min", 0.6)?;
    let compare_sgd_max = e.get("compare.sgd_max", 0.2)?;
    let output_dir = PathBuf::from(e.get("output.dir", "out".to_string())?);
    let timing = e.get("output.timing", false)?;

    debug_assert!(e.map.is_empty(), "unconsumed keys {:?}", e.map.keys());
    Ok(RunConfig {
        form,
        dims,
        activation,
        residual,
        bias,
        hp,
        init_std,
        init_bias,
        data,
        epochs,
        check,
        track_residual,
        sgd_lr,
        sgd_batch,
        sgd_epochs,
        compare_bcd_min,
        compare_sgd_max,
        output_dir,
        timing,
    })
}

pub fn read_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Io {
        path: path.to_path_buf(),
        reason: err.to_string(),
    })?;
    parse_config(&text)
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.hp.seed
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec::uniform(self.dims.clone(), self.activation, self.residual, self.bias)
            .expect("validated at parse time")
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            writeln!(out, "{k} = {v}").expect("writing to a String");
        };
        let hp = &self.hp;
        put("form", self.form.to_string());
        put("seed", hp.seed.to_string());
        put("net.dims", join(&self.dims));
        put("net.activation", self.activation.to_string());
        put("net.residual", self.residual.to_string());
        put("net.bias", self.bias.to_string());
        put("hp.gamma", hp.gamma.to_string());
        put("hp.alpha", hp.alpha.to_string());
        put("hp.loss", hp.loss.to_string());
        put("hp.risk_scale", hp.risk_scale.to_string());
        put("hp.w_reg", join(&hp.w_reg));
        put("hp.v_reg", join(&hp.v_reg));
        put("hp.order", hp.update_order.to_string());
        put("hp.vn_strategy", hp.vn_strategy.to_string());
        put("hp.inner_iters", hp.inner_iters.to_string());
        put("hp.inner_tol", hp.inner_tol.to_string());
        put("init.std", self.init_std.to_string());
        put("init.bias", self.init_bias.to_string());
        match &self.data {
            DataSource::Synthetic {
                n_train,
                n_test,
                classes,
                spread,
                seed,
            } => {
                put("data.source", "synthetic".into());
                put("data.n_train", n_train.to_string());
                put("data.n_test", n_test.to_string());
                put("data.classes", classes.to_string());
                put("data.spread", spread.to_string());
                put("data.seed", seed.to_string());
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                n_train,
                n_test,
            } => {
                put("data.source", "mnist".into());
                if let Some(n) = n_train {
                    put("data.n_train", n.to_string());
                }
                if let Some(n) = n_test {
                    put("data.n_test", n.to_string());
                }
                put("data.train_images", train_images.display().to_string());
                put("data.train_labels", train_labels.display().to_string());
                if let (Some(i), Some(l)) = (test_images, test_labels) {
                    put("data.test_images", i.display().to_string());
                    put("data.test_labels", l.display().to_string());
                }
            }
        }
        put("train.epochs", self.epochs.to_string());
        put("train.check", self.check.to_string());
        put("train.residual", self.track_residual.to_string());
        put("sgd.lr", self.sgd_lr.to_string());
        put("sgd.batch", self.sgd_batch.to_string());
        put("sgd.epochs", self.sgd_epochs.to_string());
        put("compare.bcd_min", self.compare_bcd_min.to_string());
        put("compare.sgd_max", self.compare_sgd_max.to_string());
        put("output.dir", self.output_dir.display().to_string());
        put("output.timing", self.timing.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "net.dims = 4,6,3\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.hp.gamma, 1.0);
        assert_eq!(c.hp.alpha, 1.0);
        assert_eq!(c.form, Form::ThreeSplit);
        assert_eq!(c.epochs, 50);
        assert_eq!(c.init_std, 0.01);
        assert!(matches!(c.data, DataSource::Synthetic { classes: 3, .. }));
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = parse_config("net.dims = 4,6,3\n# note\nhp.alpha = -1\n").unwrap_err();
        assert!(matches!(&e, ConfigError::Value { line: 3, key, .. } if key == "hp.alpha"), "{e}");
        let e = parse_config("net.dims = 4,6,3\nhp.alhpa = 1\n").unwrap_err();
        assert_eq!(
            e,
            ConfigError::UnknownKey {
                line: 2,
                key: "hp.alhpa".into()
            }
        );
        let e = parse_config("net.dims = 4,6,3\nhp.loss = squared\nhp.loss = hinge\n").unwrap_err();
        assert!(matches!(e, ConfigError::Duplicate { line: 3, first: 2, .. }));
        let e = parse_config("net.dims = 4,x,3\n").unwrap_err();
        assert!(matches!(e, ConfigError::Value { line: 1, .. }), "{e}");
        assert_eq!(parse_config("hp.gamma = 2\n").unwrap_err(), ConfigError::Missing("net.dims"));
        assert!(matches!(
            parse_config("net.dims 4,6,3\n").unwrap_err(),
            ConfigError::Syntax { line: 1, .. }
        ));
    }

    #[test]
    fn unknown_key_is_reported_before_bad_values() {
        let e = parse_config("hp.alpha = -1\nbogus = 1\nnet.dims = 4,6,3\n").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey { line: 2, .. }));
    }

    #[test]
    fn round_trip() {
        let text = "\
form = residual
net.dims = 4,6,6,6,3
net.activation = leaky:0.2
hp.loss = hinge
hp.w_reg = l2:0.01
hp.v_reg = none,l1:0.5,nonneg,l2:0.25
hp.order = custom:V4 U4 W4 V3 U3 W3 V2 U2 W2 V1 U1 W1
hp.risk_scale = sum
hp.gamma = 0.3
seed = 17
data.n_train = 40
data.spread = 0.125
train.check = monotone
output.dir = /tmp/some run
";
        let a = parse_config(text).unwrap();
        let b = parse_config(&a.serialize()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.serialize(), b.serialize());
    }

    #[test]
    fn cross_field_checks() {
        assert!(parse_config("form = residual\nnet.dims = 4,6,5,3\n").is_err());
        assert!(parse_config("net.dims = 4,6,3\nnet.residual = true\n").is_err());
        assert!(parse_config("net.dims = 4,6,3\ndata.classes = 4\n").is_err());
        assert!(parse_config("net.dims = 4,6,3\nhp.w_reg = none,none,none\n").is_err());
        assert!(parse_config("net.dims = 4,6,3\ndata.train_images = x\n").is_err());
        let e = parse_config("net.dims = 784,10\ndata.source = mnist\ndata.train_images = /nonexistent\n")
            .unwrap_err();
        assert!(matches!(e, ConfigError::Value { line: 3, .. }), "{e}");
    }
}
