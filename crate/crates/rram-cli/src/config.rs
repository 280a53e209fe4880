//! Flat dotted-key run configuration.
//!
//! The format is UTF-8 text, one `key = value` pair per line, `#` comments.
//! Sections are spelled in the key (`problem.m = 1000`). Unknown keys are
//! rejected so a misspelled tolerance cannot silently fall back to a
//! default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rram_core::adaptive::ReductionRule;
use rram_core::dataio::MovieLensFormat;
use rram_core::problems::{SyntheticKind, SyntheticSpec};
use rram_core::rbb::RbbConfig;
use rram_core::tsvd::TsvdOptions;
use rram_core::AdaptConfig;

/// Configuration or usage error; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Raw key-value pairs in canonical (sorted) order.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    map: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let stripped = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return err(format!("line {lineno}: expected `key = value`, got `{line}`"));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return err(format!("line {lineno}: empty key or value"));
            }
            if map.insert(key.clone(), value).is_some() {
                return err(format!("line {lineno}: duplicate key `{key}`"));
            }
        }
        Ok(RawConfig { map })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `key=value` command-line overrides on top of the file.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), ConfigError> {
        for s in sets {
            let Some((key, value)) = s.split_once('=') else {
                return err(format!("--set needs `key=value`, got `{s}`"));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                return err(format!("--set needs `key=value`, got `{s}`"));
            }
            self.map.insert(key.to_string(), value.to_string());
        }
        Ok(())
    }

    /// Canonical text form, suitable for echoing next to generated data.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

/// Typed reader that consumes keys and reports the leftovers.
struct KeyReader {
    map: BTreeMap<String, String>,
}

impl KeyReader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn take_parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| ConfigError(format!("key `{key}`: bad value `{v}`: {e}"))),
        }
    }

    fn take_bool(&mut self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => match v.as_str() {
                "true" | "yes" | "on" => Ok(Some(true)),
                "false" | "no" | "off" => Ok(Some(false)),
                other => err(format!("key `{key}`: bad boolean `{other}`")),
            },
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        if self.map.is_empty() {
            Ok(())
        } else {
            let keys: Vec<_> = self.map.keys().cloned().collect();
            err(format!("unknown config keys: {}", keys.join(", ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProblemKind {
    Gaussian,
    IllConditioned,
    MovieLens,
    MatrixMarket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Svd,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl OutputFormat {
    pub fn wants_csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn wants_json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kind: ProblemKind,
    pub synthetic: Option<SyntheticSpec>,
    pub data_path: Option<PathBuf>,
    pub ml_format: MovieLensFormat,
    pub split: f64,
    pub seed: u64,

    pub mode: SolveMode,
    pub init: InitKind,
    pub k: Option<usize>,
    pub adapt: AdaptConfig,

    pub out_dir: PathBuf,
    pub out_format: OutputFormat,
    pub wall_time: bool,

    pub budget: Option<Duration>,
    pub rmse_every: usize,
    pub clip: bool,

    pub echo: String,
}

impl RunConfig {
    /// Rank bound for the run; configuration guarantees presence for the
    /// commands that need it.
    pub fn rank_bound(&self) -> Result<usize, ConfigError> {
        self.k
            .ok_or_else(|| ConfigError("adapt.k is required for this command".into()))
    }
}

pub fn build(raw: &RawConfig) -> Result<RunConfig, ConfigError> {
    let echo = raw.echo();
    let mut r = KeyReader { map: raw.map.clone() };

    let kind = match r.take("problem.kind").as_deref() {
        Some("gaussian") => ProblemKind::Gaussian,
        Some("ill-conditioned") => ProblemKind::IllConditioned,
        Some("movielens") => ProblemKind::MovieLens,
        Some("matrix-market") => ProblemKind::MatrixMarket,
        Some(other) => return err(format!("problem.kind: unknown kind `{other}`")),
        None => return err("problem.kind is required"),
    };
    let seed: u64 = r.take_parse("problem.seed")?.unwrap_or(0);

    let synthetic = match kind {
        ProblemKind::Gaussian | ProblemKind::IllConditioned => {
            let m: usize = r
                .take_parse("problem.m")?
                .ok_or_else(|| ConfigError("problem.m is required for synthetic problems".into()))?;
            let n: usize = r
                .take_parse("problem.n")?
                .ok_or_else(|| ConfigError("problem.n is required for synthetic problems".into()))?;
            let rank: usize = r
                .take_parse("problem.r")?
                .ok_or_else(|| ConfigError("problem.r is required for synthetic problems".into()))?;
            let os: f64 = r
                .take_parse("problem.os")?
                .ok_or_else(|| ConfigError("problem.os is required for synthetic problems".into()))?;
            let bernoulli = r.take_bool("problem.bernoulli")?.unwrap_or(false);
            let spec = SyntheticSpec {
                m,
                n,
                r: rank,
                os,
                kind: match kind {
                    ProblemKind::Gaussian => SyntheticKind::Gaussian,
                    _ => SyntheticKind::IllConditioned,
                },
                seed,
                bernoulli,
            };
            spec.validate().map_err(|e| ConfigError(format!("problem: {e}")))?;
            Some(spec)
        }
        _ => None,
    };

    let data_path = r.take("problem.path").map(PathBuf::from);
    if matches!(kind, ProblemKind::MovieLens | ProblemKind::MatrixMarket) && data_path.is_none() {
        return err("problem.path is required for dataset problems");
    }
    let ml_format = match r.take("problem.format").as_deref() {
        None => MovieLensFormat::Ml100k,
        Some(s) => s
            .parse::<MovieLensFormat>()
            .map_err(|e| ConfigError(format!("problem.format: {e}")))?,
    };
    let split: f64 = r.take_parse("problem.split")?.unwrap_or(0.8);
    if !(split > 0.0 && split < 1.0) {
        return err("problem.split must lie in (0,1)");
    }

    let mode = match r.take("solver.mode").as_deref() {
        None | Some("adaptive") => SolveMode::Adaptive,
        Some("fixed") => SolveMode::Fixed,
        Some(other) => return err(format!("solver.mode: unknown mode `{other}`")),
    };
    let init = match r.take("solver.init").as_deref() {
        None | Some("svd") => InitKind::Svd,
        Some("random") => InitKind::Random,
        Some(other) => return err(format!("solver.init: unknown init `{other}`")),
    };

    let mut inner = RbbConfig::default();
    if let Some(v) = r.take_parse("solver.beta")? {
        inner.beta = v;
    }
    if let Some(v) = r.take_parse("solver.delta")? {
        inner.delta = v;
    }
    if let Some(v) = r.take_parse("solver.theta")? {
        inner.theta = v;
    }
    if let Some(v) = r.take_parse("solver.gamma_min")? {
        inner.gamma_min = v;
    }
    if let Some(v) = r.take_parse("solver.gamma_max")? {
        inner.gamma_max = v;
    }
    if let Some(v) = r.take_parse("solver.gamma0")? {
        inner.gamma0 = v;
    }
    if let Some(v) = r.take_parse("solver.j_max")? {
        inner.j_max = v;
    }
    if let Some(v) = r.take_parse("solver.h_max")? {
        inner.h_max = v;
    }
    if let Some(v) = r.take_parse("solver.eps_g")? {
        inner.eps_g = v;
    }
    if let Some(v) = r.take_parse("solver.eps_omega")? {
        inner.eps_omega = v;
    }
    if let Some(v) = r.take_parse("solver.eps_f")? {
        inner.eps_f = v;
    }
    inner
        .validate()
        .map_err(|e| ConfigError(format!("solver: {e}")))?;

    let k: Option<usize> = r.take_parse("adapt.k")?;
    let mut adapt = AdaptConfig::new(k.unwrap_or(1));
    adapt.inner = inner;
    if let Some(v) = r.take_parse("adapt.eps_increase")? {
        adapt.eps_increase = v;
    }
    if let Some(v) = r.take_parse("adapt.l")? {
        adapt.l = v;
    }
    if let Some(v) = r.take_parse("adapt.delta_gap")? {
        adapt.delta_gap = v;
    }
    if let Some(v) = r.take_parse("adapt.max_outer")? {
        adapt.max_outer = v;
    }
    adapt.reduction = match r.take("adapt.reduction").as_deref() {
        None | Some("relative-gap") => ReductionRule::RelativeGap,
        Some("absolute-threshold") => ReductionRule::AbsoluteThreshold,
        Some(other) => return err(format!("adapt.reduction: unknown rule `{other}`")),
    };
    adapt.tsvd = TsvdOptions::default();

    let out_dir = match r.take("output.dir") {
        Some(d) => PathBuf::from(d),
        None => match std::env::var_os("RRAM_OUTPUT_DIR") {
            Some(d) => PathBuf::from(d),
            None => PathBuf::from("runs"),
        },
    };
    let out_format = match r.take("output.format").as_deref() {
        None | Some("csv") => OutputFormat::Csv,
        Some("json") => OutputFormat::Json,
        Some("both") => OutputFormat::Both,
        Some(other) => return err(format!("output.format: unknown format `{other}`")),
    };
    let wall_time = r.take_bool("output.wall_time")?.unwrap_or(false);

    let budget = r
        .take_parse::<f64>("budget.seconds")?
        .map(|s| {
            if s > 0.0 {
                Ok(Duration::from_secs_f64(s))
            } else {
                err("budget.seconds must be positive")
            }
        })
        .transpose()?;

    let rmse_every: usize = r.take_parse("movielens.rmse_every")?.unwrap_or(10);
    if rmse_every == 0 {
        return err("movielens.rmse_every must be positive");
    }
    let clip = r.take_bool("movielens.clip")?.unwrap_or(true);

    r.finish()?;

    if let Some(kk) = k {
        adapt.k = kk;
        if adapt.l > kk {
            return err("adapt.l must not exceed adapt.k");
        }
        adapt
            .validate()
            .map_err(|e| ConfigError(format!("adapt: {e}")))?;
    }

    Ok(RunConfig {
        kind,
        synthetic,
        data_path,
        ml_format,
        split,
        seed,
        mode,
        init,
        k,
        adapt,
        out_dir,
        out_format,
        wall_time,
        budget,
        rmse_every,
        clip,
        echo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawConfig {
        RawConfig::parse(text).unwrap()
    }

    #[test]
    fn parses_minimal_synthetic() {
        let cfg = build(&raw(
            "problem.kind = gaussian\nproblem.m = 100\nproblem.n = 90\nproblem.r = 5\nproblem.os = 3.0\nadapt.k = 7\n",
        ))
        .unwrap();
        assert_eq!(cfg.kind, ProblemKind::Gaussian);
        assert_eq!(cfg.k, Some(7));
        assert_eq!(cfg.adapt.inner.j_max, 100);
    }

    #[test]
    fn rejects_unknown_keys() {
        let e = build(&raw(
            "problem.kind = gaussian\nproblem.m = 10\nproblem.n = 10\nproblem.r = 2\nproblem.os = 2.0\nsolve.eps_g = 1e-3\n",
        ))
        .unwrap_err();
        assert!(e.0.contains("unknown config keys"), "{e}");
        assert!(e.0.contains("solve.eps_g"), "{e}");
    }

    #[test]
    fn rejects_duplicate_and_malformed_lines() {
        assert!(RawConfig::parse("a = 1\na = 2\n").is_err());
        assert!(RawConfig::parse("just words\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = raw("# header\nproblem.kind = gaussian # trailing\n\nproblem.m=4\nproblem.n = 4\nproblem.r = 1\nproblem.os = 1.5\n");
        assert!(build(&cfg).is_ok());
    }

    #[test]
    fn overrides_replace_values() {
        let mut c = raw("problem.kind = gaussian\nproblem.m = 10\nproblem.n = 10\nproblem.r = 2\nproblem.os = 2.0\n");
        c.apply_overrides(&["problem.m=20".into()]).unwrap();
        let cfg = build(&c).unwrap();
        assert_eq!(cfg.synthetic.unwrap().m, 20);
    }

    #[test]
    fn echo_is_canonical() {
        let c = raw("b.z = 2\na.y = 1\n");
        assert_eq!(c.echo(), "a.y = 1\nb.z = 2\n");
    }
}
