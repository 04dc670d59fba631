// SPDX-License-Identifier: Apache-2.0

//! Experiment settings: a `key = value` file overlaid with flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use pvmw_core::accountant::rho_for_dp_target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    OlvqSweep,
    ErmConvex,
    ErmStronglyConvex,
    /// Monte-Carlo check of the clip concentration bound (`verify-lemma1`).
    VerifyClip,
    MwuProps,
    Audit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::OlvqSweep => "olvq-sweep",
            Command::ErmConvex => "erm-convex",
            Command::ErmStronglyConvex => "erm-strongly-convex",
            Command::VerifyClip => "verify-lemma1",
            Command::MwuProps => "mwu-props",
            Command::Audit => "audit",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryFamily {
    /// A fresh random unit vector per (query, public index, private value).
    RandomTable,
    /// Normalized squared-loss gradients at random points.
    Gradient,
    /// Outputs that ignore the private value.
    ConstantPublic,
}

impl QueryFamily {
    pub fn name(self) -> &'static str {
        match self {
            QueryFamily::RandomTable => "RANDOM_TABLE",
            QueryFamily::Gradient => "GRADIENT",
            QueryFamily::ConstantPublic => "CONSTANT_PUBLIC",
        }
    }
}

impl FromStr for QueryFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "RANDOM_TABLE" => Ok(QueryFamily::RandomTable),
            "GRADIENT" => Ok(QueryFamily::Gradient),
            "CONSTANT_PUBLIC" => Ok(QueryFamily::ConstantPublic),
            other => Err(format!("unknown query family `{other}` (RANDOM_TABLE, GRADIENT, CONSTANT_PUBLIC)")),
        }
    }
}

/// A privacy level on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivacyPoint {
    Rho(f64),
    EpsDelta { epsilon: f64, delta: f64 },
}

impl PrivacyPoint {
    pub fn rho(&self) -> pvmw_core::Result<f64> {
        match *self {
            PrivacyPoint::Rho(r) => Ok(r),
            PrivacyPoint::EpsDelta { epsilon, delta } => rho_for_dp_target(epsilon, delta),
        }
    }

    /// `(rho, eps, delta)` columns; the unset ones are empty.
    pub fn columns(&self) -> [String; 3] {
        match *self {
            PrivacyPoint::Rho(r) => [r.to_string(), String::new(), String::new()],
            PrivacyPoint::EpsDelta { epsilon, delta } => {
                let rho = self.rho().map(|r| r.to_string()).unwrap_or_default();
                [rho, epsilon.to_string(), delta.to_string()]
            }
        }
    }
}

/// Invalid fields, each with a reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecError(pub Vec<(String, String)>);

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid experiment spec:")?;
        for (field, reason) in &self.0 {
            writeln!(f, "  {field}: {reason}")?;
        }
        Ok(())
    }
}

impl std::error::Error for SpecError {}

/// Recognized keys, shared by config files and flags.
pub const KEYS: &[&str] = &[
    "n", "k", "d", "rho", "eps", "delta", "seeds", "family", "queries", "beta", "q", "q_cap", "m",
    "lipschitz", "radius", "mu", "sigma_z", "trials", "eta", "threads", "out", "debug_nonprivate",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub command: Command,
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub d: Vec<usize>,
    pub privacy: Vec<PrivacyPoint>,
    pub seeds: Vec<u64>,
    pub family: QueryFamily,
    /// Queries per OLVQ session, `T`.
    pub queries: usize,
    /// Session failure probability; the ERM solvers default to `1/n`.
    pub beta: Option<f64>,
    pub q: Option<usize>,
    pub q_cap: usize,
    /// Number of ERM problems sharing one session.
    pub m: usize,
    pub lipschitz: f64,
    pub radius: f64,
    pub mu: f64,
    pub sigma_z: Vec<f64>,
    pub trials: usize,
    pub eta: Option<f64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub debug_nonprivate: bool,
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, SpecError> {
    let mut map = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((key, value)) => {
                let key = normalize_key(key);
                if KEYS.contains(&key.as_str()) {
                    map.insert(key, value.trim().to_string());
                } else {
                    errors.push((key, format!("unknown key on line {}", i + 1)));
                }
            }
            None => errors.push((format!("line {}", i + 1), format!("expected key = value, got `{line}`"))),
        }
    }
    if errors.is_empty() {
        Ok(map)
    } else {
        Err(SpecError(errors))
    }
}

pub fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    let items: Result<Vec<T>, String> = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| format!("`{x}`: {e}")))
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

/// Comma list where items may also be half-open ranges `a..b`.
fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        if let Some((a, b)) = item.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|e| format!("`{item}`: {e}"))?;
            let b: u64 = b.trim().parse().map_err(|e| format!("`{item}`: {e}"))?;
            if b <= a {
                return Err(format!("empty range `{item}`"));
            }
            out.extend(a..b);
        } else {
            out.push(item.parse().map_err(|e| format!("`{item}`: {e}"))?);
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(format!("expected a boolean, got `{other}`")),
    }
}

struct Collector<'a> {
    map: &'a BTreeMap<String, String>,
    errors: Vec<(String, String)>,
}

impl Collector<'_> {
    fn get<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> Result<T, String>) -> T {
        match self.map.get(key) {
            None => default,
            Some(v) => match parse(v) {
                Ok(x) => x,
                Err(e) => {
                    self.errors.push((key.to_string(), e));
                    default
                }
            },
        }
    }

    fn check(&mut self, ok: bool, key: &str, reason: &str) {
        if !ok {
            self.errors.push((key.to_string(), reason.to_string()));
        }
    }
}

fn scalar<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    s.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", s.trim()))
}

impl ExperimentSpec {
    /// Builds a spec from merged settings, filling per-command defaults.
    pub fn from_map(command: Command, map: &BTreeMap<String, String>) -> Result<Self, SpecError> {
        let mut c = Collector {
            map,
            errors: Vec::new(),
        };
        let (dn, dk, dd): (Vec<usize>, Vec<usize>, Vec<usize>) = match command {
            Command::ErmConvex | Command::ErmStronglyConvex => (vec![256], vec![4], vec![]),
            Command::MwuProps => (vec![16], vec![8], vec![8]),
            _ => (vec![2048], vec![16], vec![32]),
        };
        let n = c.get("n", dn, parse_list);
        let k = c.get("k", dk, parse_list);
        let d = c.get("d", dd, parse_list);
        let rho: Option<Vec<f64>> = c.get("rho", None, |s| parse_list(s).map(Some));
        let eps: Option<Vec<f64>> = c.get("eps", None, |s| parse_list(s).map(Some));
        let delta: Option<f64> = c.get("delta", None, |s| scalar(s).map(Some));
        let seeds = c.get("seeds", vec![0], parse_seeds);
        let family = c.get("family", QueryFamily::RandomTable, |s| s.parse());
        let queries = c.get("queries", 64usize, scalar);
        let beta_default = match command {
            Command::ErmConvex | Command::ErmStronglyConvex => None,
            _ => Some(0.1),
        };
        let beta = c.get("beta", beta_default, |s| scalar(s).map(Some));
        let q = c.get("q", None, |s| scalar(s).map(Some));
        let q_cap = c.get("q_cap", pvmw_core::erm::DEFAULT_Q_CAP, scalar);
        let m = c.get("m", 1usize, scalar);
        let lipschitz: f64 = c.get("lipschitz", 1.0, scalar);
        let radius: f64 = c.get("radius", 1.0, scalar);
        let mu: f64 = c.get("mu", 1.0, scalar);
        let default_trials = match command {
            Command::MwuProps => 500,
            _ => 100_000,
        };
        let sigma_z = c.get("sigma_z", vec![0.1, 0.15, 0.2], parse_list);
        let trials = c.get("trials", default_trials, scalar);
        let eta: Option<f64> = c.get("eta", None, |s| scalar(s).map(Some));
        let threads = c.get("threads", None, |s| scalar(s).map(Some));
        let out = c.get("out", None, |s| Ok(Some(PathBuf::from(s.trim()))));
        let debug_nonprivate = c.get("debug_nonprivate", false, parse_bool);

        let privacy = match (rho, eps) {
            (Some(_), Some(_)) => {
                c.errors.push(("rho".into(), "give either rho or eps/delta, not both".into()));
                Vec::new()
            }
            (Some(r), None) => r.into_iter().map(PrivacyPoint::Rho).collect(),
            (None, Some(e)) => match delta {
                Some(delta) => e.into_iter().map(|epsilon| PrivacyPoint::EpsDelta { epsilon, delta }).collect(),
                None => {
                    c.errors.push(("delta".into(), "required with eps".into()));
                    Vec::new()
                }
            },
            (None, None) => vec![PrivacyPoint::Rho(1.0)],
        };
        for p in &privacy {
            match *p {
                PrivacyPoint::Rho(r) => c.check(r > 0.0 && r.is_finite(), "rho", "must be positive"),
                PrivacyPoint::EpsDelta { epsilon, delta } => {
                    c.check(epsilon > 0.0 && epsilon.is_finite(), "eps", "must be positive");
                    c.check(delta > 0.0 && delta < 0.5, "delta", "must lie in (0, 1/2)");
                }
            }
        }
        c.check(!n.is_empty() && !k.is_empty() && !seeds.is_empty(), "grid", "n, k and seeds must be nonempty");
        c.check(n.iter().all(|&x| x >= 1), "n", "must be >= 1");
        c.check(k.iter().all(|&x| x >= 2), "k", "must be >= 2");
        c.check(d.iter().all(|&x| x >= 1), "d", "must be >= 1");
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        c.check(sorted.len() == seeds.len(), "seeds", "must be distinct");
        c.check(queries >= 1, "queries", "must be >= 1");
        if let Some(b) = beta {
            c.check(b > 0.0 && b < 0.5, "beta", "must lie in (0, 1/2)");
        }
        c.check(q != Some(0), "q", "must be >= 1");
        c.check(q_cap >= 1, "q_cap", "must be >= 1");
        c.check(m >= 1, "m", "must be >= 1");
        c.check(lipschitz > 0.0 && lipschitz.is_finite(), "lipschitz", "must be positive");
        c.check(radius > 0.0 && radius.is_finite(), "radius", "must be positive");
        c.check(mu > 0.0 && mu.is_finite(), "mu", "must be positive");
        c.check(sigma_z.iter().all(|&s| s > 0.0 && s <= 1.0), "sigma_z", "values must lie in (0, 1]");
        c.check(trials >= 1, "trials", "must be >= 1");
        if command == Command::VerifyClip {
            c.check(trials >= 10_000, "trials", "the Monte-Carlo check needs at least 10^4 trials");
        }
        if let Some(e) = eta {
            c.check(e > 0.0 && e.is_finite(), "eta", "must be positive");
        }
        c.check(threads != Some(0), "threads", "must be >= 1");
        if command == Command::OlvqSweep && family != QueryFamily::Gradient {
            c.check(!d.is_empty(), "d", "grid is empty");
        }

        if !c.errors.is_empty() {
            return Err(SpecError(c.errors));
        }
        Ok(Self {
            command,
            n,
            k,
            d,
            privacy,
            seeds,
            family,
            queries,
            beta,
            q,
            q_cap,
            m,
            lipschitz,
            radius,
            mu,
            sigma_z,
            trials,
            eta,
            threads,
            out,
            debug_nonprivate,
        })
    }

    /// Parses a config file's text and overlays `overrides` (flags win).
    pub fn from_sources(
        command: Command,
        config_text: Option<&str>,
        overrides: &BTreeMap<String, String>,
    ) -> Result<Self, SpecError> {
        let mut map = match config_text {
            Some(t) => parse_config_text(t)?,
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            map.insert(normalize_key(k), v.clone());
        }
        Self::from_map(command, &map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn flags_override_the_file() {
        let text = "# sweep\nn = 1024, 4096\nk=16\nrho = 0.5\nfamily = gradient\n";
        let spec = ExperimentSpec::from_sources(Command::OlvqSweep, Some(text), &map(&[("n", "64")])).unwrap();
        assert_eq!(spec.n, vec![64]);
        assert_eq!(spec.k, vec![16]);
        assert_eq!(spec.privacy, vec![PrivacyPoint::Rho(0.5)]);
        assert_eq!(spec.family, QueryFamily::Gradient);
        assert_eq!(spec.beta, Some(0.1));
    }

    #[test]
    fn seeds_accept_ranges() {
        let spec = ExperimentSpec::from_map(Command::OlvqSweep, &map(&[("seeds", "0..3, 10")])).unwrap();
        assert_eq!(spec.seeds, vec![0, 1, 2, 10]);
    }

    #[test]
    fn invalid_fields_are_listed_by_name() {
        let err = ExperimentSpec::from_map(
            Command::OlvqSweep,
            &map(&[("n", "0"), ("seeds", "1,1"), ("beta", "0.7"), ("k", "x")]),
        )
        .unwrap_err();
        let names: Vec<&str> = err.0.iter().map(|e| e.0.as_str()).collect();
        for field in ["n", "seeds", "beta", "k"] {
            assert!(names.contains(&field), "{names:?}");
        }
    }

    #[test]
    fn eps_requires_delta() {
        assert!(ExperimentSpec::from_map(Command::ErmConvex, &map(&[("eps", "1")])).is_err());
        let spec = ExperimentSpec::from_map(Command::ErmConvex, &map(&[("eps", "1,2"), ("delta", "1e-6")])).unwrap();
        assert_eq!(spec.privacy.len(), 2);
        assert_eq!(spec.beta, None);
        assert!(ExperimentSpec::from_map(Command::ErmConvex, &map(&[("eps", "1"), ("rho", "1")])).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config_text("colour = blue\n").is_err());
        assert!(parse_config_text("just text\n").is_err());
    }
}
