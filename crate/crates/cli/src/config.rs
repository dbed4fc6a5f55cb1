//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. State and bin
//! indices are 1-based. Recognised keys:
//!
//! | key | values | default |
//! |-----|--------|---------|
//! | `chain` | `three-well`, `two-state`, `csv:PATH` | `three-well` |
//! | `observable` | state set (see below) or `csv:PATH` | `28-33` on three-well, `2` on two-state |
//! | `bins` | `width:W`, `singletons`, `single`, `list:b1,b2,...` | `width:3` on three-well, `singletons` otherwise |
//! | `zeta` | `uniform` or `csv:PATH` | `uniform` |
//! | `coarse` | `exact` or `mc:BUDGET` | `exact` |
//! | `modes` | comma list of `adaptive`, `traditional`, `naive` | all three |
//! | `N` | total particles | `150` |
//! | `floor` | per-bin floor Ñ for adaptive mode | `1` |
//! | `per_bin_target` | traditional per-bin target | `5` |
//! | `horizons` | comma list of horizons | `5,10,15,20,25,30` |
//! | `reps` | replicates for every mode | |
//! | `reps.adaptive`, `reps.traditional`, `reps.naive` | per-mode replicates | `1000`, `10000`, `50000` |
//! | `seed` | `u64` | `1` |
//! | `out` | output directory | `results` |
//! | `diagnose.n` | horizon for checks | `5` |
//! | `diagnose.reps` | replicates for checks | `2000` |
//! | `diagnose.corrupt_weights` | weight factor applied after every selection (test hook) | `1` |
//! | `hill.source` | `S` or `S1:w1,S2:w2,...` | `1` |
//! | `hill.sink` | state set | |
//! | `hill.a`, `hill.b` | state sets; the sink is `A ∪ B` | |
//! | `hill.bins` | as `bins` | `singletons` |
//! | `hill.horizon` | relaxation horizon | `30` |
//! | `hill.reps` | replicates | `1000` |
//!
//! A state set is a comma list of states and inclusive ranges, e.g.
//! `1,4,81-90`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use we_core::csvio::{read_matrix, read_vector};
use we_core::three_well;
use we_core::{BinPartition, Distribution, Observable, SelectionPolicy, TransitionMatrix};

/// Configuration errors map to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type ConfigResult<T> = std::result::Result<T, ConfigError>;

fn bad<T>(msg: impl Into<String>) -> ConfigResult<T> {
    Err(ConfigError(msg.into()))
}

const KNOWN_KEYS: &[&str] = &[
    "chain",
    "observable",
    "bins",
    "zeta",
    "coarse",
    "modes",
    "N",
    "floor",
    "per_bin_target",
    "horizons",
    "reps",
    "reps.adaptive",
    "reps.traditional",
    "reps.naive",
    "seed",
    "out",
    "diagnose.n",
    "diagnose.reps",
    "diagnose.corrupt_weights",
    "hill.source",
    "hill.sink",
    "hill.a",
    "hill.b",
    "hill.bins",
    "hill.horizon",
    "hill.reps",
];

/// Raw key/value pairs, ordered by key so the hash is canonical.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig(BTreeMap<String, String>);

impl RawConfig {
    pub fn parse(text: &str) -> ConfigResult<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return bad(format!("line {}: expected key = value", lineno + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                return bad(format!("line {}: unknown key {k:?}", lineno + 1));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return bad(format!("line {}: duplicate key {k:?}", lineno + 1));
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// `key=value` lines in key order, excluding the output directory.
    pub fn canonical(&self) -> String {
        self.0
            .iter()
            .filter(|(k, _)| k.as_str() != "out")
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    fn parse_num<T: std::str::FromStr>(&self, key: &str, default: T) -> ConfigResult<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError(format!("{key}: cannot parse {v:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mode {
    Adaptive,
    Traditional,
    Naive,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Adaptive, Mode::Traditional, Mode::Naive];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Adaptive => "adaptive",
            Mode::Traditional => "traditional",
            Mode::Naive => "naive",
        }
    }

    fn default_reps(self) -> usize {
        match self {
            Mode::Adaptive => 1_000,
            Mode::Traditional => 10_000,
            Mode::Naive => 50_000,
        }
    }

    fn parse(s: &str) -> ConfigResult<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ConfigError(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoarseBuilder {
    Exact,
    MonteCarlo { budget: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HillConfig {
    pub source: Distribution,
    pub sink: Vec<usize>,
    /// `(A, B)` for the hitting-probability variant.
    pub split: Option<(Vec<usize>, Vec<usize>)>,
    pub bins: BinPartition,
    pub horizon: usize,
    pub reps: usize,
}

/// Fully resolved and validated experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub chain_name: String,
    pub kernel: TransitionMatrix,
    pub observable: Observable,
    pub bins: BinPartition,
    pub zeta: Distribution,
    pub coarse: CoarseBuilder,
    pub modes: Vec<Mode>,
    pub total: usize,
    pub floor: f64,
    pub per_bin_target: f64,
    pub horizons: Vec<usize>,
    pub reps: BTreeMap<Mode, usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub diagnose_n: usize,
    pub diagnose_reps: usize,
    pub corrupt_weights: f64,
    pub hill: Option<HillConfig>,
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig) -> ConfigResult<Self> {
        let chain_name = raw.get("chain").unwrap_or("three-well").to_string();
        let kernel = load_chain(&chain_name)?;
        let size = kernel.size();

        let observable = match raw.get("observable") {
            Some(spec) => parse_observable(spec, size)?,
            None => match chain_name.as_str() {
                "three-well" => three_well::observable(),
                "two-state" => indicator(size, &[1])?,
                _ => return bad("observable is required for a csv chain"),
            },
        };

        let default_bins = if chain_name == "three-well" {
            "width:3"
        } else {
            "singletons"
        };
        let bins = parse_bins(raw.get("bins").unwrap_or(default_bins), size)?;

        let zeta = match raw.get("zeta").unwrap_or("uniform") {
            "uniform" => Distribution::uniform(size),
            s => match s.strip_prefix("csv:") {
                Some(path) => {
                    let v = read_vector(open(path)?).map_err(|e| ConfigError(format!("zeta: {e}")))?;
                    check_len("zeta", v.len(), size)?;
                    Distribution::normalized(v).map_err(|e| ConfigError(format!("zeta: {e}")))?
                }
                None => return bad(format!("zeta: expected uniform or csv:PATH, got {s:?}")),
            },
        };

        let coarse = match raw.get("coarse").unwrap_or("exact") {
            "exact" => CoarseBuilder::Exact,
            s => match s.strip_prefix("mc:").map(str::parse::<usize>) {
                Some(Ok(budget)) => CoarseBuilder::MonteCarlo { budget },
                _ => return bad(format!("coarse: expected exact or mc:BUDGET, got {s:?}")),
            },
        };

        let modes = match raw.get("modes") {
            None => Mode::ALL.to_vec(),
            Some(s) => {
                let mut m = s
                    .split(',')
                    .map(|t| Mode::parse(t.trim()))
                    .collect::<ConfigResult<Vec<_>>>()?;
                m.sort();
                m.dedup();
                m
            }
        };
        if modes.is_empty() {
            return bad("modes: at least one mode is required");
        }

        let total: usize = raw.parse_num("N", 150)?;
        let floor: f64 = raw.parse_num("floor", 1.0)?;
        let per_bin_target: f64 = raw.parse_num("per_bin_target", 5.0)?;
        for mode in &modes {
            policy_for(*mode, total, floor, per_bin_target)
                .validate(bins.num_bins())
                .map_err(|e| ConfigError(format!("{}: {e}", mode.name())))?;
        }
        if total < bins.num_bins() {
            return bad(format!(
                "N = {total} is smaller than the number of bins {}",
                bins.num_bins()
            ));
        }

        let horizons = match raw.get("horizons") {
            None => vec![5, 10, 15, 20, 25, 30],
            Some(s) => parse_list::<usize>("horizons", s)?,
        };
        if horizons.is_empty() {
            return bad("horizons: at least one horizon is required");
        }
        if horizons.windows(2).any(|w| w[0] >= w[1]) {
            return bad("horizons must be strictly ascending");
        }

        let mut reps = BTreeMap::new();
        for mode in Mode::ALL {
            let global: Option<usize> = match raw.get("reps") {
                Some(_) => Some(raw.parse_num("reps", 0)?),
                None => None,
            };
            let key = format!("reps.{}", mode.name());
            let n = raw.parse_num(&key, global.unwrap_or(mode.default_reps()))?;
            if n == 0 {
                return bad(format!("{key}: replicate count must be positive"));
            }
            reps.insert(mode, n);
        }

        let seed: u64 = raw.parse_num("seed", 1)?;
        let out = PathBuf::from(raw.get("out").unwrap_or("results"));
        let diagnose_n: usize = raw.parse_num("diagnose.n", 5)?;
        let diagnose_reps: usize = raw.parse_num("diagnose.reps", 2000)?;
        if diagnose_reps < 2 {
            return bad("diagnose.reps must be at least 2");
        }
        let corrupt_weights: f64 = raw.parse_num("diagnose.corrupt_weights", 1.0)?;
        if !(corrupt_weights.is_finite() && corrupt_weights > 0.0) {
            return bad("diagnose.corrupt_weights must be positive");
        }

        let hill = parse_hill(&raw, size)?;

        Ok(Self {
            raw,
            chain_name,
            kernel,
            observable,
            bins,
            zeta,
            coarse,
            modes,
            total,
            floor,
            per_bin_target,
            horizons,
            reps,
            seed,
            out,
            diagnose_n,
            diagnose_reps,
            corrupt_weights,
            hill,
        })
    }

    pub fn policy(&self, mode: Mode) -> SelectionPolicy {
        policy_for(mode, self.total, self.floor, self.per_bin_target)
    }

    pub fn hash(&self) -> String {
        self.raw.hash()
    }
}

pub fn policy_for(mode: Mode, total: usize, floor: f64, per_bin_target: f64) -> SelectionPolicy {
    match mode {
        Mode::Adaptive => SelectionPolicy::Adaptive {
            total: total as f64,
            floor,
        },
        Mode::Traditional => SelectionPolicy::Traditional { per_bin_target },
        Mode::Naive => SelectionPolicy::Naive,
    }
}

fn open(path: &str) -> ConfigResult<File> {
    File::open(path).map_err(|e| ConfigError(format!("cannot open {path}: {e}")))
}

fn check_len(what: &str, found: usize, expected: usize) -> ConfigResult<()> {
    if found != expected {
        return bad(format!("{what}: expected {expected} entries, found {found}"));
    }
    Ok(())
}

fn load_chain(name: &str) -> ConfigResult<TransitionMatrix> {
    match name {
        "three-well" => Ok(three_well::build_chain().1),
        "two-state" => {
            Ok(TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).expect("two-state preset is stochastic"))
        }
        s => match s.strip_prefix("csv:") {
            Some(path) => read_matrix(open(path)?).map_err(|e| ConfigError(format!("chain: {e}"))),
            None => bad(format!("chain: expected three-well, two-state or csv:PATH, got {s:?}")),
        },
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> ConfigResult<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| ConfigError(format!("{key}: cannot parse {t:?}")))
        })
        .collect()
}

/// 1-based state set with ranges, returned 0-based, sorted and deduplicated.
pub fn parse_state_set(key: &str, s: &str, size: usize) -> ConfigResult<Vec<usize>> {
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (lo, hi) = match tok.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (tok, tok),
        };
        let parse = |t: &str| -> ConfigResult<usize> {
            match t.parse::<usize>() {
                Ok(i) if (1..=size).contains(&i) => Ok(i - 1),
                _ => bad(format!("{key}: state {t:?} is not in 1..={size}")),
            }
        };
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if lo > hi {
            return bad(format!("{key}: empty range {tok:?}"));
        }
        out.extend(lo..=hi);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn indicator(size: usize, states: &[usize]) -> ConfigResult<Observable> {
    Observable::indicator(size, states).map_err(|e| ConfigError(format!("observable: {e}")))
}

fn parse_observable(spec: &str, size: usize) -> ConfigResult<Observable> {
    match spec.strip_prefix("csv:") {
        Some(path) => {
            let v = read_vector(open(path)?).map_err(|e| ConfigError(format!("observable: {e}")))?;
            check_len("observable", v.len(), size)?;
            Observable::new(v).map_err(|e| ConfigError(format!("observable: {e}")))
        }
        None => {
            let states = parse_state_set("observable", spec, size)?;
            if states.is_empty() {
                return bad("observable: empty state set");
            }
            indicator(size, &states)
        }
    }
}

fn parse_bins(spec: &str, size: usize) -> ConfigResult<BinPartition> {
    let err = |e: we_core::Error| ConfigError(format!("bins: {e}"));
    match spec {
        "singletons" => BinPartition::singletons(size).map_err(err),
        "single" => BinPartition::single(size).map_err(err),
        s => {
            if let Some(w) = s.strip_prefix("width:") {
                let w: usize = w
                    .trim()
                    .parse()
                    .map_err(|_| ConfigError(format!("bins: bad width {w:?}")))?;
                BinPartition::uniform_width(size, w).map_err(err)
            } else if let Some(list) = s.strip_prefix("list:") {
                let labels = parse_list::<usize>("bins", list)?;
                check_len("bins", labels.len(), size)?;
                if labels.contains(&0) {
                    return bad("bins: labels are 1-based");
                }
                BinPartition::from_assignment(labels.into_iter().map(|b| b - 1).collect()).map_err(err)
            } else {
                bad(format!("bins: unrecognised value {s:?}"))
            }
        }
    }
}

fn parse_source(spec: &str, size: usize) -> ConfigResult<Distribution> {
    if !spec.contains(':') {
        let states = parse_state_set("hill.source", spec, size)?;
        if states.len() != 1 {
            return bad("hill.source: a bare source must be a single state");
        }
        return Distribution::point_mass(size, states[0]).map_err(|e| ConfigError(format!("hill.source: {e}")));
    }
    let mut w = vec![0.0; size];
    for tok in spec.split(',') {
        let Some((s, v)) = tok.split_once(':') else {
            return bad(format!("hill.source: expected STATE:WEIGHT, got {tok:?}"));
        };
        let state = parse_state_set("hill.source", s, size)?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| ConfigError(format!("hill.source: bad weight {v:?}")))?;
        if state.len() != 1 {
            return bad(format!("hill.source: expected one state in {tok:?}"));
        }
        w[state[0]] += v;
    }
    Distribution::normalized(w).map_err(|e| ConfigError(format!("hill.source: {e}")))
}

fn parse_hill(raw: &RawConfig, size: usize) -> ConfigResult<Option<HillConfig>> {
    let sink = raw.get("hill.sink");
    let (a, b) = (raw.get("hill.a"), raw.get("hill.b"));
    if sink.is_none() && a.is_none() && b.is_none() {
        return Ok(None);
    }
    let split = match (a, b) {
        (Some(a), Some(b)) => {
            let a = parse_state_set("hill.a", a, size)?;
            let b = parse_state_set("hill.b", b, size)?;
            if a.iter().any(|x| b.contains(x)) {
                return bad("hill.a and hill.b overlap");
            }
            Some((a, b))
        }
        (None, None) => None,
        _ => return bad("hill.a and hill.b must be given together"),
    };
    let sink = match (sink, &split) {
        (Some(s), None) => parse_state_set("hill.sink", s, size)?,
        (None, Some((a, b))) => {
            let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
            u.sort_unstable();
            u
        }
        (Some(s), Some((a, b))) => {
            let s = parse_state_set("hill.sink", s, size)?;
            let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
            u.sort_unstable();
            if s != u {
                return bad("hill.sink must equal hill.a ∪ hill.b");
            }
            s
        }
        (None, None) => unreachable!(),
    };
    if sink.is_empty() {
        return bad("hill sink set is empty");
    }
    let source = parse_source(raw.get("hill.source").unwrap_or("1"), size)?;
    if sink.iter().any(|&s| source.values()[s] > 0.0) {
        return bad("hill.source overlaps the sink");
    }
    let bins = parse_bins(raw.get("hill.bins").unwrap_or("singletons"), size)?;
    let horizon = raw.parse_num("hill.horizon", 30)?;
    let reps: usize = raw.parse_num("hill.reps", 1000)?;
    if reps < 2 {
        return bad("hill.reps must be at least 2");
    }
    Ok(Some(HillConfig {
        source,
        sink,
        split,
        bins,
        horizon,
        reps,
    }))
}
