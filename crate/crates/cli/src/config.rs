//! Flat key-value configuration with strict precedence.
//!
//! Every subcommand accepts the same four common keys (`seed`, `out`,
//! `format`, `config`) plus its own dotted-path keys. Values are plain
//! strings until a command asks for a typed view, which keeps the
//! precedence chain trivial: defaults, then the `YLAB_SEED` environment
//! variable (seed only), then the config file, then command-line flags.
//! Any violation of the contract — unknown key, malformed line, bad value,
//! missing subcommand — is a usage error and exits with code 2.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{CliError, CliResult};

/// How a key's value is parsed and whether the flag may appear bare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    U64,
    Usize,
    F64,
    Bool,
    Str,
    /// Comma-separated unsigned integers, e.g. `4096,65536`.
    UsizeList,
    /// Comma-separated strings, e.g. `3:1,full`.
    StrList,
    /// Comma-separated booleans, e.g. `true,false`.
    BoolList,
}

impl Kind {
    /// Bare `--flag` form (no value) is allowed only for boolean kinds,
    /// where it means `true`.
    fn allows_bare(self) -> bool {
        matches!(self, Kind::Bool | Kind::BoolList)
    }
}

/// One accepted configuration key: name, type, default, and help text.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub help: &'static str,
}

/// Keys every subcommand accepts.
pub const COMMON_KEYS: &[KeySpec] = &[
    KeySpec {
        name: "seed",
        kind: Kind::U64,
        default: "42",
        help: "RNG seed; the YLAB_SEED environment variable is the fallback, flags win",
    },
    KeySpec {
        name: "out",
        kind: Kind::Str,
        default: "",
        help: "output file path; empty writes to stdout",
    },
    KeySpec {
        name: "format",
        kind: Kind::Str,
        default: "csv",
        help: "output format: csv or json",
    },
    KeySpec {
        name: "config",
        kind: Kind::Str,
        default: "",
        help: "flat `key = value` config file; flags override file values",
    },
];

/// A subcommand's name, one-line description, and its extra keys.
#[derive(Debug, Clone, Copy)]
pub struct SubcommandSpec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [KeySpec],
}

/// The fully resolved configuration for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub subcommand: &'static str,
    values: BTreeMap<&'static str, String>,
    specs: Vec<KeySpec>,
}

impl RunConfig {
    fn spec(&self, key: &str) -> &KeySpec {
        self.specs
            .iter()
            .find(|s| s.name == key)
            .unwrap_or_else(|| panic!("command {} never declared key {key}", self.subcommand))
    }

    fn raw(&self, key: &str) -> &str {
        self.spec(key); // assert the key belongs to this subcommand
        self.values.get(key).map(String::as_str).unwrap_or_else(|| {
            panic!("key {key} missing from resolved config of {}", self.subcommand)
        })
    }

    pub fn get_str(&self, key: &str) -> String {
        self.raw(key).to_string()
    }

    pub fn get_u64(&self, key: &str) -> CliResult<u64> {
        parse_typed(key, self.raw(key), Kind::U64).map(|v| match v {
            Typed::U64(x) => x,
            _ => unreachable!(),
        })
    }

    pub fn get_usize(&self, key: &str) -> CliResult<usize> {
        parse_typed(key, self.raw(key), Kind::Usize).map(|v| match v {
            Typed::Usize(x) => x,
            _ => unreachable!(),
        })
    }

    pub fn get_f64(&self, key: &str) -> CliResult<f64> {
        parse_typed(key, self.raw(key), Kind::F64).map(|v| match v {
            Typed::F64(x) => x,
            _ => unreachable!(),
        })
    }

    pub fn get_bool(&self, key: &str) -> CliResult<bool> {
        parse_typed(key, self.raw(key), Kind::Bool).map(|v| match v {
            Typed::Bool(x) => x,
            _ => unreachable!(),
        })
    }

    pub fn get_usize_list(&self, key: &str) -> CliResult<Vec<usize>> {
        parse_typed(key, self.raw(key), Kind::UsizeList).map(|v| match v {
            Typed::UsizeList(x) => x,
            _ => unreachable!(),
        })
    }

    pub fn get_str_list(&self, key: &str) -> CliResult<Vec<String>> {
        parse_typed(key, self.raw(key), Kind::StrList).map(|v| match v {
            Typed::StrList(x) => x,
            _ => unreachable!(),
        })
    }

    pub fn get_bool_list(&self, key: &str) -> CliResult<Vec<bool>> {
        parse_typed(key, self.raw(key), Kind::BoolList).map(|v| match v {
            Typed::BoolList(x) => x,
            _ => unreachable!(),
        })
    }

    /// The `format` key, validated to one of the two supported names.
    pub fn format(&self) -> CliResult<crate::output::Format> {
        match self.raw("format") {
            "csv" => Ok(crate::output::Format::Csv),
            "json" => Ok(crate::output::Format::Json),
            other => Err(CliError::usage(format!(
                "invalid value for key format: '{other}' (expected csv or json)"
            ))),
        }
    }

    /// The `out` key as an optional path (empty string means stdout).
    pub fn out_path(&self) -> Option<std::path::PathBuf> {
        let raw = self.raw("out");
        if raw.is_empty() {
            None
        } else {
            Some(std::path::PathBuf::from(raw))
        }
    }
}

enum Typed {
    U64(u64),
    Usize(usize),
    F64(f64),
    Bool(bool),
    /// Strings are read raw via [`RunConfig::get_str`]; this variant only
    /// marks them valid.
    Str,
    UsizeList(Vec<usize>),
    StrList(Vec<String>),
    BoolList(Vec<bool>),
}

fn bad_value(key: &str, value: &str, expected: &str) -> CliError {
    CliError::usage(format!("invalid value for key {key}: '{value}' (expected {expected})"))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, value, "true or false")),
    }
}

fn parse_typed(key: &str, value: &str, kind: Kind) -> CliResult<Typed> {
    match kind {
        Kind::U64 => value
            .parse::<u64>()
            .map(Typed::U64)
            .map_err(|_| bad_value(key, value, "an unsigned integer")),
        Kind::Usize => value
            .parse::<usize>()
            .map(Typed::Usize)
            .map_err(|_| bad_value(key, value, "an unsigned integer")),
        Kind::F64 => match value.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Typed::F64(x)),
            _ => Err(bad_value(key, value, "a finite number")),
        },
        Kind::Bool => parse_bool(key, value).map(Typed::Bool),
        Kind::Str => Ok(Typed::Str),
        Kind::UsizeList => {
            let mut items = Vec::new();
            for part in value.split(',') {
                items.push(
                    part.trim()
                        .parse::<usize>()
                        .map_err(|_| bad_value(key, value, "comma-separated unsigned integers"))?,
                );
            }
            if items.is_empty() {
                return Err(bad_value(key, value, "a non-empty list"));
            }
            Ok(Typed::UsizeList(items))
        }
        Kind::StrList => {
            let items: Vec<String> =
                value.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect();
            if items.is_empty() {
                return Err(bad_value(key, value, "a non-empty comma-separated list"));
            }
            Ok(Typed::StrList(items))
        }
        Kind::BoolList => {
            let mut items = Vec::new();
            for part in value.split(',') {
                items.push(parse_bool(key, part.trim())?);
            }
            Ok(Typed::BoolList(items))
        }
    }
}

/// What argument parsing produced: either help text to print, or a run.
#[derive(Debug)]
pub enum ParseOutcome {
    Help(String),
    Run(RunConfig),
}

fn find_subcommand(registry: &[SubcommandSpec], name: &str) -> CliResult<&'static str> {
    for spec in registry {
        if spec.name == name {
            return Ok(spec.name);
        }
    }
    let names: Vec<&str> = registry.iter().map(|s| s.name).collect();
    Err(CliError::usage(format!(
        "unknown subcommand '{name}' (expected one of: {})",
        names.join(", ")
    )))
}

fn all_keys(registry: &[SubcommandSpec], sub: &str) -> Vec<KeySpec> {
    let extra = registry.iter().find(|s| s.name == sub).map(|s| s.keys).unwrap_or(&[]);
    COMMON_KEYS.iter().chain(extra.iter()).copied().collect()
}

fn key_list(specs: &[KeySpec]) -> String {
    specs.iter().map(|s| s.name).collect::<Vec<_>>().join(", ")
}

fn lookup<'a>(specs: &'a [KeySpec], key: &str) -> Option<&'a KeySpec> {
    specs.iter().find(|s| s.name == key)
}

/// Global help: subcommand listing.
pub fn global_help(registry: &[SubcommandSpec]) -> String {
    let mut text = String::from(
        "ylab — deterministic laboratory for routing, caching, packing, and preference tuning\n\n\
         Usage: ylab <subcommand> [--key value | --key=value]...\n\nSubcommands:\n",
    );
    let width = registry.iter().map(|s| s.name.len()).max().unwrap_or(0);
    for spec in registry {
        let _ = writeln!(text, "  {:width$}  {}", spec.name, spec.about);
    }
    text.push_str(
        "\nRun `ylab <subcommand> --help` to list that subcommand's keys with defaults.\n",
    );
    text
}

/// Per-subcommand help: every accepted dotted-path key with its default.
fn subcommand_help(registry: &[SubcommandSpec], sub: &str) -> String {
    let spec = registry.iter().find(|s| s.name == sub).expect("known subcommand");
    let keys = all_keys(registry, sub);
    let mut text = format!("ylab {sub} — {}\n\nUsage: ylab {sub} [--key value | --key=value]...\n\nKeys (current defaults in brackets):\n", spec.about);
    let width = keys.iter().map(|s| s.name.len()).max().unwrap_or(0);
    for key in &keys {
        let shown = if key.default.is_empty() { "\"\"" } else { key.default };
        let _ = writeln!(text, "  {:width$}  [{}] {}", key.name, shown, key.help);
    }
    text.push_str("\nBoolean keys may be passed bare: `--share` is `--share true`.\n");
    text
}

/// Splits one `--key[=value]` token. Returns (key, Some(value)) for the
/// `=` form and (key, None) otherwise.
fn split_flag(token: &str) -> CliResult<(&str, Option<&str>)> {
    let body = token.strip_prefix("--").expect("caller checked the prefix");
    if body.is_empty() {
        return Err(CliError::usage("empty flag '--' is not accepted".to_string()));
    }
    match body.split_once('=') {
        Some((k, v)) => Ok((k, Some(v))),
        None => Ok((body, None)),
    }
}

/// Parses a flat `key = value` config file body. `#` starts a comment and
/// blank lines are skipped. Unknown keys and lines without `=` are usage
/// errors that name the offending line.
fn parse_config_file(
    body: &str,
    path: &str,
    specs: &[KeySpec],
) -> CliResult<Vec<(&'static str, String)>> {
    let mut entries = Vec::new();
    for (idx, raw_line) in body.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.split_once('#') {
            Some((before, _)) => before.trim(),
            None => raw_line.trim(),
        };
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!("{path}:{line_no}: malformed line (expected `key = value`)"))
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(CliError::usage(format!("{path}:{line_no}: missing key before `=`")));
        }
        if key == "config" {
            return Err(CliError::usage(format!(
                "{path}:{line_no}: config files cannot include other config files"
            )));
        }
        let spec = lookup(specs, key).ok_or_else(|| {
            CliError::usage(format!(
                "{path}:{line_no}: unknown key '{key}' (valid keys: {})",
                key_list(specs)
            ))
        })?;
        entries.push((spec.name, value.to_string()));
    }
    Ok(entries)
}

/// Parses argv into either help text or a resolved [`RunConfig`].
///
/// Precedence, lowest to highest: key defaults, `YLAB_SEED` (seed only),
/// config file entries, command-line flags. Every resolved value is
/// validated against its declared kind up front, so a bad value from any
/// source is a usage error before the command starts.
pub fn parse(
    argv: &[String],
    registry: &[SubcommandSpec],
    env_seed: Option<&str>,
) -> CliResult<ParseOutcome> {
    let first = argv.get(1).map(String::as_str);
    let sub = match first {
        None => {
            return Err(CliError::usage(format!(
                "missing subcommand\n\n{}",
                global_help(registry)
            )))
        }
        Some("--help") | Some("-h") | Some("help") => {
            return Ok(ParseOutcome::Help(global_help(registry)))
        }
        Some(name) if name.starts_with('-') => {
            return Err(CliError::usage(format!(
                "expected a subcommand before flags, got '{name}'\n\n{}",
                global_help(registry)
            )))
        }
        Some(name) => find_subcommand(registry, name)?,
    };
    let specs = all_keys(registry, sub);

    // First pass: collect raw (key, value) flag pairs in order.
    let mut flags: Vec<(&'static str, String)> = Vec::new();
    let mut i = 2;
    while i < argv.len() {
        let token = argv[i].as_str();
        if token == "--help" || token == "-h" {
            return Ok(ParseOutcome::Help(subcommand_help(registry, sub)));
        }
        if !token.starts_with("--") {
            return Err(CliError::usage(format!(
                "unexpected argument '{token}' (keys are passed as --key value or --key=value)"
            )));
        }
        let (key, inline_value) = split_flag(token)?;
        let spec = lookup(&specs, key).ok_or_else(|| {
            CliError::usage(format!("unknown key '{key}' (valid keys: {})", key_list(&specs)))
        })?;
        let value = match inline_value {
            Some(v) => v.to_string(),
            None => {
                let next = argv.get(i + 1).map(String::as_str);
                match next {
                    Some(v) if !v.starts_with("--") => {
                        i += 1;
                        v.to_string()
                    }
                    _ if spec.kind.allows_bare() => "true".to_string(),
                    _ => {
                        return Err(CliError::usage(format!(
                            "key {key} needs a value (--{key} VALUE or --{key}=VALUE)"
                        )))
                    }
                }
            }
        };
        flags.push((spec.name, value));
        i += 1;
    }

    // Defaults form the base layer.
    let mut values: BTreeMap<&'static str, String> =
        specs.iter().map(|s| (s.name, s.default.to_string())).collect();

    // YLAB_SEED is the fallback seed source; file and flags beat it.
    if let Some(env_value) = env_seed {
        if env_value.parse::<u64>().is_err() {
            return Err(CliError::usage(format!(
                "invalid YLAB_SEED value '{env_value}' (expected an unsigned integer)"
            )));
        }
        values.insert("seed", env_value.to_string());
    }

    // Config file, if any flag named one (last --config flag wins).
    let config_path = flags
        .iter()
        .rev()
        .find(|(k, _)| *k == "config")
        .map(|(_, v)| v.clone())
        .filter(|v| !v.is_empty());
    if let Some(path) = config_path {
        let body = std::fs::read_to_string(&path).map_err(|e| {
            CliError::usage(format!("cannot read config file '{path}': {e}"))
        })?;
        for (key, value) in parse_config_file(&body, &path, &specs)? {
            values.insert(key, value);
        }
    }

    // Flags are the top layer.
    for (key, value) in flags {
        values.insert(key, value);
    }

    // Validate every resolved value against its kind now, so commands can
    // use the typed getters without re-handling bad input.
    for spec in &specs {
        let value = values.get(spec.name).expect("default seeded above");
        if spec.name == "format" {
            if value != "csv" && value != "json" {
                return Err(bad_value("format", value, "csv or json"));
            }
            continue;
        }
        if matches!(spec.kind, Kind::Str) {
            continue;
        }
        parse_typed(spec.name, value, spec.kind)?;
    }

    Ok(ParseOutcome::Run(RunConfig { subcommand: sub, values, specs }))
}
