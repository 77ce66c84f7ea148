//! Cascade profile files.
//!
//! ```text
//! # comments run to end of line
//! [cascade]
//! name = cascade1
//! slo_seconds = 5
//! light.name = sd-turbo
//! light.latency = {1: 0.10, 2: 0.15, 4: 0.25}
//! heavy.name = sdv1.5
//! heavy.latency = {1: 1.78, 2: 3.30, 4: 6.30}
//! deferral.samples = [0.12, 0.57, 0.91]
//! ```
//!
//! Every block starts with `[cascade]`. All keys except `deferral.samples`
//! are required, each at most once; unknown keys are rejected. Latency maps
//! are `batch: seconds` pairs.

use std::fmt::Write as _;
use std::path::Path;

use cascadesim_core::{CascadeProfile, DeferralCurve, ModelProfile, ProfileError};

#[derive(Debug, thiserror::Error)]
pub enum ProfileFileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("block starting at line {line}: missing key `{key}`")]
    Missing { line: usize, key: &'static str },
    #[error("block starting at line {line}: {source}")]
    Invalid { line: usize, source: ProfileError },
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
}

const KEYS: [&str; 7] = [
    "name",
    "slo_seconds",
    "light.name",
    "light.latency",
    "heavy.name",
    "heavy.latency",
    "deferral.samples",
];

#[derive(Default)]
struct Block {
    line: usize,
    values: [Option<(usize, String)>; 7],
}

pub fn load_profiles(path: &Path) -> Result<Vec<CascadeProfile>, ProfileFileError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ProfileFileError::Io { path: path.display().to_string(), source })?;
    parse_profiles(&text)
}

pub fn parse_profiles(text: &str) -> Result<Vec<CascadeProfile>, ProfileFileError> {
    let mut blocks: Vec<Block> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content == "[cascade]" {
            blocks.push(Block { line, ..Block::default() });
            continue;
        }
        let syntax = |msg: String| ProfileFileError::Syntax { line, msg };
        let (key, value) =
            content.split_once('=').ok_or_else(|| syntax(format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim();
        let slot = KEYS.iter().position(|k| *k == key).ok_or_else(|| syntax(format!("unknown key `{key}`")))?;
        let block = blocks.last_mut().ok_or_else(|| syntax("key outside a [cascade] block".into()))?;
        if block.values[slot].is_some() {
            return Err(syntax(format!("duplicate key `{key}`")));
        }
        block.values[slot] = Some((line, value.trim().to_string()));
    }
    blocks.iter().map(build).collect()
}

fn build(block: &Block) -> Result<CascadeProfile, ProfileFileError> {
    let get = |slot: usize| {
        block.values[slot]
            .as_ref()
            .ok_or(ProfileFileError::Missing { line: block.line, key: KEYS[slot] })
    };
    let invalid = |source| ProfileFileError::Invalid { line: block.line, source };
    let (_, name) = get(0)?;
    let (line, slo) = get(1)?;
    let slo = parse_f64(slo, *line)?;
    let model = |name_slot: usize, table_slot: usize| -> Result<ModelProfile, ProfileFileError> {
        let (_, name) = get(name_slot)?;
        let (line, table) = get(table_slot)?;
        ModelProfile::new(name.as_str(), parse_latency(table, *line)?).map_err(invalid)
    };
    let light = model(2, 3)?;
    let heavy = model(4, 5)?;
    let deferral = match &block.values[6] {
        Some((line, v)) => DeferralCurve::from_samples(&parse_samples(v, *line)?).map_err(invalid)?,
        None => DeferralCurve::empty(),
    };
    CascadeProfile::new(name.as_str(), light, heavy, deferral, slo).map_err(invalid)
}

fn parse_f64(s: &str, line: usize) -> Result<f64, ProfileFileError> {
    s.trim()
        .parse()
        .map_err(|_| ProfileFileError::Syntax { line, msg: format!("`{}` is not a number", s.trim()) })
}

fn delimited(s: &str, open: char, close: char, line: usize) -> Result<&str, ProfileFileError> {
    s.strip_prefix(open).and_then(|s| s.strip_suffix(close)).ok_or_else(|| {
        ProfileFileError::Syntax { line, msg: format!("expected `{open} ... {close}`") }
    })
}

fn parse_latency(s: &str, line: usize) -> Result<Vec<(u32, f64)>, ProfileFileError> {
    let inner = delimited(s, '{', '}', line)?;
    inner
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (b, e) = pair.split_once(':').ok_or_else(|| ProfileFileError::Syntax {
                line,
                msg: format!("expected `batch: seconds`, got `{}`", pair.trim()),
            })?;
            let b = b.trim().parse::<u32>().map_err(|_| ProfileFileError::Syntax {
                line,
                msg: format!("`{}` is not a batch size", b.trim()),
            })?;
            Ok((b, parse_f64(e, line)?))
        })
        .collect()
}

fn parse_samples(s: &str, line: usize) -> Result<Vec<f64>, ProfileFileError> {
    delimited(s, '[', ']', line)?
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_f64(p, line))
        .collect()
}

/// Renders profiles in the file format. Deferral curves are not written.
pub fn render_profiles(profiles: &[CascadeProfile]) -> String {
    let mut out = String::new();
    let table = |m: &ModelProfile| {
        let pairs: Vec<String> = m.entries().map(|(b, e)| format!("{b}: {e}")).collect();
        format!("{{{}}}", pairs.join(", "))
    };
    for p in profiles {
        let _ = writeln!(out, "[cascade]");
        let _ = writeln!(out, "name = {}", p.name);
        let _ = writeln!(out, "slo_seconds = {}", p.slo_seconds);
        let _ = writeln!(out, "light.name = {}", p.light.name());
        let _ = writeln!(out, "light.latency = {}", table(&p.light));
        let _ = writeln!(out, "heavy.name = {}", p.heavy.name());
        let _ = writeln!(out, "heavy.latency = {}", table(&p.heavy));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = "\
# reference cascade
[cascade]
name = c1
slo_seconds = 5
light.name = fast
light.latency = {1: 0.1, 2: 0.15}
heavy.name = slow   # trailing comment
heavy.latency = {1: 1.78, 2: 3.3}
deferral.samples = [0.2, 0.4, 0.6, 0.8]
";

    #[test]
    fn parses_a_block() {
        let ps = parse_profiles(ONE).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].slo_seconds, 5.0);
        assert_eq!(ps[0].heavy.exec_latency(2).unwrap(), 3.3);
        assert_eq!(ps[0].deferral.deferral_fraction(0.5).unwrap(), 0.5);
    }

    #[test]
    fn unknown_key_names_its_line() {
        let text = ONE.replace("deferral.samples", "deferral.sample");
        let err = parse_profiles(&text).unwrap_err();
        assert!(matches!(err, ProfileFileError::Syntax { line: 9, .. }), "{err}");
    }

    #[test]
    fn decreasing_latency_is_an_invariant_error() {
        let text = ONE.replace("{1: 0.1, 2: 0.15}", "{1: 0.1, 2: 0.05}");
        let err = parse_profiles(&text).unwrap_err();
        assert!(matches!(err, ProfileFileError::Invalid { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_and_duplicate_keys() {
        let text = ONE.replace("slo_seconds = 5\n", "");
        assert!(matches!(
            parse_profiles(&text).unwrap_err(),
            ProfileFileError::Missing { key: "slo_seconds", .. }
        ));
        let text = ONE.replace("name = c1\n", "name = c1\nname = c2\n");
        assert!(matches!(parse_profiles(&text).unwrap_err(), ProfileFileError::Syntax { line: 4, .. }));
        assert!(parse_profiles("name = x").is_err());
    }

    #[test]
    fn render_round_trips() {
        let cat: Vec<_> = (1..=3).filter_map(cascadesim_core::profiles::catalog::cascade).collect();
        assert_eq!(parse_profiles(&render_profiles(&cat)).unwrap(), cat);
    }
}
