//! Golden fixtures: each entry reruns one CLI command on checked-in inputs
//! and compares the result with a checked-in expected file.
//!
//! `manifest.json` in the fixture directory lists the entries. In `args` and
//! `output`, `{dir}` expands to the fixture directory and `{tmp}` to a fresh
//! scratch directory; `{out}` is shorthand for `{tmp}/out`, which is also the
//! default `output`. A tolerance of 0 means byte equality, otherwise numbers
//! may differ by up to the tolerance and all other text must match.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenFixture {
    pub name: String,
    pub args: Vec<String>,
    #[serde(default)]
    pub output: Option<String>,
    pub expected: String,
    #[serde(default)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureManifest {
    pub fixtures: Vec<GoldenFixture>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureResult {
    pub name: String,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FixtureReport {
    pub results: Vec<FixtureResult>,
}

impl FixtureReport {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.failure.is_some()).count()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            match &r.failure {
                None => out.push_str(&format!("PASS {}\n", r.name)),
                Some(why) => out.push_str(&format!("FAIL {}: {}\n", r.name, why)),
            }
        }
        out
    }
}

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?").expect("valid regex"));

/// `None` when `actual` matches `expected` under `tolerance`, else a reason.
pub fn compare(expected: &str, actual: &str, tolerance: f64) -> Option<String> {
    if tolerance == 0.0 {
        return (expected != actual).then(|| first_difference(expected, actual));
    }
    let split = |s: &str| -> (Vec<String>, Vec<f64>) {
        let text = NUMBER.split(s).map(str::to_owned).collect();
        let nums = NUMBER.find_iter(s).map(|m| m.as_str().parse().unwrap_or(f64::NAN)).collect();
        (text, nums)
    };
    let (et, en) = split(expected);
    let (at, an) = split(actual);
    if et != at || en.len() != an.len() {
        return Some("non-numeric content differs".into());
    }
    en.iter()
        .zip(&an)
        .find(|(e, a)| !((*e - *a).abs() <= tolerance))
        .map(|(e, a)| format!("{a} differs from expected {e} by more than {tolerance}"))
}

fn first_difference(expected: &str, actual: &str) -> String {
    let line = expected
        .lines()
        .zip(actual.lines())
        .position(|(e, a)| e != a)
        .unwrap_or_else(|| expected.lines().count().min(actual.lines().count()));
    format!("output differs from expected at line {}", line + 1)
}

fn expand(s: &str, dir: &Path, tmp: &Path) -> String {
    s.replace("{out}", "{tmp}/out")
        .replace("{dir}", &dir.display().to_string())
        .replace("{tmp}", &tmp.display().to_string())
}

fn check_inputs(f: &GoldenFixture, dir: &Path) -> Result<()> {
    for arg in &f.args {
        if let Some(rel) = arg.strip_prefix("{dir}/") {
            let p = dir.join(rel);
            if !p.exists() {
                return Err(Error::MissingFixture(p));
            }
        }
    }
    let expected = dir.join(&f.expected);
    if !expected.is_file() {
        return Err(Error::MissingFixture(expected));
    }
    Ok(())
}

fn run_fixture(f: &GoldenFixture, dir: &Path) -> Result<Option<String>> {
    let tmp = tempfile::tempdir()?;
    let mut args = vec!["visualness".to_string()];
    args.extend(f.args.iter().map(|a| expand(a, dir, tmp.path())));
    if let Err(e) = crate::cli::run_args(&args) {
        return Ok(Some(format!("command failed: {e}")));
    }
    let output = PathBuf::from(expand(f.output.as_deref().unwrap_or("{out}"), dir, tmp.path()));
    let actual = match fs::read_to_string(&output) {
        Ok(s) => s,
        Err(e) => return Ok(Some(format!("no output at {}: {e}", output.display()))),
    };
    let expected = fs::read_to_string(dir.join(&f.expected))?;
    Ok(compare(&expected, &actual, f.tolerance))
}

/// Reruns every fixture listed in `dir/manifest.json`.
pub fn verify_fixtures(dir: &Path) -> Result<FixtureReport> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingFixture(manifest_path));
    }
    let manifest: FixtureManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let dir = dir.canonicalize()?;
    let mut report = FixtureReport::default();
    for f in &manifest.fixtures {
        check_inputs(f, &dir)?;
        report.results.push(FixtureResult {
            name: f.name.clone(),
            failure: run_fixture(f, &dir)?,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_and_tolerant_comparison() {
        assert_eq!(compare("a 1\n", "a 1\n", 0.0), None);
        assert!(compare("a 1\n", "a 1.0\n", 0.0).is_some());
        assert_eq!(compare("{\"x\":0.5000001}", "{\"x\":0.5}", 1e-6), None);
        assert!(compare("{\"x\":0.51}", "{\"x\":0.5}", 1e-6).is_some());
        assert!(compare("{\"x\":0.5}", "{\"y\":0.5}", 1e-6).is_some());
        assert!(compare("1 2", "1", 1.0).is_some());
        assert_eq!(compare("-1.5e-3", "-1.5e-3", 1e-12), None);
    }

    #[test]
    fn placeholders() {
        let s = expand("{dir}/a.jsonl {out}", Path::new("/f"), Path::new("/t"));
        assert_eq!(s, "/f/a.jsonl /t/out");
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(verify_fixtures(dir.path()), Err(Error::MissingFixture(_))));
    }
}
