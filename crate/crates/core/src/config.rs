//! Scenario files: TOML parsing with line-numbered diagnostics, `key=value`
//! overrides and sweep grids.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::simulation::Scenario;

/// A parsed scenario file, kept as a TOML table so overrides can be layered
/// on before it is turned into a [`Scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioSource {
    table: toml::Table,
    base_dir: PathBuf,
    origin: String,
}

impl ScenarioSource {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, base, path.display().to_string())
    }

    /// Parses `text` and checks it against the scenario schema, so problems
    /// in the file itself are reported with their line number.
    pub fn from_text(text: &str, base_dir: impl Into<PathBuf>, origin: impl Into<String>) -> Result<Self> {
        let origin = origin.into();
        let located = |e: toml::de::Error, path: Option<String>| {
            let line = e.span().map(|s| line_of(text, s.start));
            let mut msg = origin.clone();
            if let Some(line) = line {
                msg.push_str(&format!(":{line}"));
            }
            if let Some(path) = path.filter(|p| p != ".") {
                msg.push_str(&format!(": `{path}`"));
            }
            Error::Config(format!("{msg}: {}", e.message().trim()))
        };
        let de = toml::de::Deserializer::parse(text).map_err(|e| located(e, None))?;
        let _: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            located(e.into_inner(), Some(path))
        })?;
        let table: toml::Table = toml::from_str(text).map_err(|e| located(e, None))?;
        Ok(Self {
            table,
            base_dir: base_dir.into(),
            origin,
        })
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    /// Resolves the scenario with `overrides` applied in order. Relative
    /// trace paths are taken relative to the scenario file.
    pub fn resolve(&self, overrides: &[(String, String)]) -> Result<Scenario> {
        let mut table = self.table.clone();
        for (key, raw) in overrides {
            set_path(&mut table, key, parse_value(raw))?;
        }
        let mut scenario: Scenario = deserialize_value(table).map_err(|e| match overrides.is_empty() {
            true => Error::Config(format!("{}: {e}", self.origin)),
            false => Error::Config(format!("{} (with overrides): {e}", self.origin)),
        })?;
        if let Some(file) = &scenario.traces.file {
            if file.is_relative() {
                scenario.traces.file = Some(self.base_dir.join(file));
            }
        }
        scenario
            .validate()
            .map_err(|e| Error::Config(format!("{}: {}", self.origin, strip_prefix(e))))?;
        Ok(scenario)
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn deserialize_value<T: DeserializeOwned>(table: toml::Table) -> std::result::Result<T, String> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        format!("`{path}`: {}", e.into_inner().message().trim())
    })
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

pub fn load_scenario(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Scenario> {
    ScenarioSource::from_path(path)?.resolve(overrides)
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::Config(format!("expected KEY=VALUE, got `{s}`"))),
    }
}

/// Reads `raw` as a TOML value, falling back to a bare string, so `0.5`,
/// `true` and `[1, 2]` keep their types while `bfd` stays text.
pub fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted `key` in `table`, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("`{key}`: `{part}` is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// One sweep dimension, from `key=v1,v2,...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_grid(spec: &str) -> Result<GridAxis> {
    let (key, rest) = parse_assignment(spec)?;
    let values: Vec<String> = rest.split(',').map(|v| v.trim().to_string()).collect();
    if values.iter().any(String::is_empty) {
        return Err(Error::Config(format!("empty value in grid `{spec}`")));
    }
    Ok(GridAxis { key, values })
}

/// Cartesian product of the axes, first axis varying slowest.
pub fn grid_points(axes: &[GridAxis]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::ControllerKind;

    #[test]
    fn overrides_keep_types() {
        let src = ScenarioSource::from_text("seed = 3\n[weights]\nmigration = 0.5\n", ".", "t.toml").unwrap();
        let s = src
            .resolve(&[
                ("controller".into(), "bfd".into()),
                ("weights.migration".into(), "0.25".into()),
                ("ga.generations".into(), "7".into()),
            ])
            .unwrap();
        assert_eq!(s.seed, 3);
        assert_eq!(s.controller, ControllerKind::Bfd);
        assert_eq!(s.weights.migration, 0.25);
        assert_eq!(s.ga.generations, 7);
    }

    #[test]
    fn schema_errors_carry_line_and_key() {
        let text = "seed = 1\n\n[weights]\nmigraton = 0.5\n";
        let err = ScenarioSource::from_text(text, ".", "bad.toml")
            .unwrap_err()
            .to_string();
        assert!(err.contains("bad.toml:4"), "{err}");
        assert!(err.contains("migraton"), "{err}");

        let text = "seed = 1\n[ga]\npopulation_size = \"many\"\n";
        let err = ScenarioSource::from_text(text, ".", "bad.toml")
            .unwrap_err()
            .to_string();
        assert!(err.contains(":3"), "{err}");
        assert!(err.contains("ga.population_size"), "{err}");

        let src = ScenarioSource::from_text("", ".", "ok.toml").unwrap();
        let err = src
            .resolve(&[("weights.bogus".into(), "1".into())])
            .unwrap_err()
            .to_string();
        assert!(err.contains("weights"), "{err}");
    }

    #[test]
    fn grid_expansion() {
        let a = parse_grid("weights.migration=0,0.5,1").unwrap();
        assert_eq!(grid_points(std::slice::from_ref(&a)).len(), 3);
        let b = parse_grid("seed=1,2").unwrap();
        let c = parse_grid("controller=ga,bfd").unwrap();
        let pts = grid_points(&[b, c]);
        assert_eq!(pts.len(), 4);
        assert_eq!(
            pts[1],
            vec![("seed".into(), "1".into()), ("controller".into(), "bfd".into())]
        );
        assert!(parse_grid("seed=").is_err());
        assert!(parse_grid("=1").is_err());
    }

    #[test]
    fn relative_trace_path_is_resolved() {
        let src = ScenarioSource::from_text("[traces]\nfile = \"t.csv\"\n", "/data", "s.toml").unwrap();
        let s = src.resolve(&[]).unwrap();
        assert_eq!(s.traces.file, Some(PathBuf::from("/data/t.csv")));
    }
}
