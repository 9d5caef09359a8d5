//! Flat `section.key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored; a `#` after a value
//! starts a comment. Keys must carry a section (`grid.h`, not `h`) and may
//! appear once.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::halfspace_sim::{SeedConfig, SimGrid};
use crate::profiles::BubbleSpec;

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    column: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

fn parse_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::ConfigParseError {
        line,
        column,
        message: message.into(),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let eq = content
                .find('=')
                .ok_or_else(|| parse_error(line, content.len() + 1, "expected `section.key = value`"))?;
            let key = content[..eq].trim();
            let key_col = content.find(|c: char| !c.is_whitespace()).unwrap_or(0) + 1;
            let well_formed = key.split('.').count() >= 2
                && key
                    .split('.')
                    .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            if !well_formed {
                return Err(parse_error(line, key_col, format!("malformed key `{key}`, expected `section.key`")));
            }
            let value = content[eq + 1..].trim();
            let val_col = eq + 2 + (content[eq + 1..].len() - content[eq + 1..].trim_start().len());
            if value.is_empty() {
                return Err(parse_error(line, val_col, format!("key `{key}` has no value")));
            }
            let entry = Entry {
                value: value.to_string(),
                line,
                column: val_col,
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(parse_error(line, key_col, format!("key `{key}` already set on line {}", prev.line)));
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Keys under `section.`, in sorted order.
    pub fn keys_in(&self, section: &str) -> Vec<&str> {
        let prefix = format!("{section}.");
        self.entries
            .keys()
            .filter(|k| k.starts_with(&prefix))
            .map(|k| k.as_str())
            .collect()
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    /// Parsed value, or `None` when the key is absent.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| parse_error(e.line, e.column, format!("cannot parse `{}` for key `{key}`", e.value))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Parsed value of a key that must be present.
    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| parse_error(0, 0, format!("missing required key `{key}`")))
    }

    fn bubble(&self, key: &str) -> Result<BubbleSpec> {
        let e = &self.entries[key];
        let bad = || {
            parse_error(
                e.line,
                e.column,
                format!("`{key}` must be `boundary <lambda> <xi1>` or `interior <lambda> <omega> <xi1> <xi2>`"),
            )
        };
        let parts: Vec<&str> = e.value.split_whitespace().collect();
        let nums: Vec<f64> = parts[1..].iter().map(|p| p.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let spec = match (parts[0], nums.as_slice()) {
            ("boundary", [l, x]) => BubbleSpec::boundary(*l, *x),
            ("interior", [l, w, x1, x2]) => BubbleSpec::interior(*l, *w, [*x1, *x2]),
            _ => return Err(bad()),
        };
        spec.validate().map_err(|err| parse_error(e.line, e.column, err.to_string()))?;
        Ok(spec)
    }
}

/// Everything `simulate` needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub seed: SeedConfig,
    pub dt: f64,
    pub steps: usize,
    pub fit_every: usize,
    /// Write a field snapshot every this many steps (0: none).
    pub snapshot_every: usize,
}

impl SimulateConfig {
    /// Reads the `grid`, `time`, `fluid`, `seed`, `bubble` and `output`
    /// sections. Required: `grid.h`, `time.steps`, one boundary and one
    /// interior bubble (`bubble.<name> = boundary ...` / `interior ...`).
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let h: f64 = cfg.require("grid.h")?;
        let l = cfg.get_or("grid.l", 1.0)?;
        let grid = SimGrid::with_spacing(h, l).map_err(|e| parse_error(0, 0, format!("grid.h: {e}")))?;
        let mut boundary = None;
        let mut interior = None;
        for key in cfg.keys_in("bubble") {
            let spec = cfg.bubble(key)?;
            let slot = match spec.kind {
                crate::profiles::BubbleKind::Boundary => &mut boundary,
                _ => &mut interior,
            };
            if slot.replace(spec).is_some() {
                return Err(parse_error(0, 0, format!("`{key}`: the run seeds one boundary and one interior bubble")));
            }
        }
        let boundary = boundary.ok_or_else(|| parse_error(0, 0, "missing a `bubble.<name> = boundary ...` entry"))?;
        let interior = interior.ok_or_else(|| parse_error(0, 0, "missing a `bubble.<name> = interior ...` entry"))?;
        let seed = SeedConfig {
            grid,
            ring: cfg.get_or("grid.ring", 4)?,
            eps0: cfg.get_or("fluid.eps0", 0.1)?,
            t_final: cfg.get_or("time.T", 0.2)?,
            a_star: cfg.get_or("seed.a_star", -1.0)?,
            boundary,
            interior,
            outer_radius: cfg.get_or("seed.outer_radius", 0.5)?,
            with_phi0: cfg.get_or("seed.phi0", true)?,
        };
        Ok(SimulateConfig {
            seed,
            dt: cfg.get_or("time.dt", h * h / 8.0)?,
            steps: cfg.require("time.steps")?,
            fit_every: cfg.get_or("output.fit_every", 25)?,
            snapshot_every: cfg.get_or("output.snapshot_every", 0)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two-bubble run
grid.h = 0.015625
time.steps = 10   # short
bubble.b = boundary 0.15 -0.3
bubble.i = interior 0.12 0 0.35 0.4
";

    #[test]
    fn parses_sample() {
        let c = Config::parse(SAMPLE).unwrap();
        let s = SimulateConfig::from_config(&c).unwrap();
        assert_eq!(s.steps, 10);
        assert_eq!(s.seed.grid.n, 128);
        assert_eq!(s.seed.boundary, BubbleSpec::boundary(0.15, -0.3));
        assert_eq!(s.dt, 0.015625f64.powi(2) / 8.0);
    }

    #[test]
    fn missing_key_is_named() {
        let c = Config::parse("time.steps = 3\n").unwrap();
        let e = SimulateConfig::from_config(&c).unwrap_err();
        assert!(matches!(&e, Error::ConfigParseError { message, .. } if message.contains("grid.h")), "{e}");
    }

    #[test]
    fn errors_carry_line_and_column() {
        let e = Config::parse("grid.h = 1\n  nokey\n").unwrap_err();
        assert!(matches!(e, Error::ConfigParseError { line: 2, column: 8, .. }), "{e:?}");
        let e = Config::parse("grid.h = 1\nh = 2\n").unwrap_err();
        assert!(matches!(e, Error::ConfigParseError { line: 2, column: 1, .. }), "{e:?}");
        let c = Config::parse("grid.h =   abc\n").unwrap();
        let e = c.get::<f64>("grid.h").unwrap_err();
        assert!(matches!(e, Error::ConfigParseError { line: 1, column: 12, .. }), "{e:?}");
        let e = Config::parse("grid.h = 1\ngrid.h = 2\n").unwrap_err();
        assert!(matches!(e, Error::ConfigParseError { line: 2, .. }), "{e:?}");
    }

    #[test]
    fn bad_bubble_is_rejected() {
        let c = Config::parse("grid.h = 0.015625\ntime.steps = 1\nbubble.x = boundary 0.1\n").unwrap();
        assert!(matches!(SimulateConfig::from_config(&c), Err(Error::ConfigParseError { line: 3, .. })));
    }
}
