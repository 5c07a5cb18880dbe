//! Flag defaults from a TOML config file or a JSON run manifest. Values are
//! spliced into argv as `--key value` for every key the command line does
//! not set, so clap performs all validation.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

const SUBCOMMANDS: [&str; 6] = ["fit", "predict", "score", "cv", "compare", "simulate"];

/// Flag values keyed by long name (kebab-case).
type Flags = BTreeMap<String, Vec<String>>;

/// Returns `argv` with config-file flags inserted after the subcommand.
/// Top-level keys that `known(subcommand)` does not list are ignored;
/// keys in a `[subcommand]` section are always passed on.
pub fn merge_config(argv: Vec<OsString>, known: impl Fn(&str) -> HashSet<String>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(path) = config_path(&strs) else {
        return Ok(argv);
    };
    let Some(sub_pos) = strs.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let flags = load(Path::new(&path), &strs[sub_pos], &known(&strs[sub_pos]))?;
    let given: HashSet<String> = strs
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut out: Vec<OsString> = argv[..=sub_pos].to_vec();
    for (key, values) in flags {
        if given.contains(&key) || key == "config" {
            continue;
        }
        out.push(format!("--{key}").into());
        out.extend(values.into_iter().map(OsString::from));
    }
    out.extend(argv[sub_pos + 1..].iter().cloned());
    Ok(out)
}

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn load(path: &Path, command: &str, known: &HashSet<String>) -> Result<Flags> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let mut flags = Flags::new();
    if is_json {
        let doc: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(c) = doc.get("command").and_then(|c| c.as_str()) {
            if c != command {
                bail!("manifest {} records command `{c}`, not `{command}`", path.display());
            }
        }
        let options = doc
            .get("options")
            .and_then(|o| o.as_object())
            .with_context(|| format!("{} has no `options` table", path.display()))?;
        for (k, v) in options {
            insert_json(&mut flags, k, v)?;
        }
    } else {
        let doc: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        for (k, v) in &doc {
            if !v.is_table() && known.contains(&flag_name(k)) {
                insert_toml(&mut flags, k, v)?;
            }
        }
        if let Some(section) = doc.get(command).and_then(|s| s.as_table()) {
            for (k, v) in section {
                insert_toml(&mut flags, k, v)?;
            }
        }
    }
    Ok(flags)
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn insert_toml(flags: &mut Flags, key: &str, v: &toml::Value) -> Result<()> {
    let scalar = |v: &toml::Value| -> Result<String> {
        Ok(match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => bail!("unsupported config value for `{key}`: {other}"),
        })
    };
    match v {
        toml::Value::Boolean(false) => {}
        toml::Value::Boolean(true) => {
            flags.insert(flag_name(key), Vec::new());
        }
        toml::Value::Array(items) => {
            if !items.is_empty() {
                let joined = items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(",");
                flags.insert(flag_name(key), vec![joined]);
            }
        }
        other => {
            flags.insert(flag_name(key), vec![scalar(other)?]);
        }
    }
    Ok(())
}

fn insert_json(flags: &mut Flags, key: &str, v: &serde_json::Value) -> Result<()> {
    use serde_json::Value;
    let scalar = |v: &Value| -> Result<String> {
        Ok(match v {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            other => bail!("unsupported manifest value for `{key}`: {other}"),
        })
    };
    match v {
        Value::Null | Value::Bool(false) => {}
        Value::Bool(true) => {
            flags.insert(flag_name(key), Vec::new());
        }
        Value::Array(items) => {
            if !items.is_empty() {
                let joined = items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(",");
                flags.insert(flag_name(key), vec![joined]);
            }
        }
        other => {
            flags.insert(flag_name(key), vec![scalar(other)?]);
        }
    }
    Ok(())
}
