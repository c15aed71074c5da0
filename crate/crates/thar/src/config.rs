//! Config files, config echoes and run directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// Name of the echo file written into every run directory.
pub const ECHO_FILE: &str = "config.toml";

/// Effective settings of one invocation: every flag, defaults included.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConfigEcho {
    pub command: String,
    pub args: BTreeMap<String, toml::Value>,
}

impl ConfigEcho {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("echo serializes")
    }

    /// First 8 bytes of the SHA-256 of the echo, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `<YYYYmmdd-HHMMSS>-<hash>`, local time.
pub fn run_dir_name(echo: &ConfigEcho) -> String {
    format!(
        "{}-{}",
        chrono::Local::now().format("%Y%m%d-%H%M%S"),
        echo.hash()
    )
}

/// Creates the run directory: `out` when given, else a fresh `runs_root/<timestamp>-<hash>`.
pub fn create_run_dir(
    out: Option<&Path>,
    runs_root: &Path,
    echo: &ConfigEcho,
) -> std::io::Result<PathBuf> {
    let dir = match out {
        Some(o) => {
            fs::create_dir_all(o)?;
            o.to_path_buf()
        }
        None => {
            fs::create_dir_all(runs_root)?;
            let base = run_dir_name(echo);
            let mut n = 1;
            loop {
                let name = if n == 1 {
                    base.clone()
                } else {
                    format!("{base}-{n}")
                };
                let candidate = runs_root.join(name);
                match fs::create_dir(&candidate) {
                    Ok(()) => break candidate,
                    Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                    Err(e) => return Err(e),
                }
            }
        }
    };
    fs::write(dir.join(ECHO_FILE), echo.to_toml())?;
    Ok(dir)
}

/// Flattens a config file into `(flag, values)` pairs: top-level keys first,
/// then keys of the `[command]` table, which win.
pub fn config_file_args(text: &str, command: &str) -> Result<Vec<(String, Vec<String>)>, String> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let mut merged: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut section = None;
    for (k, v) in &table {
        if let toml::Value::Table(t) = v {
            if k == command {
                section = Some(t);
            }
            continue;
        }
        merged.insert(k.replace('_', "-"), scalar_values(k, v)?);
    }
    if let Some(t) = section {
        for (k, v) in t {
            merged.insert(k.replace('_', "-"), scalar_values(k, v)?);
        }
    }
    Ok(merged.into_iter().collect())
}

fn scalar_values(key: &str, v: &toml::Value) -> Result<Vec<String>, String> {
    match v {
        toml::Value::String(s) => Ok(vec![s.clone()]),
        toml::Value::Integer(i) => Ok(vec![i.to_string()]),
        toml::Value::Float(f) => Ok(vec![f.to_string()]),
        toml::Value::Boolean(b) => Ok(vec![b.to_string()]),
        toml::Value::Array(items) => items
            .iter()
            .map(|i| scalar_values(key, i).map(|mut v| v.remove(0)))
            .collect(),
        _ => Err(format!(
            "config key `{key}` must be a string, number, boolean or array"
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo(seed: i64) -> ConfigEcho {
        let mut args = BTreeMap::new();
        args.insert("seed".into(), toml::Value::Integer(seed));
        ConfigEcho {
            command: "synth".into(),
            args,
        }
    }

    #[test]
    fn hash_tracks_content() {
        assert_eq!(echo(7).hash(), echo(7).hash());
        assert_ne!(echo(7).hash(), echo(8).hash());
        assert_eq!(echo(7).hash().len(), 16);
    }

    #[test]
    fn run_dirs_never_collide() {
        let root = tempfile::tempdir().unwrap();
        let a = create_run_dir(None, root.path(), &echo(1)).unwrap();
        let b = create_run_dir(None, root.path(), &echo(1)).unwrap();
        assert_ne!(a, b);
        assert!(a.join(ECHO_FILE).is_file());
        assert!(a
            .file_name()
            .unwrap()
            .to_str()
            .unwrap()
            .ends_with(&echo(1).hash()));
    }

    #[test]
    fn section_keys_override_top_level() {
        let args = config_file_args(
            "seed = 3\nepochs = 2\n[train]\nepochs = 4\n[sweep]\njobs = 1\n",
            "train",
        )
        .unwrap();
        assert_eq!(
            args,
            vec![
                ("epochs".into(), vec!["4".into()]),
                ("seed".into(), vec!["3".into()])
            ]
        );
        let args = config_file_args("groups = [\"g17\", \"g23\"]\n", "sweep").unwrap();
        assert_eq!(args[0].1, vec!["g17".to_string(), "g23".to_string()]);
    }
}
