//! Flat INI-style configuration files.
//!
//! ```text
//! # comment
//! seed = 7            ; top-level keys apply to every command that has the flag
//! [fit]
//! method = wsb-st     ; section keys apply to that command only
//! trees = 50
//! ```
//!
//! Keys are long flag names. `true`/`false` toggle switches. Values from the
//! file are placed before the command-line arguments, so flags win.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    /// Section name (empty for top level) to ordered `(key, value)` pairs.
    pub sections: BTreeMap<String, Vec<(String, String)>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let line_no = i as u64 + 1;
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: "unterminated section header".into(),
                })?;
                current = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let key = k.trim().replace('_', "-");
            if key.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            sections
                .entry(current.clone())
                .or_default()
                .push((key, v.trim().to_string()));
        }
        Ok(ConfigFile { sections })
    }

    /// Arguments for `command`: top-level keys the command accepts (as told
    /// by `accepts`), then every key of the command's own section.
    pub fn args_for(&self, command: &str, accepts: impl Fn(&str) -> bool) -> Vec<String> {
        let mut out = Vec::new();
        let global = self.sections.get("").into_iter().flatten().filter(|(k, _)| accepts(k));
        let own = self.sections.get(command).into_iter().flatten();
        for (k, v) in global.chain(own) {
            match v.as_str() {
                "true" => out.push(format!("--{k}")),
                "false" => {}
                _ => {
                    out.push(format!("--{k}"));
                    out.push(v.clone());
                }
            }
        }
        out
    }
}

fn strip_comment(line: &str) -> &str {
    let cut = line.find(['#', ';']).unwrap_or(line.len());
    &line[..cut]
}
