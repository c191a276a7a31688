//! `key=value` run configuration files.
//!
//! Every key names a long flag of the selected subcommand (or a global
//! flag), with `_` and `-` interchangeable. Entries are appended after the
//! command line, so they override flags given there.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key=value, got {line:?}", n + 1);
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            bail!("line {}: empty key", n + 1);
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("{}: cannot read config", path.display()))?;
    parse(&text).with_context(|| format!("{}", path.display()))
}

fn knows(cmd: &Command, key: &str) -> bool {
    cmd.get_arguments().any(|a| a.get_long() == Some(key))
}

/// Command-line arguments with the config entries appended as flags.
pub fn inject(root: &Command, sub: &str, args: &[OsString], entries: &[(String, String)]) -> Result<Vec<OsString>> {
    let subcmd = root.find_subcommand(sub).with_context(|| format!("unknown subcommand {sub}"))?;
    let mut out = args.to_vec();
    for (k, v) in entries {
        if k == "config" {
            bail!("config files cannot include other config files");
        }
        if !knows(subcmd, k) && !knows(root, k) {
            bail!("config key {k:?} is not a flag of {sub}");
        }
        out.push(format!("--{k}={v}").into());
    }
    Ok(out)
}
