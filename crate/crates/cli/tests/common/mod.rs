#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hdmf_core::synthetic::{planted_assignments, PlantedConfig};

pub fn hdmf() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hdmf"));
    cmd.env("RUST_LOG", "warn");
    for (k, _) in std::env::vars() {
        if k.starts_with("HDMF_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes the planted 5-cluster folksonomy as `user\ttag\titem` lines.
pub fn write_planted_tsv(path: &Path, seed: u64) {
    let body: String = planted_assignments(&PlantedConfig::default(), seed)
        .iter()
        .map(|a| format!("{}\t{}\t{}\n", a.user, a.tag, a.item))
        .collect();
    fs::write(path, body).unwrap();
}

/// Parses `key = value` report lines.
pub fn read_report(path: &Path) -> BTreeMap<String, f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_owned(), v.parse().unwrap()))
        .collect()
}

/// `train_loss` of every epoch record in a JSONL training log.
pub fn logged_losses(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"epoch\""))
        .map(|l| {
            let start = l.find("\"train_loss\":").unwrap() + "\"train_loss\":".len();
            l[start..].split(',').next().unwrap().to_owned()
        })
        .collect()
}
