#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_sssae");

pub fn sssae(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn sssae")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Frame-table CSV with utterances of the given lengths, 39 features, two
/// speakers alternating, labels cycling through a few phones.
pub fn frame_table_csv(lengths: &[usize]) -> String {
    let phones = ["aa", "iy", "s", "sil", "n"];
    let mut out = String::from("utt,spk,idx,label");
    for d in 0..39 {
        write!(out, ",f{d}").unwrap();
    }
    out.push('\n');
    let mut k = 0usize;
    for (u, &len) in lengths.iter().enumerate() {
        for i in 0..len {
            write!(out, "u{u},s{},{i},{}", u % 2, phones[k % phones.len()]).unwrap();
            for d in 0..39 {
                let v = ((k * 31 + d * 7) % 23) as f64 / 7.0 - 1.5 + (u % 2) as f64;
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
            k += 1;
        }
    }
    out
}

/// The log with the timing column blanked.
pub fn strip_seconds(log: &str) -> String {
    log.lines()
        .map(|l| {
            if l.starts_with('#') || l.starts_with("epoch") {
                l.to_string()
            } else {
                let (head, _) = l.rsplit_once(',').unwrap();
                head.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}
