//! Plain-text architecture ledger and its SHA-256 fingerprint.
//!
//! The ledger lists every layer with its kind, widths, stride, expansion and
//! hub targets. It does not mention the input resolution, so the same network
//! trained at 64x64 and evaluated at 512x512 keeps its fingerprint.

use std::fmt::Write;

use sha2::{Digest, Sha256};

use super::config::{LayerKind, LayerSpec};

pub fn ledger_text(layers: &[LayerSpec]) -> String {
    let mut s = String::new();
    for l in layers {
        write!(
            s,
            "{:>3} {:<13} {:<16} in={} out={}",
            l.id,
            l.kind.as_str(),
            l.name,
            l.channels_in,
            l.channels_out
        )
        .unwrap();
        if let (Some(mid), Some(e)) = (l.channels_mid, l.expansion) {
            write!(s, " mid={mid} expansion={e}").unwrap();
        }
        if l.kind != LayerKind::Head {
            write!(s, " kernel={} stride={}", l.kernel, l.stride).unwrap();
        }
        if !l.hub_targets.is_empty() {
            let t: Vec<String> = l.hub_targets.iter().map(|t| t.to_string()).collect();
            write!(s, " targets={}", t.join(",")).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn ledger_hash(layers: &[LayerSpec]) -> [u8; 32] {
    Sha256::digest(ledger_text(layers).as_bytes()).into()
}
