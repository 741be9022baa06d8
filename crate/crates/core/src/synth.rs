//! Generated C-like functions whose label is the presence of a NULL
//! assignment that is later dereferenced.
//!
//! Negatives share the vocabulary (including `NULL` in guards) so the
//! class is decided by a token pattern rather than a single token.

use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{CodeSample, DatasetFormat, LabeledDataset, Provenance};
use crate::nn::RngState;

const TYPES: &[&str] = &["int", "char", "long", "struct node", "unsigned", "size_t"];
const POINTERS: &[&str] = &["p", "ptr", "buf", "node", "cur", "item", "dst", "head"];
const SCALARS: &[&str] = &["n", "len", "i", "count", "total", "idx"];
const FUNCS: &[&str] = &["parse", "copy", "update", "walk", "reset", "scan", "emit", "load"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty pool")
}

fn filler(rng: &mut ChaCha8Rng, s: &str) -> String {
    match rng.random_range(0..6) {
        0 => format!("{s} = {s} + {};", rng.random_range(1..9)),
        1 => format!("if ({s} > {}) {s} = 0;", rng.random_range(2..64)),
        2 => format!("total += {s};"),
        3 => format!("{s}++;"),
        4 => format!("{s} = {s} * 2;"),
        _ => format!("log_value({s});"),
    }
}

/// The vulnerable pattern: assigned NULL, then written through.
fn sentinel(rng: &mut ChaCha8Rng, p: &str) -> Vec<String> {
    match rng.random_range(0..3) {
        0 => vec![format!("{p} = NULL;"), format!("*{p} = 1;")],
        1 => vec![format!("{p} = NULL;"), format!("{p}[0] = 0;")],
        _ => vec![format!("{p} = NULL;"), format!("{p}->next = 0;")],
    }
}

/// Same shape, but the pointer is allocated and checked.
fn decoy(rng: &mut ChaCha8Rng, p: &str) -> Vec<String> {
    match rng.random_range(0..3) {
        0 => vec![format!("{p} = malloc(n);"), format!("if ({p} != NULL) *{p} = 1;")],
        1 => vec![format!("{p} = malloc(n);"), format!("if ({p} == NULL) return -1;")],
        _ => vec![format!("{p} = lookup(n);"), format!("if ({p}) {p}->next = 0;")],
    }
}

/// One function; `vulnerable` decides whether the sentinel pattern is
/// present. The pattern sits in the first few statements so it survives
/// truncation to 64 tokens.
pub fn synthetic_function(rng: &mut ChaCha8Rng, index: usize, vulnerable: bool) -> String {
    let ty = pick(rng, TYPES);
    let p = pick(rng, POINTERS);
    let s = pick(rng, SCALARS);
    let name = format!("{}_{index}", pick(rng, FUNCS));
    let mut body = vec![format!("{ty} *{p};")];
    for _ in 0..rng.random_range(0..2) {
        body.push(filler(rng, s));
    }
    body.extend(if vulnerable { sentinel(rng, p) } else { decoy(rng, p) });
    for _ in 0..rng.random_range(0..4) {
        body.push(filler(rng, s));
    }
    body.push(format!("return {s};"));
    let mut out = format!("int {name}(int n, int {s}) {{\n");
    for stmt in body {
        out.push_str("    ");
        out.push_str(&stmt);
        out.push('\n');
    }
    out.push_str("}\n");
    out
}

/// `n` functions with alternating labels (exactly balanced for even `n`).
pub fn synthetic_corpus(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = RngState::new(seed);
    let samples = (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            CodeSample {
                id: format!("syn-{i}"),
                source: synthetic_function(rng.rng(), i, label == 1),
                label,
            }
        })
        .collect();
    LabeledDataset::new(
        samples,
        Provenance {
            path: PathBuf::from(format!("synthetic:{n}:{seed}")),
            cwe: "CWE-476".into(),
            format: DatasetFormat::Csv,
            skipped_empty: 0,
        },
    )
    .expect("generated samples are valid")
}
