//! Helpers shared by the integration targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

/// Runs `lngprobe` with whitespace-separated arguments inside `dir`.
pub fn run(dir: &Path, args: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lngprobe"))
        .env_remove("RUST_LOG")
        .current_dir(dir)
        .args(args.split_whitespace())
        .output()
        .expect("spawn lngprobe")
}

pub fn ok(dir: &Path, args: &str) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "`{args}` failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the structured error body.
pub fn fails(dir: &Path, args: &str) -> (i32, Value) {
    let out = run(dir, args);
    let body = serde_json::from_slice(&out.stderr)
        .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&out.stderr).into()));
    (out.status.code().unwrap(), body)
}

pub fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

pub fn read_json(path: PathBuf) -> Value {
    json(&std::fs::read_to_string(path).unwrap())
}

pub fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn write_inputs(dir: &Path) {
    for (name, range) in [("tr", 0..60), ("va", 60..80), ("te", 80..100)] {
        let mut fwd = String::from("source_id\ttarget_id\thter\n");
        let mut rev = fwd.clone();
        for i in range {
            let h = (i * 37 % 100) as f64 / 100.0;
            fwd += &format!("en-{i}\tde-{i}\t{h}\n");
            rev += &format!("de-{i}\ten-{i}\t{h}\n");
        }
        std::fs::write(dir.join(format!("{name}.tsv")), fwd).unwrap();
        std::fs::write(dir.join(format!("{name}-rev.tsv")), rev).unwrap();
    }
    let gold: String = (0..20).map(|_| "0-0 1-1 2?2\n").collect();
    std::fs::write(dir.join("gold.txt"), gold).unwrap();
}

/// Runs every subcommand at least once and returns what each printed.
pub fn full_session(dir: &Path) -> Vec<String> {
    write_inputs(dir);
    let mut stdout = Vec::new();
    let mut go = |args: &str| stdout.push(ok(dir, args));
    go("synth --languages 4 --sentences 100 --seed 11 -o syn");
    go("synth --languages 2 --sentences 20 --tokens 3 --noise 0.5 --seed 4 -o tok");
    for l in ["en", "de", "fr", "cs"] {
        go(&format!("pool --input syn/{l}.memb -o {l}.vec"));
        go(&format!("centroids --input {l}.vec -o {l}.cent"));
        go(&format!(
            "center --input {l}.vec --centroids {l}.cent -o {l}.cvec"
        ));
    }
    go("centroids --input en.vec --input de.vec --input fr.vec --input cs.vec -o all.cent");
    for l in ["de", "fr", "cs"] {
        go(&format!(
            "fit-projection --source {l}.vec --target en.vec -o {l}.proj"
        ));
    }
    go(
        "retrieve --input en.vec --input de.vec --input fr.vec --input cs.vec \
        --modes plain,centered,projected --centroids all.cent \
        --projection de.proj --projection fr.proj --projection cs.proj -o retrieve.json",
    );
    go(
        "retrieve --input en.vec --input de.vec --modes plain,centered --estimate-centroids \
        --format tsv",
    );
    go(
        "align --source tok/en.memb --target tok/de.memb --em-rounds 3 --gold gold.txt \
        --eval-output align-eval.tsv --format tsv -o links.txt",
    );
    go("align --source tok/en.memb --target tok/de.memb --center --weight 0.1");
    go("align-eval --pred links.txt --gold gold.txt");
    go(
        "tune-distortion --source tok/en.memb --target tok/de.memb --gold gold.txt \
        --grid 0,0.1,0.5",
    );
    go(
        "langid-train --train en.vec --train de.vec --train fr.vec --train cs.vec \
        --valid en.vec --valid de.vec --valid fr.vec --valid cs.vec --seed 9 -o langid.model",
    );
    go("langid-eval --model langid.model --input cs.vec --input en.vec --format tsv");
    go("cluster --centroids all.cent --seed 2 -o clusters");
    go("qe --source en.vec --target de.vec --test te.tsv");
    go(
        "qe --source en.vec --target de.vec --test te.tsv --variant centered \
        --centroids all.cent",
    );
    go(
        "qe --source de.vec --target en.vec --test te-rev.tsv --variant projected \
        --projection de.proj",
    );
    go(
        "qe --source en.vec --target de.vec --test te.tsv --variant regression --train tr.tsv \
        --valid va.tsv --max-epochs 15 --seed 3 --save-model qe.model --format tsv",
    );
    stdout
}
