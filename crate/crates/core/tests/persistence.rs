//! Checkpoint integrity and end-to-end determinism of the command-line tool.

use std::fs;
use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use textgroup::checkpoint::{from_bytes, to_bytes};
use textgroup::config::RunConfig;
use textgroup::model::{EncoderConfig, TextGroupModel};
use textgroup::world::Vocab;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_textgroup"));
    c.env("TG_LOG_LEVEL", "error");
    c
}

fn run(args: &[&str]) -> i32 {
    let out = bin().args(args).output().expect("binary runs");
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) {
    let out = bin().args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Small but complete run configuration; every field not listed takes its
/// default.
fn small_config(dir: &Path, extra: Value) -> String {
    let mut c = json!({
        "encoder": {"model_dim": 16, "n_heads": 2, "n_pre_layers": 1, "n_post_layers": 1,
                    "projection_dim": 8, "image_dim": 16},
        "world": {"image_dim": 16},
        "optimizer": {"total_epochs": 1, "warmup_epochs": 0.5},
        "batch_size": 32,
        "data": {"dir": dir.join("data"), "n_train": 64, "n_val": 7, "n_test": 40}
    });
    merge(&mut c, extra);
    let path = dir.join(format!("config-{}.json", fs::read_dir(dir).unwrap().count()));
    fs::write(&path, c.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn merge(a: &mut Value, b: Value) {
    match (a, b) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_model() -> (RunConfig, Vocab, TextGroupModel) {
    let config = RunConfig {
        encoder: EncoderConfig {
            model_dim: 16,
            n_heads: 2,
            n_pre_layers: 1,
            n_post_layers: 1,
            projection_dim: 8,
            ..EncoderConfig::default()
        },
        ..RunConfig::default()
    };
    let model = TextGroupModel::new(config.encoder.clone(), 11).unwrap();
    (config, Vocab::synthetic(), model)
}

#[test]
fn random_corruptions_are_always_rejected() {
    let (c, v, m) = tiny_model();
    let good = to_bytes(&c, &v, &m, 3, 1);
    assert!(from_bytes(&good).is_ok());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for trial in 0..100 {
        let mut bad = good.clone();
        match trial % 4 {
            // single bit flip anywhere
            0 | 1 => {
                let i = rng.random_range(0..bad.len());
                bad[i] ^= 1 << rng.random_range(0..8);
            }
            // a random byte overwritten with a different value
            2 => {
                let i = rng.random_range(0..bad.len());
                bad[i] = bad[i].wrapping_add(rng.random_range(1..=255));
            }
            // truncated
            _ => bad.truncate(rng.random_range(0..bad.len())),
        }
        assert!(from_bytes(&bad).is_err(), "corruption {trial} was accepted");
    }
}

#[test]
fn save_load_save_is_a_fixpoint_after_one_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let (c, v, m) = tiny_model();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    let hash_a = textgroup::checkpoint::save(&a, &c, &v, &m, 5, 2).unwrap();
    let (ck, loaded_hash) = textgroup::checkpoint::load(&a).unwrap();
    assert_eq!(hash_a, loaded_hash);
    for id in m.params.ids() {
        let a32: Vec<f32> = m.params.data(id).iter().map(|&x| x as f32).collect();
        let b32: Vec<f32> = ck.model.params.data(id).iter().map(|&x| x as f32).collect();
        assert_eq!(a32, b32, "{}", m.params.name(id));
    }
    let hash_b = textgroup::checkpoint::save(&b, &ck.config, &ck.vocab, &ck.model, ck.step, ck.epoch).unwrap();
    assert_eq!(hash_a, hash_b);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn datagen_is_deterministic_and_honors_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({}));
    let (one, two) = (dir.path().join("one"), dir.path().join("two"));
    ok(&["datagen", "--config", &config, "--out", s(&one)]);
    ok(&["datagen", "--config", &config, "--out", s(&two)]);
    for (split, n) in [("train", 64), ("val", 7), ("test", 40)] {
        let file = format!("{split}.jsonl");
        let a = fs::read(one.join(&file)).unwrap();
        assert_eq!(a, fs::read(two.join(&file)).unwrap(), "{file} differs between runs");
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), n, "{file}");
        for line in text.lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["schema"], "tgv1");
        }
    }
    ok(&["datagen", "--config", &config, "--seed", "9", "--out", s(&dir.path().join("three"))]);
    assert_ne!(
        fs::read(one.join("train.jsonl")).unwrap(),
        fs::read(dir.path().join("three/train.jsonl")).unwrap()
    );
}

#[test]
fn training_and_eval_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({}));
    ok(&["datagen", "--config", &config]);
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    ok(&["train", "--config", &config, "--out", s(&r1)]);
    ok(&["train", "--config", &config, "--out", s(&r2)]);

    let log1 = fs::read_to_string(r1.join("log.jsonl")).unwrap();
    assert_eq!(log1, fs::read_to_string(r2.join("log.jsonl")).unwrap());
    assert_eq!(log1.lines().count(), 1);
    let entry: Value = serde_json::from_str(log1.lines().next().unwrap()).unwrap();
    for key in ["l_i2t", "l_t2i", "l_reconstruction", "l_total"] {
        assert!(entry[key].as_f64().unwrap().is_finite(), "{key}");
    }
    for file in ["final.ckpt", "last.ckpt", "config.json"] {
        assert_eq!(fs::read(r1.join(file)).unwrap(), fs::read(r2.join(file)).unwrap(), "{file}");
    }

    let ck = r1.join("final.ckpt");
    let (e1, e2) = (dir.path().join("e1.json"), dir.path().join("e2.json"));
    ok(&["eval", "--checkpoint", s(&ck), "--out", s(&e1)]);
    ok(&["eval", "--checkpoint", s(&ck), "--out", s(&e2)]);
    let report = fs::read_to_string(&e1).unwrap();
    assert_eq!(report, fs::read_to_string(&e2).unwrap());
    let v: Value = serde_json::from_str(&report).unwrap();
    for key in [
        "tiou",
        "precision",
        "recall",
        "f1",
        "ranking_accuracy_scene",
        "ranking_accuracy_foil",
        "n_examples",
        "n_skipped",
        "config_hash",
        "checkpoint_hash",
    ] {
        assert!(v.get(key).is_some(), "report lacks {key}");
    }
    assert_eq!(v["n_examples"].as_u64().unwrap() + v["n_skipped"].as_u64().unwrap(), 40);

    // a different seed gives a different run
    let r3 = dir.path().join("r3");
    ok(&["train", "--config", &config, "--seed", "4", "--out", s(&r3)]);
    assert_ne!(log1, fs::read_to_string(r3.join("log.jsonl")).unwrap());
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();

    // configuration errors
    assert_eq!(run(&["datagen", "--config", s(&p.join("missing.json"))]), 2);
    let both_off = small_config(p, json!({"ablation": {"disable_contrastive": true, "disable_reconstruction": true}}));
    assert_eq!(run(&["train", "--config", &both_off, "--out", s(&p.join("x"))]), 2);
    let broken = p.join("broken.json");
    fs::write(&broken, "{ not json").unwrap();
    assert_eq!(run(&["train", "--config", s(&broken)]), 2);

    // data errors
    let config = small_config(p, json!({}));
    assert_eq!(run(&["train", "--config", &config, "--out", s(&p.join("y"))]), 3);
    ok(&["datagen", "--config", &config]);
    fs::write(p.join("junk.ckpt"), b"definitely not a checkpoint").unwrap();
    assert_eq!(run(&["eval", "--checkpoint", s(&p.join("junk.ckpt"))]), 3);

    // numeric abort
    let explode = small_config(p, json!({"optimizer": {"lr": 1e300, "warmup_epochs": 0.0}}));
    let out = bin()
        .args(["train", "--config", &explode, "--out", s(&p.join("z"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_rejects_a_dataset_from_another_world() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let config = small_config(p, json!({}));
    ok(&["datagen", "--config", &config]);
    ok(&["train", "--config", &config, "--out", s(&p.join("run"))]);
    let other = small_config(p, json!({"world": {"size_prob": 0.9}, "data": {"dir": p.join("other")}}));
    ok(&["datagen", "--config", &other]);
    let code = run(&["eval", "--checkpoint", s(&p.join("run/final.ckpt")), "--data", s(&p.join("other"))]);
    assert_eq!(code, 2);
}
