//! Scratch calibration runs (not part of the deliverable test surface).

use bft_core::data::synthetic::{gen_eval, gen_synthetic, SyntheticTaskSpec, TaskKind, TASK_PAD, TASK_SEP};
use bft_core::eval::evaluate;
use bft_core::model::{Model, ModelConfig};
use bft_core::objectives::{ObjectiveConfig, ObjectiveKind};
use bft_core::trainer::{train, AdamState, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("copy");
    match mode {
        "copy" => copy_sweep(),
        "rare" => rare_sweep(&args[2..]),
        "trace" => trace_run(&args[2..]),
        _ => copy_sweep(),
    }
}

fn parse<T: std::str::FromStr>(args: &[String], key: &str, default: T) -> T {
    args.iter()
        .position(|a| a == key)
        .and_then(|i| args.get(i + 1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn trace_run(args: &[String]) {
    let steps: u64 = parse(args, "--steps", 4000);
    let warmup: u64 = parse(args, "--warmup", 300);
    let lr: f64 = parse(args, "--lr", 3e-3);
    let noise: f64 = parse(args, "--noise", 0.5);
    let vocab: usize = parse(args, "--vocab", 21);
    let kind_s: String = parse(args, "--kind", "dft".to_string());
    let key_len: usize = parse(args, "--klen", 2);
    let val_len: usize = parse(args, "--vlen", 3);
    let n_train: usize = parse(args, "--n", 480);
    let (kind, token_w, sample_w) = match kind_s.as_str() {
        "sft" => (ObjectiveKind::Sft, true, true),
        "bft" => (ObjectiveKind::Bft, true, true),
        "dft" => (ObjectiveKind::Bft, true, false),
        _ => (ObjectiveKind::Bft, false, true),
    };
    let spec = SyntheticTaskSpec {
        kind: TaskKind::RareKeyRecall,
        vocab_size: vocab,
        min_len: key_len,
        max_len: val_len,
        hard_fraction: 0.2,
        noise_fraction: noise,
        seed: 1000,
    };
    let train_data: Vec<_> = gen_synthetic(&spec, n_train)
        .unwrap()
        .iter()
        .map(|x| x.to_encoded())
        .collect();
    let mut model = Model::init(ModelConfig {
        vocab_size: vocab,
        context_length: 16,
        embed_dim: 48,
        layer_count: 2,
        head_count: 4,
        seed: 2000,
    })
    .unwrap();
    let cfg = TrainConfig {
        objective: ObjectiveConfig {
            kind,
            window_g: 3,
            token_weighting: token_w,
            sample_weighting: sample_w,
            ..ObjectiveConfig::default()
        },
        learning_rate: lr,
        batch_size: 16,
        total_steps: steps,
        warmup_steps: warmup,
        seed: 3000,
        ..TrainConfig::default()
    };
    let eval_samples = gen_eval(&spec, n_train).unwrap();
    let mut state = AdamState::new(&model.params);
    let mut trace: Vec<(u64, f64, f64, f64)> = Vec::new();
    train(&mut model, &train_data, TASK_PAD, &cfg, &mut state, 0, |r, m, _| {
        if (r.step + 1) % 400 == 0 || r.step == 0 {
            let summary = evaluate(m, &eval_samples, TASK_PAD, TASK_SEP, 16).unwrap();
            trace.push((r.step + 1, r.mean_token_confidence, summary.easy_accuracy.unwrap(), summary.hard_accuracy.unwrap()));
            println!(
                "  step {:>5} loss={:.4} conf={:.4} gnorm={:.3} easy={:.3} hard={:.3}",
                r.step + 1, r.loss, r.mean_token_confidence, r.grad_norm,
                summary.easy_accuracy.unwrap(), summary.hard_accuracy.unwrap()
            );
        }
        Ok(())
    })
    .unwrap();
}

fn rare_sweep(args: &[String]) {
    let seeds: u64 = parse(args, "--seeds", 5);
    let steps: u64 = parse(args, "--steps", 800);
    let warmup: u64 = parse(args, "--warmup", 30);
    let warm_steps: u64 = parse(args, "--warm-steps", 0);
    let warm_lr: f64 = parse(args, "--warm-lr", 2e-3);
    let lr: f64 = parse(args, "--lr", 2e-3);
    let noise: f64 = parse(args, "--noise", 0.25);
    let n_train: usize = parse(args, "--n", 480);
    let batch: usize = parse(args, "--batch", 16);
    let window: usize = parse(args, "--window", 3);
    let embed: usize = parse(args, "--embed", 48);
    let vocab: usize = parse(args, "--vocab", 39);
    let wd: f64 = parse(args, "--wd", 0.0);
    println!("rare-key: seeds={seeds} steps={steps} warm={warm_steps}@{warm_lr} warmup={warmup} lr={lr} wd={wd} noise={noise} n={n_train} B={batch} g={window} d={embed} V={vocab}");

    let mut table: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new(); // name, hard accs, easy accs
    for (name, kind, token_w, sample_w) in [
        ("sft", ObjectiveKind::Sft, true, true),
        ("bft-wo-sample", ObjectiveKind::Bft, true, false),
        ("bft", ObjectiveKind::Bft, true, true),
        ("bft-wo-token", ObjectiveKind::Bft, false, true),
    ] {
        let mut hard_accs = Vec::new();
        let mut easy_accs = Vec::new();
        for s in 0..seeds {
            let spec = SyntheticTaskSpec {
                kind: TaskKind::RareKeyRecall,
                vocab_size: vocab,
                min_len: 2,
                max_len: 3,
                hard_fraction: 0.2,
                noise_fraction: noise,
                seed: 1000 + s,
            };
            let train_data: Vec<_> = gen_synthetic(&spec, n_train)
                .unwrap()
                .iter()
                .map(|x| x.to_encoded())
                .collect();
            let mut model = Model::init(ModelConfig {
                vocab_size: vocab,
                context_length: 16,
                embed_dim: embed,
                layer_count: 2,
                head_count: 4,
                seed: 2000 + s,
            })
            .unwrap();
            let cfg = TrainConfig {
                objective: ObjectiveConfig {
                    kind,
                    window_g: window,
                    token_weighting: token_w,
                    sample_weighting: sample_w,
                    ..ObjectiveConfig::default()
                },
                learning_rate: lr,
                weight_decay: wd,
                batch_size: batch,
                total_steps: steps,
                warmup_steps: warmup,
                seed: 3000 + s,
                ..TrainConfig::default()
            };
            if warm_steps > 0 {
                let warm_cfg = TrainConfig {
                    objective: ObjectiveConfig::new(ObjectiveKind::Sft),
                    learning_rate: warm_lr,
                    weight_decay: wd,
                    batch_size: batch,
                    total_steps: warm_steps,
                    warmup_steps: 30,
                    seed: 4000 + s,
                    ..TrainConfig::default()
                };
                let mut warm_state = AdamState::new(&model.params);
                train(&mut model, &train_data, TASK_PAD, &warm_cfg, &mut warm_state, 0, |_, _, _| Ok(())).unwrap();
            }
            let mut state = AdamState::new(&model.params);
            train(&mut model, &train_data, TASK_PAD, &cfg, &mut state, 0, |_, _, _| Ok(())).unwrap();
            let eval_samples = gen_eval(&spec, n_train).unwrap();
            let summary = evaluate(&model, &eval_samples, TASK_PAD, TASK_SEP, 16).unwrap();
            hard_accs.push(summary.hard_accuracy.unwrap());
            easy_accs.push(summary.easy_accuracy.unwrap());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "  {name:<14} hard={:.4} {:?} easy={:.4}",
            mean(&hard_accs),
            hard_accs.iter().map(|a| (a * 100.0).round() / 100.0).collect::<Vec<_>>(),
            mean(&easy_accs)
        );
        table.push((name.to_string(), hard_accs, easy_accs));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let get = |n: &str| table.iter().find(|(name, _, _)| name == n).map(|(_, h, _)| mean(h)).unwrap();
    println!(
        "  ordering: bft {:.4} >= bft-wo-sample {:.4} >= sft {:.4} : {}",
        get("bft"),
        get("bft-wo-sample"),
        get("sft"),
        get("bft") >= get("bft-wo-sample") && get("bft-wo-sample") >= get("sft") && get("bft") > get("sft")
    );
}

fn copy_sweep() {
    let spec = SyntheticTaskSpec {
        kind: TaskKind::Copy,
        vocab_size: 32,
        min_len: 3,
        max_len: 8,
        hard_fraction: 0.0,
        noise_fraction: 0.0,
        seed: 101,
    };
    for (n_train, batch, lr, steps, warmup, wd) in [
        (1024usize, 8usize, 2e-3, 2000u64, 50u64, 0.01),
        (1024, 8, 2e-3, 2000, 100, 0.01),
        (1024, 8, 2e-3, 2000, 20, 0.0),
        (1536, 12, 2e-3, 2000, 50, 0.01),
    ] {
        let train_data: Vec<_> = gen_synthetic(&spec, n_train)
            .unwrap()
            .iter()
            .map(|s| s.to_encoded())
            .collect();
        let mut model = Model::init(ModelConfig {
            vocab_size: 32,
            context_length: 24,
            embed_dim: 64,
            layer_count: 2,
            head_count: 4,
            seed: 55,
        })
        .unwrap();
        let cfg = TrainConfig {
            objective: ObjectiveConfig::new(ObjectiveKind::Sft),
            learning_rate: lr,
            batch_size: batch,
            total_steps: steps,
            warmup_steps: warmup,
            weight_decay: wd,
            seed: 23,
            ..TrainConfig::default()
        };
        let started = std::time::Instant::now();
        let mut state = AdamState::new(&model.params);
        let mut last_loss = 0.0;
        train(&mut model, &train_data, TASK_PAD, &cfg, &mut state, 0, |r, _, _| {
            last_loss = r.loss;
            Ok(())
        })
        .unwrap();
        let eval_samples = gen_eval(&spec, 256).unwrap();
        let summary = evaluate(&model, &eval_samples, TASK_PAD, TASK_SEP, 16).unwrap();
        println!(
            "n={n_train} B={batch} lr={lr} steps={steps} warm={warmup} wd={wd}: acc={:.4} loss={last_loss:.4} held_out={:.4} wall={:.1}s",
            summary.accuracy,
            summary.held_out_loss,
            started.elapsed().as_secs_f64()
        );
    }
}
