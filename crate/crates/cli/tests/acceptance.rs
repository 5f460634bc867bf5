//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{check_inputs, check_layer, seeded};
use nexception::arch::{
    build, build_variant, minimal_config, ActPosition, ArchConfig, ArchSpec, Bottleneck, DownsampleBlock, NexBlock,
    NormPosition, Placement, PoolKind,
};
use nexception::data::{
    load_checkpoint, load_cifar, save_checkpoint, synthetic_dataset, CifarVariant, SyntheticSpec,
};
use nexception::layers::{
    drop_path_factors, stochastic_depth, BatchNorm2d, Conv2d, ConvSpec, LayerNorm2d, Linear, MaxBlurPool, Norm,
    NormKind, SEModule, SeparableConv, Stem,
};
use nexception::nas::{
    lpi_importance, search, Budget, Objective, PlantedObjective, SearchOptions, SearchSpace, Strategy,
    TrainingObjective,
};
use nexception::train::{
    cosine_warmup_lr, cutmix, cutmix_with_box, mixup, train_epochs, CutBox, Lamb, TrainConfig, TrainOptions,
};
use nexception::{Activation, BatchNormMode, Graph, ParamKind, ParamStore, Tensor};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want) / want
}

// ---------- 1: cost table ----------

fn costs() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for (model, input, params, flops) in [
        ("nexception_t", 224, 24.5e6, 4.7e9),
        ("nexception_s", 224, 43.4e6, 8.5e9),
        ("nexception_tp", 224, 26.6e6, 4.5e9),
        ("xception", 299, 23.6e6, 8.4e9),
    ] {
        let o = Command::new(env!("CARGO_BIN_EXE_nexception"))
            .args(["summarize", model, "--input", &input.to_string(), "--json"])
            .current_dir(dir.path())
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), format!("{model}: {}", String::from_utf8_lossy(&o.stderr)))?;
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?;
        let p = v["params"].as_f64().ok_or("params missing")?;
        let f = v["flops"].as_f64().ok_or("flops missing")?;
        let (rp, rf) = (rel(p, params), rel(f, flops));
        notes.push(format!("{model} {:.2}M ({:+.1}%) {:.2}G ({:+.1}%)", p / 1e6, 100.0 * rp, f / 1e9, 100.0 * rf));
        ensure(rp.abs() <= 0.03 && rf.abs() <= 0.05, format!("{} outside ±3% params / ±5% FLOPs", notes.last().unwrap()))?;
    }
    Ok(format!("{}; {:.1}s", notes.join(", "), start.elapsed().as_secs_f64()))
}

// ---------- 2: shape ledger ----------

fn shapes() -> Outcome {
    let mut notes = Vec::new();
    for (model, side, stage, want) in [
        ("nexception_t", 224, "middle", [512, 14, 14]),
        ("nexception_s", 224, "middle", [752, 14, 14]),
        ("xception", 299, "middle", [728, 19, 19]),
    ] {
        let mut m = build_variant::<f32>(model, 0).map_err(|e| e.to_string())?;
        let trace = m.trace(&Tensor::zeros(&[1, 3, side, side])).map_err(|e| e.to_string())?;
        m.check_trace(&trace).map_err(|e| e.to_string())?;
        let got = trace.iter().find(|s| s.stage == stage).ok_or(format!("{model}: no {stage} stage"))?;
        ensure(got.shape == [1, want[0], want[1], want[2]], format!("{model} {stage}: {:?}", got.shape))?;
        notes.push(format!("{model} {}x{}x{}", want[1], want[2], want[0]));
    }
    let mut m = build_variant::<f32>("nexception_tp", 0).map_err(|e| e.to_string())?;
    let trace = m.trace(&Tensor::zeros(&[1, 3, 224, 224])).map_err(|e| e.to_string())?;
    m.check_trace(&trace).map_err(|e| e.to_string())?;
    let sides: Vec<usize> = (1..=4)
        .map(|s| {
            trace
                .iter()
                .find(|t| t.stage == format!("stage{s}"))
                .map_or(0, |t| t.shape[2])
        })
        .collect();
    ensure(sides == [56, 28, 14, 7], format!("nexception_tp stage sides {sides:?}"))?;
    notes.push("nexception_tp 56/28/14/7".into());
    Ok(notes.join(", "))
}

// ---------- 3: gradient suite ----------

fn rand64(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut seeded(seed))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut layer: Vec<(&str, f64)> = Vec::new();
    for (cin, cout, k, stride, pad, groups) in [(3, 4, 3, 1, 1, 1), (4, 4, 3, 2, 1, 4), (4, 6, 1, 1, 0, 1)] {
        let err = check_inputs(&[rand64(&[2, cin, 5, 5], 1), rand64(&[cout, cin / groups, k, k], 2), rand64(&[cout], 3)], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), stride, pad, groups)
        });
        layer.push(("conv2d", err));
    }
    let kinked = rand64(&[2, 3, 4], 4).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    for kind in Activation::ALL {
        layer.push(("activation", check_inputs(std::slice::from_ref(&kinked), |g, v| g.activation(v[0], kind))));
    }
    layer.push(("batch_norm", check_inputs(&[rand64(&[3, 2, 3, 3], 5), rand64(&[2], 6), rand64(&[2], 7)], |g, v| {
        Ok(g.batch_norm(v[0], v[1], v[2], BatchNormMode::Batch)?.0)
    })));
    layer.push(("layer_norm", check_inputs(&[rand64(&[2, 4, 3, 3], 8), rand64(&[4], 9), rand64(&[4], 10)], |g, v| {
        g.layer_norm(v[0], v[1], v[2])
    })));
    let distinct = Tensor::from_fn(&[1, 2, 5, 5], |i| ((i * 37) % 50) as f64 * 0.1);
    layer.push(("max_pool", check_inputs(&[distinct], |g, v| g.max_pool(v[0], 3, 2, 1))));
    layer.push(("global_avg_pool", check_inputs(&[rand64(&[2, 3, 4, 4], 11)], |g, v| g.global_avg_pool(v[0]))));
    let targets = Tensor::new(&[2, 3], vec![0.2, 0.5, 0.3, 1.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    layer.push(("bce", check_inputs(&[rand64(&[2, 3], 12)], |g, v| g.bce_soft_loss(v[0], &targets))));
    layer.push(("soft_ce", check_inputs(&[rand64(&[2, 3], 13)], |g, v| g.soft_cross_entropy(v[0], &targets))));

    let mut s = ParamStore::new();
    let c = Conv2d::new(&mut s, "c", ConvSpec::same(3, 4, 3, 2).with_bias(true), &mut seeded(20)).map_err(|e| e.to_string())?;
    layer.push(("Conv2d", check_layer(&mut s, &rand64(&[2, 3, 5, 5], 21), true, |f, x| c.forward(f, x))));
    let mut s = ParamStore::new();
    let sep = SeparableConv::new(&mut s, "s", 3, 4, 5, 1, true, &mut seeded(22)).map_err(|e| e.to_string())?;
    layer.push(("SeparableConv", check_layer(&mut s, &rand64(&[1, 3, 6, 6], 23), true, |f, x| sep.forward(f, x))));
    let mut s = ParamStore::new();
    let fc = Linear::new(&mut s, "fc", 5, 3, true, &mut seeded(24)).map_err(|e| e.to_string())?;
    layer.push(("Linear", check_layer(&mut s, &rand64(&[2, 5], 25), true, |f, x| fc.forward(f, x))));
    for kind in [NormKind::Batch, NormKind::Layer] {
        let mut s = ParamStore::new();
        let n = Norm::new(&mut s, "n", kind, 3).map_err(|e| e.to_string())?;
        layer.push(("Norm", check_layer(&mut s, &rand64(&[2, 3, 3, 3], 30), true, |f, x| n.forward(f, x))));
    }
    let mut s = ParamStore::new();
    let bn = BatchNorm2d::new(&mut s, "bn", 2).map_err(|e| e.to_string())?;
    layer.push(("BatchNorm2d eval", check_layer(&mut s, &rand64(&[2, 2, 3, 3], 31), false, |f, x| bn.forward(f, x))));
    let mut s = ParamStore::new();
    let ln = LayerNorm2d::new(&mut s, "ln", 4).map_err(|e| e.to_string())?;
    layer.push(("LayerNorm2d", check_layer(&mut s, &rand64(&[1, 4, 2, 2], 32), true, |f, x| ln.forward(f, x))));
    let mut s = ParamStore::new();
    let se = SEModule::new(&mut s, "se", 4, 2, &mut seeded(40)).map_err(|e| e.to_string())?;
    layer.push(("SEModule", check_layer(&mut s, &rand64(&[2, 4, 3, 3], 41), true, |f, x| se.forward(f, x))));
    let mut s = ParamStore::new();
    let mbp = MaxBlurPool::new("mbp", 2);
    let distinct = Tensor::from_fn(&[1, 2, 6, 6], |i| ((i * 29) % 72) as f64 * 0.05);
    layer.push(("MaxBlurPool", check_layer(&mut s, &distinct, true, |f, x| mbp.forward(f, x))));
    let mut s = ParamStore::new();
    let stem = Stem::patchify(&mut s, "stem", 3, 4, 2, NormKind::Batch, &mut seeded(42)).map_err(|e| e.to_string())?;
    layer.push(("patchify stem", check_layer(&mut s, &rand64(&[2, 3, 4, 4], 43), true, |f, x| stem.forward(f, x))));
    let mut s = ParamStore::new();
    let stem = Stem::conv(&mut s, "stem", 2, 3, 4, NormKind::Batch, Activation::Gelu, &mut seeded(44)).map_err(|e| e.to_string())?;
    layer.push(("conv stem", check_layer(&mut s, &rand64(&[2, 2, 6, 6], 45), true, |f, x| stem.forward(f, x))));
    let mut s = ParamStore::new();
    layer.push(("stochastic depth", check_layer(&mut s, &rand64(&[6, 2, 2, 2], 46), true, |f, x| {
        stochastic_depth(&mut f.graph, x, 0.3, true, f.rng)
    })));

    let mut block: Vec<(&str, f64)> = Vec::new();
    let mut s = ParamStore::<f64>::new();
    let b = NexBlock::new(&mut s, "b", 8, 3, 3, Placement::from_config(&ArchConfig::default()), true, &mut seeded(5))
        .map_err(|e| e.to_string())?;
    block.push(("NexBlock", check_layer(&mut s, &rand64(&[1, 8, 8, 8], 6), true, |f, v| b.forward(f, v, 0.0))));
    let mut alt = ArchConfig::default();
    alt.norm_kind = NormKind::Layer;
    alt.norm_position = NormPosition::PreBlock;
    alt.act_kind = Activation::Elu;
    alt.act_position = ActPosition::AfterAllConvs;
    let mut s = ParamStore::<f64>::new();
    let b = NexBlock::new(&mut s, "b", 4, 1, 3, Placement::from_config(&alt), false, &mut seeded(7)).map_err(|e| e.to_string())?;
    block.push(("NexBlock alt", check_layer(&mut s, &rand64(&[2, 4, 5, 5], 8), true, |f, v| b.forward(f, v, 0.0))));
    let mut s = ParamStore::<f64>::new();
    let place = Placement::from_config(&ArchConfig::default());
    let d = DownsampleBlock::new(&mut s, "d", 4, 6, 6, 3, place, PoolKind::StridedConv, true, &mut seeded(9))
        .map_err(|e| e.to_string())?;
    block.push(("DownsampleBlock", check_layer(&mut s, &rand64(&[2, 4, 6, 6], 10), true, |f, v| d.forward(f, v))));

    let secs = start.elapsed().as_secs_f64();
    fn worst<'a>(v: &[(&'a str, f64)]) -> (&'a str, f64) {
        v.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a })
    }
    let (ln, le) = worst(&layer);
    let (bn_, be) = worst(&block);
    ensure(le < 1e-4, format!("layer {ln}: max relative error {le:.2e} ≥ 1e-4"))?;
    ensure(be < 1e-3, format!("block {bn_}: max relative error {be:.2e} ≥ 1e-3"))?;
    ensure(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} layer checks max {le:.1e} ({ln}), {} block checks max {be:.1e} ({bn_}); {secs:.1}s",
        layer.len(),
        block.len()
    ))
}

// ---------- 4: recipe golden values ----------

fn recipe() -> Outcome {
    for v in [nexception::arch::Variant::NexceptionT, nexception::arch::Variant::NexceptionS] {
        let cfg = TrainConfig::for_variant(v);
        let peak = cosine_warmup_lr(cfg.warmup_epochs as f64, &cfg);
        let end = cosine_warmup_lr(cfg.epochs as f64, &cfg);
        ensure(peak == cfg.learning_rate, format!("{v}: peak {peak} != {}", cfg.learning_rate))?;
        ensure(end == 1e-6, format!("{v}: final lr {end}"))?;
    }
    let mut s = ParamStore::<f64>::new();
    let id = s.add("w", Tensor::new(&[1], vec![1.0]).map_err(|e| e.to_string())?, ParamKind::Weight).map_err(|e| e.to_string())?;
    s.accumulate_grad(id, &[0.1]);
    Lamb::new().step(&mut s, 0.01, 0.0).map_err(|e| e.to_string())?;
    let m: f64 = 0.1 * 0.1;
    let v: f64 = 0.001 * 0.01;
    let r = (m / 0.1) / ((v / 0.001).sqrt() + 1e-6);
    let want = 1.0 - 0.01 * (1.0 / r.abs()) * r;
    let lamb_err = (s.value(id).data()[0] - want).abs();
    ensure(lamb_err < 1e-12, format!("LAMB step off by {lamb_err:e}"))?;
    let mut g = Graph::<f64>::new();
    let z = g.input(Tensor::zeros(&[1, 1])).map_err(|e| e.to_string())?;
    let l = g.bce_soft_loss(z, &Tensor::full(&[1, 1], 0.5)).map_err(|e| e.to_string())?;
    let bce_err = (g.value(l).item() - std::f64::consts::LN_2).abs();
    ensure(bce_err < 1e-9, format!("BCE(0, 0.5) off by {bce_err:e}"))?;
    Ok(format!("schedule endpoints exact (T, S); LAMB |Δ| {lamb_err:.1e}; BCE |Δ| {bce_err:.1e}"))
}

// ---------- 5: augmentation properties ----------

fn augmentation() -> Outcome {
    let mut worst_mass = 0.0f64;
    for seed in 0..200u64 {
        let (n, k, h, w) = (4, 5, 8 + (seed % 5) as usize, 9);
        let x = Tensor::<f64>::from_fn(&[n, 1, h, w], |i| (i / (h * w)) as f64);
        let mut y = Tensor::<f64>::zeros(&[n, k]);
        for i in 0..n {
            y.data_mut()[i * k + (i + seed as usize) % k] = 1.0;
        }
        let mut rng = seeded(seed);
        let (_, ym, _) = mixup(&x, &y, 0.1 + (seed % 7) as f64 * 0.3, &mut rng).map_err(|e| e.to_string())?;
        let (_, yc, _) = cutmix(&x, &y, 1.0, &mut rng).map_err(|e| e.to_string())?;
        for t in [&ym, &yc] {
            for row in t.data().chunks(k) {
                worst_mass = worst_mass.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        let lam = (seed as f64 * 0.618).fract();
        let b = CutBox::sample(h, w, lam, &mut rng);
        let (xc, _, adj) = cutmix_with_box(&x, &y, b).map_err(|e| e.to_string())?;
        let changed = xc.data()[..h * w].iter().filter(|&&v| v != 0.0).count();
        ensure(changed == b.area(), format!("seed {seed}: {changed} pixels changed, box area {}", b.area()))?;
        ensure(
            ((1.0 - adj) * (h * w) as f64 - changed as f64).abs() < 1e-9,
            format!("seed {seed}: 1 − λ_adj = {} but ratio {}", 1.0 - adj, changed as f64 / (h * w) as f64),
        )?;
        let (xi, yi, l1) = mixup(&x, &y, 0.0, &mut rng).map_err(|e| e.to_string())?;
        ensure(l1 == 1.0 && xi.data() == x.data() && yi.data() == y.data(), "mixup with α = 0 changed the batch")?;
    }
    ensure(worst_mass < 1e-12, format!("label mass off by {worst_mass:e}"))?;
    let f = drop_path_factors(100_000, 0.05, &mut seeded(2024)).map_err(|e| e.to_string())?;
    let keep = f.iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
    ensure((0.94..=0.96).contains(&keep), format!("keep rate {keep}"))?;
    Ok(format!("label mass |Δ| {worst_mass:.1e}; cutmix ratio exact over 200 boxes; α = 0 identity; keep rate {keep:.4}"))
}

// ---------- 6: trainability ----------

fn trainability() -> Outcome {
    let start = Instant::now();
    let eight = synthetic_dataset(&SyntheticSpec { per_class: 1, ..Default::default() })
        .map_err(|e| e.to_string())?
        .take(8);
    let mut m = build::<f32>(&ArchSpec::reduced(ArchConfig::default(), 10), 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 8,
        epochs: 50,
        warmup_epochs: 0,
        ..TrainConfig::default().plain()
    };
    let opts = TrainOptions { eval_train: true, ..Default::default() };
    let r = train_epochs(&mut m, &eight, &eight, &cfg, &opts).map_err(|e| e.to_string())?;
    let top1 = r.train_top1.unwrap_or(0.0);
    ensure(r.steps <= 50 && top1 == 1.0, format!("train accuracy {top1} after {} steps", r.steps))?;

    let data = synthetic_dataset(&SyntheticSpec { per_class: 40, seed: 5, ..Default::default() }).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        learning_rate: 5e-3,
        batch_size: 32,
        epochs: 20,
        warmup_epochs: 1,
        ..TrainConfig::default().plain()
    };
    let mut obj = TrainingObjective::new(&data, 0.25, cfg, 11).map_err(|e| e.to_string())?;
    let n = obj.val.len() as f64;
    let trial = obj.evaluate(&ArchConfig::default(), 2).map_err(|e| e.to_string())?;
    let bar = 0.1 + 3.0 * (0.1 * 0.9 / n).sqrt();
    let secs = start.elapsed().as_secs_f64();
    ensure(trial.val_accuracy > bar, format!("validation accuracy {} ≤ chance + 3σ = {bar:.3}", trial.val_accuracy))?;
    ensure(secs < 600.0, format!("took {secs:.0}s"))?;
    Ok(format!(
        "8-sample batch memorized in {} steps; 10-class val top-1 {:.3} > {bar:.3} (n = {n}) after 20 epochs; {secs:.0}s",
        r.steps, trial.val_accuracy
    ))
}

// ---------- 7: search behavior ----------

fn nas() -> Outcome {
    let planted = PlantedObjective::default();
    let space = SearchSpace::full();
    let mut notes = Vec::new();
    for seed in 0..3 {
        let opts = SearchOptions {
            strategy: Strategy::Smbo,
            seed,
            budget: Budget { max_trials: Some(50), wall_seconds: None },
            ..Default::default()
        };
        let out = search(&space, &mut planted.clone(), &opts).map_err(|e| e.to_string())?;
        let first = out.history.iter().position(|t| planted.is_optimal(&t.config)).ok_or("optimum never evaluated")?;
        ensure(
            planted.is_optimal(&out.incumbent.config),
            format!("seed {seed}: incumbent {:?} is not optimal", out.incumbent.config),
        )?;
        ensure(out.incumbent.config.bottleneck == Bottleneck::Inverted, "bottleneck off")?;
        let lpi = lpi_importance(&out.history, &out.incumbent.config, &space, seed).map_err(|e| e.to_string())?;
        let imp = lpi.get("bottleneck").unwrap_or(0.0);
        ensure(imp > 0.9, format!("seed {seed}: bottleneck importance {imp:.3}"))?;
        notes.push(format!("seed {seed}: optimum at trial {}, LPI(bottleneck) {imp:.3}", first + 1));
    }
    Ok(notes.join("; "))
}

// ---------- 8: determinism and persistence ----------

fn determinism() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let data = synthetic_dataset(&SyntheticSpec { per_class: 4, ..Default::default() }).map_err(|e| e.to_string())?;
        let (train, val) = data.split(0.25, 0);
        let cfg = TrainConfig { batch_size: 10, epochs: 3, warmup_epochs: 1, seed: 7, ..TrainConfig::default() };
        let mut csvs = Vec::new();
        for name in ["a.csv", "b.csv"] {
            let mut m = build::<f32>(&ArchSpec::reduced(ArchConfig::default(), 10), 7).map_err(|e| e.to_string())?;
            let opts = TrainOptions { metrics_csv: Some(dir.path().join(name)), ..Default::default() };
            train_epochs(&mut m, &train, &val, &cfg, &opts).map_err(|e| e.to_string())?;
            csvs.push(std::fs::read(dir.path().join(name)).map_err(|e| e.to_string())?);
        }
        ensure(csvs[0] == csvs[1], "seeded runs wrote different metrics")?;

        let mut m = build::<f32>(&ArchSpec::reduced(minimal_config(), 10), 3).map_err(|e| e.to_string())?;
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&m, &path, serde_json::Value::Null).map_err(|e| e.to_string())?;
        let (mut back, _) = load_checkpoint::<f32>(&path).map_err(|e| e.to_string())?;
        let bits = |s: &ParamStore<f32>| -> Vec<u32> { s.iter().flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits())).collect() };
        ensure(bits(&m.params) == bits(&back.params), "checkpoint parameters differ")?;
        let x = Tensor::rand_uniform(&[2, 3, 32, 32], -1.0, 1.0, &mut seeded(1));
        let (ya, yb) = (m.infer(&x).map_err(|e| e.to_string())?, back.infer(&x).map_err(|e| e.to_string())?);
        ensure(ya.data() == yb.data(), "restored model computes differently")?;

        let records = cifar100_train_file(&dir.path().join("train.bin")).map_err(|e| e.to_string())?;
        let d = load_cifar(dir.path(), CifarVariant::Cifar100, "train").map_err(|e| e.to_string())?;
        ensure(d.len() == records, format!("{} records loaded", d.len()))?;
        let fine_ok = (0..d.len()).step_by(997).all(|i| d.labels[i] == i % 100);
        let pixel_ok = (0..d.len()).step_by(4999).all(|i| {
            let img = d.image(i);
            // HWC pixel (y=1, x=2): planar offsets c·1024 + 34.
            (0..3).all(|c| img[(32 + 2) * 3 + c] == pixel(i, c * 1024 + 34))
        });
        ensure(fine_ok && pixel_ok, "decoded labels or pixels differ from the written records")?;
        Ok(format!(
            "metrics CSVs identical ({} bytes); checkpoint bit-exact; CIFAR-100 train file yields {} records",
            csvs[0].len(),
            d.len()
        ))
    })
}

fn pixel(record: usize, offset: usize) -> u8 {
    ((record * 31 + offset * 7) % 251) as u8
}

/// Writes 50,000 records in the distributor's layout, independently of the
/// library's writer: coarse byte, fine byte, 3072 planar pixels.
fn cifar100_train_file(path: &Path) -> std::io::Result<usize> {
    let n = 50_000;
    let mut bytes = Vec::with_capacity(n * 3074);
    for i in 0..n {
        bytes.push(((i % 100) / 5) as u8);
        bytes.push((i % 100) as u8);
        bytes.extend((0..3072).map(|o| pixel(i, o)));
    }
    assert_eq!(bytes.len(), 153_700_000);
    std::fs::write(path, bytes)?;
    Ok(n)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 cost table", costs),
        ("2 shape ledger", shapes),
        ("3 gradient suite", gradients),
        ("4 recipe golden values", recipe),
        ("5 augmentation properties", augmentation),
        ("6 desk-scale trainability", trainability),
        ("7 search behavior", nas),
        ("8 determinism and persistence", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let line = match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => format!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                format!("FAIL  {name}: {why}")
            }
            Err(_) => {
                failed += 1;
                format!("FAIL  {name}: panicked")
            }
        };
        println!("{line}");
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
