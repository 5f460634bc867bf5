mod common;

use std::collections::HashSet;

use common::{check_layer, seeded};
use nexception::arch::{
    build, build_variant, count_flops, count_params, minimal_config, ArchConfig, ArchSpec, DownsampleBlock, ModelGraph,
    NexBlock, Placement, PoolKind, Variant,
};
use nexception::layers::{Forward, NormKind};
use nexception::{Activation, ParamStore, Tensor};
use proptest::prelude::*;

fn within(actual: u64, target: f64, rel: f64) -> bool {
    ((actual as f64 - target) / target).abs() <= rel
}

fn sep_params(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    cin * k * k + cin * cout + if bias { cout } else { 0 }
}

fn bn_params(c: usize) -> usize {
    4 * c
}

fn se_params(c: usize) -> usize {
    let h = c / 16;
    c * h + h + h * c + c
}

fn zero_prefix(store: &mut ParamStore<f64>, prefix: &str, keep: &str) {
    for p in store.iter_mut() {
        if p.name.starts_with(prefix) && !p.name.contains(keep) {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
}

#[test]
fn published_costs_within_tolerance() {
    let targets = [
        ("nexception_t", 24.5e6, 4.7e9),
        ("nexception_s", 43.4e6, 8.5e9),
        ("nexception_tp", 26.6e6, 4.5e9),
        ("xception", 23.6e6, 8.4e9),
    ];
    for (name, params, flops) in targets {
        let m = build_variant::<f32>(name, 0).unwrap();
        let r = count_params(&m).unwrap();
        assert!(within(r.params, params, 0.03), "{name}: {} params vs {params}", r.params);
        assert!(within(r.flops, flops, 0.05), "{name}: {} flops vs {flops}", r.flops);
    }
}

#[test]
fn report_totals_equal_sums_and_store() {
    for v in Variant::ALL {
        let m = build::<f32>(&ArchSpec::named(v), 1).unwrap();
        let r = count_params(&m).unwrap();
        assert_eq!(r.params, r.layers.iter().map(|l| l.params).sum::<u64>());
        assert_eq!(r.flops, r.layers.iter().map(|l| l.macs).sum::<u64>());
        assert_eq!(r.params as usize, m.params.total_numel(), "{v}");
        assert_eq!(r.trainable_params as usize, m.params.trainable_numel());
        let names: HashSet<_> = m.params.iter().map(|(_, p)| p.name.clone()).collect();
        assert_eq!(names.len(), m.params.len());
    }
}

#[test]
fn params_fixed_and_spatial_flops_quadratic() {
    for name in ["nexception_t", "nexception_tp", "nexception_s"] {
        let m = build_variant::<f32>(name, 0).unwrap();
        let a = count_flops(&m, 224).unwrap();
        let b = count_flops(&m, 448).unwrap();
        assert_eq!(a.params, b.params);
        for (x, y) in a.layers.iter().zip(&b.layers) {
            match x.kind.as_str() {
                "se" | "linear" => assert_eq!(x.macs, y.macs, "{}", x.name),
                _ => assert_eq!(4 * x.macs, y.macs, "{}", x.name),
            }
        }
    }
}

#[test]
fn single_conv_cost_rows() {
    use nexception::layers::{Conv2d, ConvSpec};
    let mut store = ParamStore::<f32>::new();
    let c = Conv2d::new(&mut store, "c", ConvSpec::same(64, 128, 3, 1).with_bias(true), &mut seeded(0)).unwrap();
    let mut rows = Vec::new();
    c.costs([64, 56, 56], &mut rows).unwrap();
    assert_eq!(rows[0].params, 73_856);
    let p = Conv2d::new(&mut store, "p", ConvSpec::same(64, 128, 1, 1), &mut seeded(0)).unwrap();
    p.costs([64, 56, 56], &mut rows).unwrap();
    assert_eq!(rows[1].macs, 25_690_112);
}

fn stages(m: &ModelGraph<f32>) -> Vec<(String, [usize; 3])> {
    m.net.stages.iter().map(|s| (s.name.clone(), s.expected)).collect()
}

#[test]
fn nexception_t_stage_shapes() {
    let mut m = build_variant::<f32>("nexception_t", 0).unwrap();
    let want = [
        ("stem", [96, 112, 112]),
        ("entry1", [128, 56, 56]),
        ("entry2", [256, 28, 28]),
        ("entry3", [512, 14, 14]),
        ("middle", [512, 14, 14]),
        ("exit", [2048, 7, 7]),
        ("head", [1000, 1, 1]),
    ];
    let got = stages(&m);
    for ((gn, gs), (wn, ws)) in got.iter().zip(want) {
        assert_eq!((gn.as_str(), *gs), (wn, ws));
    }
    let trace = m.trace(&Tensor::zeros(&[1, 3, 224, 224])).unwrap();
    m.check_trace(&trace).unwrap();
    assert_eq!(trace.last().unwrap().shape, vec![1, 1000]);
}

#[test]
fn nexception_s_trunk_width() {
    let m = build_variant::<f32>("nexception_s", 0).unwrap();
    let s = stages(&m);
    assert_eq!(s[4], ("middle".to_string(), [752, 14, 14]));
    assert!(m.params.by_name("middle.0.sep1.pointwise.weight").is_some());
    assert_eq!(m.params.by_name("middle.0.sep1.pointwise.weight").unwrap().value.shape()[0], 2256);
}

#[test]
fn t_middle_expands_to_1536() {
    let m = build_variant::<f32>("nexception_t", 0).unwrap();
    let w = m.params.by_name("middle.3.sep1.pointwise.weight").unwrap();
    assert_eq!(w.value.shape()[0], 1536);
}

#[test]
fn xception_shapes_at_299() {
    let mut m = build_variant::<f32>("xception", 0).unwrap();
    let s = stages(&m);
    assert_eq!(s[3], ("entry3".to_string(), [728, 19, 19]));
    assert_eq!(s[4], ("middle".to_string(), [728, 19, 19]));
    assert_eq!(s[5], ("exit".to_string(), [2048, 10, 10]));
    let trace = m.trace(&Tensor::zeros(&[1, 3, 299, 299])).unwrap();
    m.check_trace(&trace).unwrap();
}

#[test]
fn tp_stage_resolutions() {
    let mut m = build_variant::<f32>("nexception_tp", 0).unwrap();
    let s = stages(&m);
    let sides: Vec<_> = s[1..5].iter().map(|(_, c)| (c[0], c[1])).collect();
    assert_eq!(sides, vec![(96, 56), (192, 28), (384, 14), (768, 7)]);
    let depth: Vec<_> = m.net.stages[1..5].iter().map(|s| s.layers.len()).collect();
    assert_eq!(depth, vec![3, 5, 10, 4]);
    let trace = m.trace(&Tensor::zeros(&[2, 3, 224, 224])).unwrap();
    m.check_trace(&trace).unwrap();
    assert_eq!(trace.last().unwrap().shape, vec![2, 1000]);
}

#[test]
fn tp_stage1_block_closed_form() {
    let m = build_variant::<f32>("nexception_tp", 0).unwrap();
    let want = sep_params(96, 288, 5, false)
        + bn_params(288)
        + sep_params(288, 96, 5, true)
        + sep_params(96, 96, 5, true)
        + se_params(96);
    assert_eq!(want, 79_110);
    for b in 0..3 {
        assert_eq!(m.params.numel_with_prefix(&format!("stage1.{b}.")), want);
    }
}

#[test]
fn reduced_nas_minimal_runs() {
    let spec = ArchSpec::reduced(minimal_config(), 10);
    let mut m = build::<f32>(&spec, 3).unwrap();
    let y = m.infer(&Tensor::rand_uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut seeded(1))).unwrap();
    assert_eq!(y.shape(), &[1, 10]);
    assert!(y.is_finite());
    let trace = m.trace(&Tensor::zeros(&[1, 3, 32, 32])).unwrap();
    m.check_trace(&trace).unwrap();
}

#[test]
fn unknown_variant_and_bad_config_rejected() {
    assert!(build_variant::<f32>("resnet50", 0).is_err());
    let mut c = ArchConfig::default();
    c.kernel_middle = 4;
    assert!(build::<f32>(&ArchSpec::reduced(c, 10), 0).is_err());
    assert!(build::<f32>(&ArchSpec::named(Variant::ReducedNas).with_classes(0), 0).is_err());
}

#[test]
fn nex_block_zero_branch_is_identity() {
    let mut store = ParamStore::<f64>::new();
    let place = Placement::from_config(&ArchConfig::default());
    let b = NexBlock::new(&mut store, "b", 8, 3, 5, place, true, &mut seeded(2)).unwrap();
    zero_prefix(&mut store, "b.", "\0");
    let x = Tensor::rand_uniform(&[2, 8, 6, 6], -1.0, 1.0, &mut seeded(3));
    let mut rng = seeded(0);
    let mut f = Forward::new(&mut store, true, &mut rng);
    let xv = f.graph.input(x.clone()).unwrap();
    let y = b.forward(&mut f, xv, 0.0).unwrap();
    assert_eq!(f.graph.value(y).data(), x.data());
}

#[test]
fn downsample_zero_branch_is_shortcut() {
    for pool in [PoolKind::MaxPool, PoolKind::StridedConv, PoolKind::BlurPool] {
        let mut store = ParamStore::<f64>::new();
        let place = Placement::from_config(&ArchConfig::default());
        let d = DownsampleBlock::new(&mut store, "d", 4, 8, 8, 3, place, pool, true, &mut seeded(2)).unwrap();
        zero_prefix(&mut store, "d.", "shortcut");
        let x = Tensor::rand_uniform(&[1, 4, 8, 8], -1.0, 1.0, &mut seeded(3));
        let mut rng = seeded(0);
        let mut f = Forward::inference(&mut store, &mut rng);
        let xv = f.graph.input(x).unwrap();
        let y = d.forward(&mut f, xv).unwrap();
        let sc = d.shortcut_forward(&mut f, xv).unwrap();
        assert_eq!(f.graph.value(y).shape(), &[1, 8, 4, 4]);
        assert_eq!(f.graph.value(y).data(), f.graph.value(sc).data(), "{pool:?}");
    }
}

#[test]
fn nex_block_gradients() {
    let mut store = ParamStore::<f64>::new();
    let place = Placement::from_config(&ArchConfig::default());
    let b = NexBlock::new(&mut store, "b", 8, 3, 3, place, true, &mut seeded(5)).unwrap();
    let x = Tensor::rand_uniform(&[1, 8, 8, 8], -1.0, 1.0, &mut seeded(6));
    let err = check_layer(&mut store, &x, true, |f, v| b.forward(f, v, 0.0));
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn nex_block_gradients_alternate_placements() {
    let mut c = ArchConfig::default();
    c.norm_kind = NormKind::Layer;
    c.norm_position = nexception::arch::NormPosition::PreBlock;
    c.act_kind = Activation::Elu;
    c.act_position = nexception::arch::ActPosition::AfterAllConvs;
    let mut store = ParamStore::<f64>::new();
    let b = NexBlock::new(&mut store, "b", 4, 1, 3, Placement::from_config(&c), false, &mut seeded(5)).unwrap();
    let x = Tensor::rand_uniform(&[2, 4, 5, 5], -1.0, 1.0, &mut seeded(6));
    let err = check_layer(&mut store, &x, true, |f, v| b.forward(f, v, 0.0));
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn reduced_nas_memorizes_small_batch() {
    let spec = ArchSpec::reduced(ArchConfig::default(), 4);
    let mut m = build::<f32>(&spec, 7).unwrap();
    let x = Tensor::rand_uniform(&[8, 3, 32, 32], 0.0, 1.0, &mut seeded(8));
    let mut y = Tensor::zeros(&[8, 4]);
    for i in 0..8 {
        y.data_mut()[i * 4 + i % 4] = 1.0;
    }
    let mut losses = Vec::new();
    let mut rng = seeded(9);
    for _ in 0..50 {
        m.params.zero_grad();
        let mut f = Forward::new(&mut m.params, true, &mut rng);
        let xv = f.graph.input(x.clone()).unwrap();
        let out = m.net.forward(&mut f, xv).unwrap();
        let loss = f.graph.soft_cross_entropy(out, &y).unwrap();
        losses.push(f.graph.value(loss).item());
        let Forward { mut graph, params, .. } = f;
        graph.backward(loss, params).unwrap();
        for p in m.params.iter_mut().filter(|p| p.trainable) {
            if let Some(g) = p.grad.clone() {
                for (v, g) in p.value.data_mut().iter_mut().zip(g.data()) {
                    *v -= 0.05 * g;
                }
            }
        }
    }
    let first = losses[0];
    let last = *losses.last().unwrap();
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn cost_report_renders() {
    let m = build_variant::<f32>("nexception_tp", 0).unwrap();
    let r = count_params(&m).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(v["params"].as_u64(), Some(r.params));
    assert_eq!(v["input"], serde_json::json!([3, 224, 224]));
    let table = r.to_table();
    assert!(table.contains("stage3.down.conv"));
    assert!(table.lines().count() > r.layers.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_config_builds_with_consistent_costs(ix in proptest::collection::vec(0usize..4, 11)) {
        let dims = ArchConfig::dimensions();
        let ix: Vec<usize> = ix.iter().zip(&dims).map(|(i, d)| i % d.values.len()).collect();
        let c = ArchConfig::from_indices(&ix).unwrap();
        let m = build::<f32>(&ArchSpec::reduced(c, 10), 0).unwrap();
        let r = count_params(&m).unwrap();
        prop_assert_eq!(r.params as usize, m.params.total_numel());
        let shapes = m.net.stage_shapes(32).unwrap();
        prop_assert_eq!(shapes.last().unwrap().1, [10, 1, 1]);
        prop_assert_eq!(shapes[2].1, [32, 8, 8]);
    }
}
