use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{DownsampleBlock, Head, NexBlock, Placement, SepNormAct, Transition, XceptionBlock};
use super::config::{ArchConfig, PoolKind};
use super::model::{ArchSpec, Layer, ModelGraph, Network, Stage, Variant};
use crate::error::Result;
use crate::layers::{NormKind, Stem, StemKind};
use crate::params::ParamStore;
use crate::tensor::{Activation, Float};

/// Stage names, layers; expected shapes are filled in afterwards.
type Plan = Vec<(String, Vec<Layer>)>;

struct Ctx<'a, T: Float> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

/// Builds the model described by `spec` with parameters drawn from `seed`.
pub fn build<T: Float>(spec: &ArchSpec, seed: u64) -> Result<ModelGraph<T>> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let mut cx = Ctx {
        store: &mut store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let plan = match spec.variant {
        Variant::NexceptionT => isotropic(&mut cx, 512, spec.num_classes)?,
        Variant::NexceptionS => isotropic(&mut cx, 752, spec.num_classes)?,
        Variant::NexceptionTp => pyramid(&mut cx, spec.num_classes)?,
        Variant::Xception => xception(&mut cx, spec.num_classes)?,
        Variant::ReducedNas => reduced(&mut cx, &spec.config, spec.width, spec.num_classes)?,
    };
    let mut net = Network {
        spec: spec.clone(),
        stages: plan
            .into_iter()
            .map(|(name, layers)| Stage {
                name,
                layers,
                expected: [0; 3],
            })
            .collect(),
        drop_path: 0.0,
    };
    let shapes = net.stage_shapes(spec.input_size)?;
    for (stage, (_, s)) in net.stages.iter_mut().zip(shapes) {
        stage.expected = s;
    }
    Ok(ModelGraph { net, params: store })
}

/// Convenience: a named variant at its default classes and input size.
pub fn build_variant<T: Float>(name: &str, seed: u64) -> Result<ModelGraph<T>> {
    build(&ArchSpec::named(Variant::parse(name)?), seed)
}

fn down<T: Float>(
    cx: &mut Ctx<'_, T>,
    name: &str,
    (cin, mid, cout): (usize, usize, usize),
    kernel: usize,
    c: &ArchConfig,
) -> Result<Layer> {
    Ok(Layer::Downsample(DownsampleBlock::new(
        cx.store,
        name,
        cin,
        mid,
        cout,
        kernel,
        Placement::from_config(c),
        c.pool,
        c.se,
        &mut cx.rng,
    )?))
}

fn nex<T: Float>(cx: &mut Ctx<'_, T>, name: &str, channels: usize, c: &ArchConfig) -> Result<Layer> {
    Ok(Layer::Nex(NexBlock::new(
        cx.store,
        name,
        channels,
        c.bottleneck.expansion(),
        c.kernel_middle,
        Placement::from_config(c),
        c.se,
        &mut cx.rng,
    )?))
}

fn sna<T: Float>(cx: &mut Ctx<'_, T>, name: &str, cin: usize, cout: usize, norm: NormKind, act: Activation) -> Result<Layer> {
    Ok(Layer::SepNormAct(SepNormAct::new(cx.store, name, cin, cout, 3, norm, act, &mut cx.rng)?))
}

/// Patchify stem, three entry downsampling blocks, eight middle blocks at
/// `width`, an exit block to 1024, separable 3×3 convolutions to 1536 and
/// 2048, and the classifier.
fn isotropic<T: Float>(cx: &mut Ctx<'_, T>, width: usize, classes: usize) -> Result<Plan> {
    let c = ArchConfig::default();
    let mut plan: Plan = vec![(
        "stem".into(),
        vec![Layer::Stem(Stem::patchify(cx.store, "stem", 3, 96, 2, c.norm_kind, &mut cx.rng)?)],
    )];
    let mut cin = 96;
    for (i, cout) in [128, 256, width].into_iter().enumerate() {
        let name = format!("entry{}", i + 1);
        let block = down(cx, &name, (cin, cout, cout), c.kernel_entry, &c)?;
        plan.push((name, vec![block]));
        cin = cout;
    }
    let middle = (0..8)
        .map(|i| nex(cx, &format!("middle.{i}"), width, &c))
        .collect::<Result<_>>()?;
    plan.push(("middle".into(), middle));
    plan.push((
        "exit".into(),
        vec![
            down(cx, "exit.block", (width, width, 1024), c.kernel_exit, &c)?,
            sna(cx, "exit.sep1", 1024, 1536, c.norm_kind, c.act_kind)?,
            sna(cx, "exit.sep2", 1536, 2048, c.norm_kind, c.act_kind)?,
        ],
    ));
    plan.push((
        "head".into(),
        vec![Layer::Head(Head::new(cx.store, "head", 2048, classes, None, &mut cx.rng)?)],
    ));
    Ok(plan)
}

/// 4×4 patchify stem and four stages of residual blocks ([3, 4, 9, 3] at
/// 96/192/384/768 channels) joined by norm + 2×2 stride-2 convolutions.
fn pyramid<T: Float>(cx: &mut Ctx<'_, T>, classes: usize) -> Result<Plan> {
    let c = ArchConfig::default();
    let mut plan: Plan = vec![(
        "stem".into(),
        vec![Layer::Stem(Stem::patchify(cx.store, "stem", 3, 96, 4, c.norm_kind, &mut cx.rng)?)],
    )];
    let dims = [96, 192, 384, 768];
    let depths = [3, 4, 9, 3];
    for (s, (&d, &n)) in dims.iter().zip(&depths).enumerate() {
        let name = format!("stage{}", s + 1);
        let mut layers = Vec::with_capacity(n + 1);
        if s > 0 {
            let t = Transition::new(cx.store, &format!("{name}.down"), dims[s - 1], d, c.norm_kind, &mut cx.rng)?;
            layers.push(Layer::Transition(t));
        }
        for b in 0..n {
            layers.push(nex(cx, &format!("{name}.{b}"), d, &c)?);
        }
        plan.push((name, layers));
    }
    plan.push((
        "head".into(),
        vec![Layer::Head(Head::new(cx.store, "head", 768, classes, Some(c.norm_kind), &mut cx.rng)?)],
    ));
    Ok(plan)
}

/// The baseline: conv stem (32, 64), entry blocks to 128/256/728, eight
/// middle blocks of three ReLU-separable-BN units, exit block to 1024,
/// separable convolutions to 1536 and 2048.
fn xception<T: Float>(cx: &mut Ctx<'_, T>, classes: usize) -> Result<Plan> {
    let relu = Activation::Relu;
    let stem = Stem::conv(cx.store, "stem", 3, 32, 64, NormKind::Batch, relu, &mut cx.rng)?;
    let mut plan: Plan = vec![("stem".into(), vec![Layer::Stem(stem)])];
    let mut cin = 64;
    for (i, cout) in [128, 256, 728].into_iter().enumerate() {
        let name = format!("entry{}", i + 1);
        // The first block follows the stem's activation directly.
        let pre = [i > 0, true];
        let b = XceptionBlock::new(cx.store, &name, cin, &[cout, cout], &pre, true, &mut cx.rng)?;
        plan.push((name, vec![Layer::Xception(b)]));
        cin = cout;
    }
    let middle = (0..8)
        .map(|i| {
            let name = format!("middle.{i}");
            XceptionBlock::new(cx.store, &name, 728, &[728; 3], &[true; 3], false, &mut cx.rng).map(Layer::Xception)
        })
        .collect::<Result<_>>()?;
    plan.push(("middle".into(), middle));
    let exit = XceptionBlock::new(cx.store, "exit.block", 728, &[728, 1024], &[true, true], true, &mut cx.rng)?;
    plan.push((
        "exit".into(),
        vec![
            Layer::Xception(exit),
            sna(cx, "exit.sep1", 1024, 1536, NormKind::Batch, relu)?,
            sna(cx, "exit.sep2", 1536, 2048, NormKind::Batch, relu)?,
        ],
    ));
    plan.push((
        "head".into(),
        vec![Layer::Head(Head::new(cx.store, "head", 2048, classes, None, &mut cx.rng)?)],
    ));
    Ok(plan)
}

/// The search-evaluation network for 32×32 inputs: stem to `w`, one entry
/// downsampling block to `2w`, four middle blocks, an exit block to `4w`,
/// separable convolutions to `6w` and `8w`, classifier.
fn reduced<T: Float>(cx: &mut Ctx<'_, T>, c: &ArchConfig, w: usize, classes: usize) -> Result<Plan> {
    let stem = match c.stem {
        StemKind::ConvStem => Stem::conv(cx.store, "stem", 3, w / 2, w, c.norm_kind, c.act_kind, &mut cx.rng)?,
        StemKind::Patchify2x2 => Stem::patchify(cx.store, "stem", 3, w, 2, c.norm_kind, &mut cx.rng)?,
    };
    let mut plan: Plan = vec![("stem".into(), vec![Layer::Stem(stem)])];
    plan.push(("entry1".into(), vec![down(cx, "entry1", (w, 2 * w, 2 * w), c.kernel_entry, c)?]));
    let middle = (0..4)
        .map(|i| nex(cx, &format!("middle.{i}"), 2 * w, c))
        .collect::<Result<_>>()?;
    plan.push(("middle".into(), middle));
    plan.push((
        "exit".into(),
        vec![
            down(cx, "exit.block", (2 * w, 2 * w, 4 * w), c.kernel_exit, c)?,
            sna(cx, "exit.sep1", 4 * w, 6 * w, c.norm_kind, c.act_kind)?,
            sna(cx, "exit.sep2", 6 * w, 8 * w, c.norm_kind, c.act_kind)?,
        ],
    ));
    plan.push((
        "head".into(),
        vec![Layer::Head(Head::new(cx.store, "head", 8 * w, classes, None, &mut cx.rng)?)],
    ));
    Ok(plan)
}

/// The smallest member of the search space, used in smoke tests.
pub fn minimal_config() -> ArchConfig {
    ArchConfig {
        kernel_entry: 3,
        kernel_middle: 3,
        kernel_exit: 3,
        stem: StemKind::Patchify2x2,
        pool: PoolKind::MaxPool,
        bottleneck: super::config::Bottleneck::Off,
        se: false,
        act_kind: Activation::Relu,
        act_position: super::config::ActPosition::None,
        norm_kind: NormKind::Batch,
        norm_position: super::config::NormPosition::AfterFirstConv,
    }
}
