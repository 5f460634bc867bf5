//! Independent oracles shared by the integration suites: central finite
//! differences and direct nested-loop reference implementations. Nothing
//! here calls the kernels it is used to check, except through the public
//! forward pass being differentiated.
#![allow(dead_code)]

use nexception::layers::Forward;
use nexception::{Graph, ParamStore, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Elementwise relative error `|a − n| / max(|a|, |n|, floor)`, maximized.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Fixed projection weights so a tensor-valued output becomes a scalar loss
/// with a non-trivial gradient.
pub fn projection(shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| ((i as f64) * 0.7317 + 0.3).sin())
}

fn project(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let r = g.input(projection(g.shape(out)))?;
    let prod = g.mul(out, r)?;
    g.sum(prod)
}

/// Gradient check of a pure tape computation with respect to all `inputs`.
/// Returns the maximum relative error over every input element.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone()).unwrap()).collect();
    let out = build(&mut g, &vars).unwrap();
    let loss = project(&mut g, out).unwrap();
    g.backward(loss, &mut store).unwrap();

    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone()).unwrap()).collect();
        let out = build(&mut g, &vars).unwrap();
        let loss = project(&mut g, out).unwrap();
        g.value(loss).item()
    };

    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(|t| t.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        let mut numeric = Vec::with_capacity(inputs[k].numel());
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
        }
        worst = worst.max(max_rel_error(&analytic, &numeric));
    }
    worst
}

/// Gradient check of a layer-level forward with respect to its input and
/// every trainable parameter in `store`.
pub fn check_layer<F>(store: &mut ParamStore<f64>, x: &Tensor<f64>, training: bool, forward: F) -> f64
where
    F: Fn(&mut Forward<'_, f64>, Var) -> Result<Var>,
{
    let run = |store: &mut ParamStore<f64>, x: &Tensor<f64>, with_grad: bool| -> (f64, Option<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = Forward::new(store, training, &mut rng);
        let xv = if with_grad {
            f.graph.input_with_grad(x.clone()).unwrap()
        } else {
            f.graph.input(x.clone()).unwrap()
        };
        let out = forward(&mut f, xv).unwrap();
        let loss = project(&mut f.graph, out).unwrap();
        let value = f.graph.value(loss).item();
        if with_grad {
            let Forward { mut graph, params, .. } = f;
            graph.backward(loss, params).unwrap();
            (value, Some(graph.grad(xv).unwrap().to_vec()))
        } else {
            (value, None)
        }
    };

    store.zero_grad();
    let (_, dx) = run(store, x, true);
    let dx = dx.unwrap();

    let mut worst = 0.0f64;
    let mut numeric = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        numeric.push((run(store, &plus, false).0 - run(store, &minus, false).0) / (2.0 * FD_STEP));
    }
    worst = worst.max(max_rel_error(&dx, &numeric));

    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let analytic = store
            .get(id)
            .grad
            .as_ref()
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; store.get(id).value.numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
            let lp = run(store, x, false).0;
            store.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
            let lm = run(store, x, false).0;
            store.get_mut(id).value.data_mut()[i] = orig;
            numeric.push((lp - lm) / (2.0 * FD_STEP));
        }
        worst = worst.max(max_rel_error(&analytic, &numeric));
    }
    worst
}

/// Direct convolution by nested loops over output and kernel coordinates.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, cin, h, wd] = xs;
    let [cout, cin_g, kh, kw] = ws;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let cout_g = cout / groups;
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            let grp = co / cout_g;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for ci in 0..cin_g {
                        let c = grp * cin_g + ci;
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x[((b * cin + c) * h + iy as usize) * wd + ix as usize]
                                    * w[((co * cin_g + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((b * cout + co) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (out, [n, cout, oh, ow])
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
