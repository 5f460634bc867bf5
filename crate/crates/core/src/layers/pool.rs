use super::{Chw, Forward, LayerCost};
use crate::error::{Error, Result};
use crate::tensor::kernels::out_extent;
use crate::tensor::{Float, Tensor, Var};

/// Normalized 3×3 binomial filter: outer product of `[1, 2, 1]/4` with itself.
pub fn blur_kernel() -> [[f64; 3]; 3] {
    let taps = [0.25, 0.5, 0.25];
    let mut k = [[0.0; 3]; 3];
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = taps[i] * taps[j];
        }
    }
    k
}

fn pooled(name: &str, input: Chw, kernel: usize, stride: usize, padding: usize) -> Result<Chw> {
    match (
        out_extent(input[1], kernel, stride, padding),
        out_extent(input[2], kernel, stride, padding),
    ) {
        (Some(h), Some(w)) => Ok([input[0], h, w]),
        _ => Err(Error::config(format!(
            "{name}: window {kernel} does not fit input {}x{}",
            input[1], input[2]
        ))),
    }
}

#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl MaxPool2d {
    /// The downsampling pool: 3×3 window, stride 2, padding 1.
    pub fn downsample(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        f.graph.max_pool(x, self.kernel, self.stride, self.padding)
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        let o = pooled(&self.name, input, self.kernel, self.stride, self.padding)?;
        out.push(LayerCost::new(&self.name, "max_pool", o, 0, 0));
        Ok(o)
    }
}

/// Anti-aliased downsampling: 3×3 max pool at stride 1 (padding 1), then the
/// fixed binomial blur applied depthwise at stride 2 over a one-pixel mirror
/// padding, so constant maps stay constant up to the border. Output extent
/// is `ceil(H/2)`.
#[derive(Clone, Debug)]
pub struct MaxBlurPool {
    pub name: String,
    pub channels: usize,
}

impl MaxBlurPool {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            channels,
        }
    }

    fn filter<T: Float>(&self) -> Tensor<T> {
        let k = blur_kernel();
        Tensor::from_fn(&[self.channels, 1, 3, 3], |i| T::of(k[(i % 9) / 3][i % 3]))
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let [_, c, h, w] = f.graph.value(x).dims4()?;
        if c != self.channels {
            return Err(Error::config(format!(
                "{}: expected {} channels, got {c}",
                self.name, self.channels
            )));
        }
        if h < 3 || w < 3 {
            return Err(Error::config(format!("{}: input {h}x{w} is smaller than 3x3", self.name)));
        }
        let m = f.graph.max_pool(x, 3, 1, 1)?;
        let m = f.graph.reflect_pad(m, 1)?;
        let k = f.graph.input(self.filter())?;
        f.graph.conv2d(m, k, None, 2, 0, self.channels)
    }

    /// The blur is a fixed depthwise convolution and is counted as one:
    /// `out_H·out_W·C·9` MACs, no parameters.
    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        if input[1] < 3 || input[2] < 3 {
            return Err(Error::config(format!(
                "{}: input {}x{} is smaller than 3x3",
                self.name, input[1], input[2]
            )));
        }
        let o = pooled(&self.name, input, 3, 2, 1)?;
        out.push(LayerCost::new(&self.name, "max_blur_pool", o, 0, (o[0] * o[1] * o[2] * 9) as u64));
        Ok(o)
    }
}
