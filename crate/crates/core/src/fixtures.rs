//! Seeded synthetic models.
//!
//! The dataset-shaped fixtures match the layer counts and total CONV/FC
//! weight counts of common MNIST, CIFAR10 and SVHN reference models. Layer
//! shapes are chosen to hit those totals with every layer holding an even
//! number of weights. Weight values are random and rounded to `f32`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{conv_extent, LayerSpec, ModelIR, Tensor};

pub const MNIST_PARAMETERS: usize = 1_498_730;
pub const CIFAR10_PARAMETERS: usize = 552_874;
pub const SVHN_PARAMETERS: usize = 552_362;

/// Incrementally builds a sequential model with random parameters.
pub struct ModelBuilder {
    name: String,
    input_shape: Vec<usize>,
    shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    tensors: BTreeMap<String, Tensor>,
    rng: ChaCha8Rng,
}

impl ModelBuilder {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, seed: u64) -> Self {
        Self {
            name: name.into(),
            shape: input_shape.clone(),
            input_shape,
            layers: Vec::new(),
            tensors: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.gen_range(lo..hi) as f32 as f64)
            .collect();
        Tensor::new(shape, data).expect("builder shapes are valid")
    }

    fn prefix(&self) -> String {
        format!("l{}", self.layers.len())
    }

    pub fn conv(mut self, out_ch: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Self {
        let in_ch = self.shape[0];
        let fan_in = (in_ch * kernel * kernel) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let p = self.prefix();
        let w = self.uniform(vec![out_ch, in_ch, kernel, kernel], -limit, limit);
        self.tensors.insert(format!("{p}.weight"), w);
        let bias_name = bias.then(|| format!("{p}.bias"));
        if let Some(b) = &bias_name {
            let t = self.uniform(vec![out_ch], -0.05, 0.05);
            self.tensors.insert(b.clone(), t);
        }
        self.layers.push(LayerSpec::Conv2d {
            weight: format!("{p}.weight"),
            bias: bias_name,
            stride,
            padding,
        });
        let oh = conv_extent(self.shape[1], kernel, stride, padding).expect("conv fits");
        let ow = conv_extent(self.shape[2], kernel, stride, padding).expect("conv fits");
        self.shape = vec![out_ch, oh, ow];
        self
    }

    pub fn fc(mut self, out: usize, bias: bool) -> Self {
        let inp: usize = self.shape.iter().product();
        let limit = (6.0 / inp as f64).sqrt();
        let p = self.prefix();
        let w = self.uniform(vec![out, inp], -limit, limit);
        self.tensors.insert(format!("{p}.weight"), w);
        let bias_name = bias.then(|| format!("{p}.bias"));
        if let Some(b) = &bias_name {
            let t = self.uniform(vec![out], -0.05, 0.05);
            self.tensors.insert(b.clone(), t);
        }
        self.layers.push(LayerSpec::FullyConnected {
            weight: format!("{p}.weight"),
            bias: bias_name,
        });
        self.shape = vec![out];
        self
    }

    pub fn batch_norm(mut self) -> Self {
        let ch = self.shape[0];
        let p = self.prefix();
        let scale = self.uniform(vec![ch], 0.5, 1.5);
        let shift = self.uniform(vec![ch], -0.1, 0.1);
        self.tensors.insert(format!("{p}.scale"), scale);
        self.tensors.insert(format!("{p}.shift"), shift);
        self.layers.push(LayerSpec::BatchNorm {
            scale: format!("{p}.scale"),
            shift: format!("{p}.shift"),
        });
        self
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(LayerSpec::Relu);
        self
    }

    pub fn max_pool(mut self, window: usize, stride: usize) -> Self {
        self.layers.push(LayerSpec::MaxPool { window, stride });
        let (h, w) = (self.shape[1], self.shape[2]);
        self.shape = vec![self.shape[0], (h - window) / stride + 1, (w - window) / stride + 1];
        self
    }

    /// Overwrites a tensor built so far, e.g. to plant structured zeros.
    pub fn map_tensor(mut self, name: &str, f: impl FnOnce(&mut Tensor)) -> Self {
        if let Some(t) = self.tensors.get_mut(name) {
            f(t);
        }
        self
    }

    pub fn build(self) -> Result<ModelIR> {
        ModelIR::new(self.name, self.input_shape, self.layers, self.tensors)
    }
}

/// 2 CONV + 2 FC layers on 1x28x28 input, 1,498,730 weights.
pub fn mnist_like(seed: u64) -> ModelIR {
    ModelBuilder::new("mnist-like", vec![1, 28, 28], seed)
        .conv(12, 3, 1, 0, false)
        .relu()
        .conv(19, 3, 1, 0, false)
        .relu()
        .max_pool(2, 2)
        .fc(545, false)
        .relu()
        .fc(10, false)
        .build()
        .expect("fixture is valid")
}

/// 6 CONV + 1 FC layers on 3x32x32 input, 552,874 weights.
pub fn cifar10_like(seed: u64) -> ModelIR {
    let mut b = ModelBuilder::new("cifar10-like", vec![3, 32, 32], seed);
    for (i, ch) in [32, 32, 48, 80, 153, 250].into_iter().enumerate() {
        b = b.conv(ch, 3, 1, 1, false).batch_norm().relu();
        if i % 2 == 1 {
            b = b.max_pool(2, 2);
        }
    }
    b.fc(10, false).build().expect("fixture is valid")
}

/// 4 CONV + 3 FC layers on 3x32x32 input, 552,362 weights.
pub fn svhn_like(seed: u64) -> ModelIR {
    ModelBuilder::new("svhn-like", vec![3, 32, 32], seed)
        .conv(32, 3, 1, 1, false)
        .batch_norm()
        .relu()
        .max_pool(2, 2)
        .conv(32, 3, 1, 1, false)
        .batch_norm()
        .relu()
        .conv(112, 3, 1, 1, false)
        .batch_norm()
        .relu()
        .max_pool(2, 2)
        .conv(128, 3, 1, 1, false)
        .batch_norm()
        .relu()
        .max_pool(2, 2)
        .fc(181, false)
        .relu()
        .fc(54, false)
        .relu()
        .fc(10, false)
        .build()
        .expect("fixture is valid")
}

/// Small 3 CONV + 2 FC network with biases and batch norm.
pub fn toy_cnn(seed: u64) -> ModelIR {
    ModelBuilder::new("toy-cnn", vec![2, 8, 8], seed)
        .conv(4, 3, 1, 1, true)
        .batch_norm()
        .relu()
        .conv(6, 3, 1, 1, true)
        .relu()
        .max_pool(2, 2)
        .conv(8, 3, 1, 1, false)
        .batch_norm()
        .relu()
        .fc(32, true)
        .relu()
        .fc(10, true)
        .build()
        .expect("fixture is valid")
}

/// Looks up a named fixture.
pub fn by_name(name: &str, seed: u64) -> Option<ModelIR> {
    match name {
        "mnist" => Some(mnist_like(seed)),
        "cifar10" => Some(cifar10_like(seed)),
        "svhn" => Some(svhn_like(seed)),
        "toy" => Some(toy_cnn(seed)),
        _ => None,
    }
}

/// Uniform `[0, 1)` input, rounded to `f32`.
pub fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen::<f32>() as f64).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}
