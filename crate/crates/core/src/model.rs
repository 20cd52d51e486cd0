//! Dense ReLU network standing in for the black-box map `f`, plus the image
//! and logit tensor layouts shared across the crate.
//!
//! Layouts are row-major. Image entry `(i, j, c)` lives at
//! `(i * width + j) * channels + c`; logit entry `(i, j, l)` lives at
//! `(i * width + j) * classes + l`, all indices 0-based.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, Payload};
use crate::error::{ReachError, Result};
use crate::seed;

/// Samples per block in batched inference. Each weight row is reused across
/// the block while it is hot in cache.
const BLOCK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ReachError::dim("image data", expected, data.len()));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        ImageTensor {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.width + j) * self.channels + c
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.index(i, j, c)]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn flatten(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitTensor {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl LogitTensor {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height * width * classes;
        if data.len() != expected {
            return Err(ReachError::dim("logit data", expected, data.len()));
        }
        Ok(LogitTensor {
            height,
            width,
            classes,
            data,
        })
    }

    /// Reshapes a flat network output for an `height × width` image.
    pub fn from_flat(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let pixels = height * width;
        if pixels == 0 || data.len() % pixels != 0 || data.is_empty() {
            return Err(ReachError::InvalidData(format!(
                "output length {} is not a positive multiple of {pixels} pixels",
                data.len()
            )));
        }
        let classes = data.len() / pixels;
        Self::new(height, width, classes, data)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.width + j) * self.classes + l
    }

    /// The `classes` logits of pixel `(i, j)`.
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let start = self.index(i, j, 0);
        &self.data[start..start + self.classes]
    }
}

/// Per-pixel class indices (0-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMask {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<usize>,
    /// Number of pixels whose maximum logit was attained by several classes.
    pub ties: usize,
}

impl ClassMask {
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.classes[i * self.width + j]
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tied = false;
    for (l, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = l;
            tied = false;
        } else if v == values[best] {
            tied = true;
        }
    }
    (best, tied)
}

/// Segmentation mask: per-pixel argmax over class logits, lowest class index
/// on ties.
pub fn predict_mask(logits: &LogitTensor) -> ClassMask {
    let mut classes = Vec::with_capacity(logits.height * logits.width);
    let mut ties = 0;
    for i in 0..logits.height {
        for j in 0..logits.width {
            let (l, tied) = argmax(logits.pixel(i, j));
            ties += tied as usize;
            classes.push(l);
        }
    }
    ClassMask {
        height: logits.height,
        width: logits.width,
        classes,
        ties,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`; row `o` feeds output unit `o`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }
}

/// Feedforward network with ReLU on every hidden layer and an identity
/// output layer. Immutable once built; inference is bitwise deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpNetwork {
    layer_dims: Vec<usize>,
    layers: Vec<DenseLayer>,
}

impl MlpNetwork {
    pub fn new(layer_dims: Vec<usize>, weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(ReachError::InvalidData(
                "a network needs at least an input and an output dimension".into(),
            ));
        }
        if layer_dims.contains(&0) {
            return Err(ReachError::InvalidData("layer dimensions must be positive".into()));
        }
        let count = layer_dims.len() - 1;
        if weights.len() != count || biases.len() != count {
            return Err(ReachError::dim("weight/bias blocks", count, weights.len().min(biases.len())));
        }
        let mut layers = Vec::with_capacity(count);
        for (k, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let (inputs, outputs) = (layer_dims[k], layer_dims[k + 1]);
            if w.len() != inputs * outputs {
                return Err(ReachError::dim("weight matrix", inputs * outputs, w.len()));
            }
            if b.len() != outputs {
                return Err(ReachError::dim("bias vector", outputs, b.len()));
            }
            layers.push(DenseLayer {
                inputs,
                outputs,
                weights: w,
                bias: b,
            });
        }
        Ok(MlpNetwork { layer_dims, layers })
    }

    /// He-initialized random network: weights `N(0, 2 / fan_in)`, biases
    /// `N(0, 0.05²)`.
    pub fn random(layer_dims: &[usize], seed_value: u64) -> Result<Self> {
        let mut rng = seed::sample_rng(seed_value, 0);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let std = (2.0 / pair[0] as f64).sqrt();
            weights.push(
                (0..pair[0] * pair[1])
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            biases.push(
                (0..pair[1])
                    .map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
        }
        Self::new(layer_dims.to_vec(), weights, biases)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two dims")
    }

    pub fn infer(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.forward_block(&[input]).pop().expect("one output"))
    }

    /// Batched inference; row `i` of the result is bitwise equal to
    /// `infer(&inputs[i])` for any batch size or thread count.
    pub fn infer_batch<T: AsRef<[f64]> + Sync>(&self, inputs: &[T]) -> Result<Vec<Vec<f64>>> {
        for x in inputs {
            self.check_input(x.as_ref())?;
        }
        Ok(inputs
            .par_chunks(BLOCK)
            .flat_map_iter(|chunk| {
                let refs: Vec<&[f64]> = chunk.iter().map(AsRef::as_ref).collect();
                self.forward_block(&refs)
            })
            .collect())
    }

    /// Post-activation values of the first layer.
    pub fn first_layer_output(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let layer = &self.layers[0];
        let last = self.layers.len() == 1;
        Ok((0..layer.outputs)
            .map(|o| {
                let v = dot(layer.row(o), input) + layer.bias[o];
                if last {
                    v
                } else {
                    v.max(0.0)
                }
            })
            .collect())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(ReachError::dim("network input", self.input_dim(), input.len()));
        }
        Ok(())
    }

    fn forward_block(&self, inputs: &[&[f64]]) -> Vec<Vec<f64>> {
        let mut current: Vec<Vec<f64>> = inputs.iter().map(|x| x.to_vec()).collect();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = vec![vec![0.0; layer.outputs]; current.len()];
            let act = |v: f64| if k == last { v } else { v.max(0.0) };
            for o in 0..layer.outputs {
                let row = layer.row(o);
                let bias = layer.bias[o];
                let mut dsts = next.chunks_exact_mut(4);
                let mut srcs = current.chunks_exact(4);
                for (dst, src) in (&mut dsts).zip(&mut srcs) {
                    let v = dot4(row, [&src[0], &src[1], &src[2], &src[3]]);
                    for s in 0..4 {
                        dst[s][o] = act(v[s] + bias);
                    }
                }
                for (dst, src) in dsts.into_remainder().iter_mut().zip(srcs.remainder()) {
                    dst[o] = act(dot(row, src) + bias);
                }
            }
            current = next;
        }
        current
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    /// `MLP v1 <layers> <n0> ... <n>` then, per layer, the row-major weight
    /// matrix followed by the bias, as little-endian f64.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = vec![
            "MLP".to_string(),
            "v1".to_string(),
            self.layers.len().to_string(),
        ];
        header.extend(self.layer_dims.iter().map(usize::to_string));
        container::write_header(w, &header)?;
        for layer in &self.layers {
            container::write_f64s(w, &layer.weights)?;
            container::write_f64s(w, &layer.bias)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (tokens, payload) = container::split_header(bytes)?;
        container::expect_magic(&tokens, "MLP", "v1")?;
        let count = tokens
            .get(2)
            .ok_or_else(|| ReachError::MalformedHeader("missing layer count".into()))
            .and_then(|t| container::parse_usize(t, "layer count"))?;
        let dims = tokens[3..]
            .iter()
            .map(|t| container::parse_usize(t, "layer dimension"))
            .collect::<Result<Vec<_>>>()?;
        if count == 0 || dims.len() != count + 1 {
            return Err(ReachError::MalformedHeader(format!(
                "{count} layers need {} dimensions, found {}",
                count + 1,
                dims.len()
            )));
        }
        let mut payload = Payload::new(payload);
        let mut weights = Vec::with_capacity(count);
        let mut biases = Vec::with_capacity(count);
        for (k, pair) in dims.windows(2).enumerate() {
            weights.push(payload.take(pair[0] * pair[1], &format!("layer {k} weights"))?);
            biases.push(payload.take(pair[1], &format!("layer {k} bias"))?);
        }
        payload.finish()?;
        Self::new(dims, weights, biases)
    }
}

/// Dot product with four interleaved partial sums, combined pairwise. The
/// summation order is fixed, so results are reproducible bit for bit.
#[inline]
pub(crate) fn dot(w: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len());
    let mut acc = [0.0f64; 4];
    let wc = w.chunks_exact(4);
    let xc = x.chunks_exact(4);
    let (wr, xr) = (wc.remainder(), xc.remainder());
    for (a, b) in wc.zip(xc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in wr.iter().zip(xr) {
        s += a * b;
    }
    s
}

/// [`dot`] of one weight row against four inputs at once; each result is
/// bitwise equal to the corresponding single `dot`.
#[inline]
fn dot4(w: &[f64], x: [&[f64]; 4]) -> [f64; 4] {
    let mut acc = [[0.0f64; 4]; 4];
    let body = w.len() / 4 * 4;
    for i in (0..body).step_by(4) {
        let a = &w[i..i + 4];
        for s in 0..4 {
            let b = &x[s][i..i + 4];
            acc[s][0] += a[0] * b[0];
            acc[s][1] += a[1] * b[1];
            acc[s][2] += a[2] * b[2];
            acc[s][3] += a[3] * b[3];
        }
    }
    let mut out = [0.0; 4];
    for s in 0..4 {
        let mut v = (acc[s][0] + acc[s][1]) + (acc[s][2] + acc[s][3]);
        for i in body..w.len() {
            v += w[i] * x[s][i];
        }
        out[s] = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity2() -> MlpNetwork {
        MlpNetwork::new(vec![2, 2], vec![vec![1.0, 0.0, 0.0, 1.0]], vec![vec![0.0, 0.0]]).unwrap()
    }

    #[test]
    fn identity_network_has_no_output_relu() {
        assert_eq!(identity2().infer(&[0.3, -0.2]).unwrap(), vec![0.3, -0.2]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let net = MlpNetwork::new(vec![3, 2], vec![vec![0.0; 6]], vec![vec![1.5, -2.0]]).unwrap();
        assert_eq!(net.infer(&[7.0, -1.0, 3.0]).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn hand_built_two_layer_trace() {
        let net = MlpNetwork::new(
            vec![2, 2, 1],
            vec![vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 1.0]],
            vec![vec![-0.5, 0.0], vec![0.0]],
        )
        .unwrap();
        // Scalar trace: h = relu([1 - 0.5, -1 + 0]) = [0.5, 0]; y = 0.5 + 0.
        let h0 = f64::max(1.0 * 1.0 + 0.0 * -1.0 - 0.5, 0.0);
        let h1 = f64::max(0.0 * 1.0 + 1.0 * -1.0 + 0.0, 0.0);
        let y = h0 + h1;
        assert_eq!(net.infer(&[1.0, -1.0]).unwrap(), vec![y]);
        assert_eq!(y, 0.5);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            identity2().infer(&[1.0]),
            Err(ReachError::Dimension { .. })
        ));
        assert!(MlpNetwork::new(vec![2, 2], vec![vec![1.0; 3]], vec![vec![0.0; 2]]).is_err());
    }

    #[test]
    fn mask_argmax_and_ties() {
        let l = LogitTensor::new(1, 1, 3, vec![0.1, 0.9, 0.3]).unwrap();
        assert_eq!(predict_mask(&l).classes, vec![1]);
        let l = LogitTensor::new(2, 2, 3, vec![0.5; 12]).unwrap();
        let mask = predict_mask(&l);
        assert_eq!(mask.classes, vec![0; 4]);
        assert_eq!(mask.ties, 4);
        let l = LogitTensor::new(2, 1, 2, vec![3.0, -1.0, -2.0, 5.0]).unwrap();
        assert_eq!(predict_mask(&l).classes, vec![0, 1]);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let net = MlpNetwork::random(&[5, 7, 3], 11).unwrap();
        let mut bytes = Vec::new();
        net.write_to(&mut bytes).unwrap();
        assert_eq!(MlpNetwork::from_bytes(&bytes).unwrap(), net);

        assert!(matches!(
            MlpNetwork::from_bytes(b""),
            Err(ReachError::MalformedHeader(_))
        ));
        // Header declares three weight layers but only two blocks follow.
        let two = MlpNetwork::random(&[2, 2, 2], 1).unwrap();
        let mut body = Vec::new();
        two.write_to(&mut body).unwrap();
        let payload = &body[body.iter().position(|&b| b == b'\n').unwrap() + 1..];
        let mut forged = b"MLP v1 3 2 2 2 2\n".to_vec();
        forged.extend_from_slice(payload);
        assert!(matches!(
            MlpNetwork::from_bytes(&forged),
            Err(ReachError::TruncatedPayload(_))
        ));
        assert!(matches!(
            MlpNetwork::from_bytes(b"MLP v1 2 3 4\n"),
            Err(ReachError::MalformedHeader(_))
        ));
    }

    #[test]
    fn batch_matches_single_sample_bitwise() {
        let net = MlpNetwork::random(&[13, 17, 9, 5], 3).unwrap();
        let inputs: Vec<Vec<f64>> = (0..37)
            .map(|i| (0..13).map(|k| ((i * 13 + k) as f64 * 0.37).sin()).collect())
            .collect();
        let batch = net.infer_batch(&inputs).unwrap();
        for (x, y) in inputs.iter().zip(&batch) {
            let single = net.infer(x).unwrap();
            assert!(single.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let threaded = pool.install(|| net.infer_batch(&inputs).unwrap());
        assert_eq!(threaded, batch);
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_constant_shift(
            logits in proptest::collection::vec(-5.0f64..5.0, 4 * 3),
            shift in -10.0f64..10.0,
            pixel in 0usize..4,
        ) {
            let base = LogitTensor::new(2, 2, 3, logits.clone()).unwrap();
            let mut shifted = logits;
            for v in &mut shifted[pixel * 3..pixel * 3 + 3] {
                *v += shift;
            }
            let shifted = LogitTensor::new(2, 2, 3, shifted).unwrap();
            let a = predict_mask(&base);
            let b = predict_mask(&shifted);
            for p in 0..4 {
                if p != pixel {
                    prop_assert_eq!(a.classes[p], b.classes[p]);
                }
            }
            // Rounding in the shift may reorder near-ties only.
            let mut sorted = base.pixel(pixel / 2, pixel % 2).to_vec();
            sorted.sort_by(f64::total_cmp);
            if sorted[2] - sorted[1] > 1e-9 {
                prop_assert_eq!(a.classes[pixel], b.classes[pixel]);
            }
        }

        #[test]
        fn first_layer_positive_homogeneity(seed in 0u64..1000, scale in 0.1f64..10.0) {
            let net = MlpNetwork::random(&[4, 6, 2], seed).unwrap();
            let layer = &net.layers()[0];
            let scaled = MlpNetwork::new(
                net.layer_dims().to_vec(),
                vec![
                    layer.weights.iter().map(|w| w * scale).collect(),
                    net.layers()[1].weights.clone(),
                ],
                vec![
                    layer.bias.iter().map(|b| b * scale).collect(),
                    net.layers()[1].bias.clone(),
                ],
            )
            .unwrap();
            let x = [0.3, -0.7, 0.2, 0.9];
            let h = net.first_layer_output(&x).unwrap();
            let hs = scaled.first_layer_output(&x).unwrap();
            for (a, b) in h.iter().zip(&hs) {
                prop_assert!((a * scale - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
