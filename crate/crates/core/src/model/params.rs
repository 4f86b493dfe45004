use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::receptive_field;
use super::Real;
use crate::error::{Error, Result};

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Arch {
    pub keypoints: usize,
    pub hidden: usize,
    pub width: usize,
    pub blocks: usize,
    pub outputs: usize,
    pub batch_norm: bool,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            keypoints: 20,
            hidden: 180,
            width: 3,
            blocks: 3,
            outputs: 4,
            batch_norm: true,
        }
    }
}

impl Arch {
    pub fn in_channels(&self) -> usize {
        3 * self.keypoints
    }

    /// Block `b` (0-based) uses dilation `2^b`.
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.blocks).map(|b| 1 << b).collect()
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self.width, &self.dilations())
    }

    pub fn validate(&self) -> Result<()> {
        if self.keypoints == 0 || self.hidden == 0 || self.width == 0 || self.blocks == 0 {
            return Err(Error::Config(
                "keypoints, hidden, width and blocks must all be positive".into(),
            ));
        }
        if self.outputs != 4 {
            return Err(Error::Config(format!(
                "the network predicts 4 indicator channels, not {}",
                self.outputs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvSlot {
    pub weight: usize,
    pub bias: usize,
    pub c_out: usize,
    pub c_in: usize,
    pub width: usize,
}

impl ConvSlot {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.width
    }

    pub fn w<'a, F: Real>(&self, values: &'a [F]) -> ArrayView2<'a, F> {
        ArrayView2::from_shape(
            (self.c_out, self.c_in * self.width),
            &values[self.weight..self.weight + self.weight_len()],
        )
        .expect("layout")
    }

    pub fn b<'a, F: Real>(&self, values: &'a [F]) -> ArrayView1<'a, F> {
        ArrayView1::from(&values[self.bias..self.bias + self.c_out])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BnSlot {
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BlockSlot {
    pub convs: [ConvSlot; 2],
    pub bns: [Option<BnSlot>; 2],
    pub proj: Option<ConvSlot>,
    pub dilation: usize,
}

/// Named tensor inside the flat parameter or buffer vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Buffers hold batch-norm running statistics and receive no gradient.
    pub buffer: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub blocks: Vec<BlockSlot>,
    pub head: ConvSlot,
    pub num_params: usize,
    pub num_buffers: usize,
}

impl Layout {
    fn new(arch: &Arch) -> Layout {
        let mut tensors = Vec::new();
        let mut params = 0;
        let mut buffers = 0;
        let mut add = |name: String, shape: Vec<usize>, buffer: bool| -> usize {
            let counter = if buffer { &mut buffers } else { &mut params };
            let offset = *counter;
            *counter += shape.iter().product::<usize>();
            tensors.push(TensorSpec {
                name,
                shape,
                offset,
                buffer,
            });
            offset
        };
        let conv = |add: &mut dyn FnMut(String, Vec<usize>, bool) -> usize,
                        prefix: String,
                        c_out: usize,
                        c_in: usize,
                        width: usize| ConvSlot {
            weight: add(format!("{prefix}.weight"), vec![c_out, c_in, width], false),
            bias: add(format!("{prefix}.bias"), vec![c_out], false),
            c_out,
            c_in,
            width,
        };
        let n = arch.hidden;
        let mut blocks = Vec::new();
        for (b, dilation) in arch.dilations().into_iter().enumerate() {
            let c_in = if b == 0 { arch.in_channels() } else { n };
            let mut convs = Vec::new();
            let mut bns = Vec::new();
            for j in 0..2 {
                let cin = if j == 0 { c_in } else { n };
                convs.push(conv(&mut add, format!("block{}.conv{}", b + 1, j + 1), n, cin, arch.width));
                bns.push(arch.batch_norm.then(|| {
                    let p = format!("block{}.bn{}", b + 1, j + 1);
                    BnSlot {
                        gamma: add(format!("{p}.gamma"), vec![n], false),
                        beta: add(format!("{p}.beta"), vec![n], false),
                        mean: add(format!("{p}.running_mean"), vec![n], true),
                        var: add(format!("{p}.running_var"), vec![n], true),
                        channels: n,
                    }
                }));
            }
            let proj = (c_in != n)
                .then(|| conv(&mut add, format!("block{}.proj", b + 1), n, c_in, 1));
            blocks.push(BlockSlot {
                convs: [convs[0], convs[1]],
                bns: [bns[0], bns[1]],
                proj,
                dilation,
            });
        }
        let head = conv(&mut add, "head".into(), arch.outputs, n, 1);
        Layout {
            tensors,
            blocks,
            head,
            num_params: params,
            num_buffers: buffers,
        }
    }
}

/// Network weights (`values`) and batch-norm running statistics (`buffers`)
/// in flat vectors with a named layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TcnParams<F> {
    arch: Arch,
    pub(crate) layout: Layout,
    pub values: Vec<F>,
    pub buffers: Vec<F>,
}

impl<F: Real> TcnParams<F> {
    /// All-zero weights, unit batch-norm scale and running variance.
    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut p = TcnParams {
            arch,
            values: vec![F::zero(); layout.num_params],
            buffers: vec![F::zero(); layout.num_buffers],
            layout,
        };
        for bn in p.layout.blocks.iter().flat_map(|b| b.bns.iter().flatten()) {
            p.values[bn.gamma..bn.gamma + bn.channels].fill(F::one());
            p.buffers[bn.var..bn.var + bn.channels].fill(F::one());
        }
        Ok(p)
    }

    /// Convolution weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let convs: Vec<ConvSlot> = p
            .layout
            .blocks
            .iter()
            .flat_map(|b| b.convs.iter().copied().chain(b.proj))
            .chain(std::iter::once(p.layout.head))
            .collect();
        for c in convs {
            let bound = 1.0 / ((c.c_in * c.width) as f64).sqrt();
            for i in (c.weight..c.weight + c.weight_len()).chain(c.bias..c.bias + c.c_out) {
                p.values[i] = F::from_f64(rng.random_range(-bound..bound)).unwrap();
            }
        }
        Ok(p)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<(&TensorSpec, &[F])> {
        let spec = self.layout.tensors.iter().find(|t| t.name == name)?;
        let src = if spec.buffer { &self.buffers } else { &self.values };
        Some((spec, &src[spec.offset..spec.offset + spec.len()]))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [F]> {
        let spec = self.layout.tensors.iter().find(|t| t.name == name)?.clone();
        let src = if spec.buffer { &mut self.buffers } else { &mut self.values };
        Some(&mut src[spec.offset..spec.offset + spec.len()])
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    /// Convert to another float precision.
    pub fn cast<G: Real>(&self) -> TcnParams<G> {
        let conv = |v: &F| G::from_f64(v.to_f64().unwrap()).unwrap();
        TcnParams {
            arch: self.arch,
            layout: self.layout.clone(),
            values: self.values.iter().map(conv).collect(),
            buffers: self.buffers.iter().map(conv).collect(),
        }
    }

    /// Hex SHA-256 of all values and buffers as little-endian `f32`.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.values.iter().chain(&self.buffers) {
            h.update(v.to_f32().unwrap().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_layout() {
        let arch = Arch::default();
        assert_eq!(arch.receptive_field(), 29);
        let p = TcnParams::<f32>::zeros(arch).unwrap();
        let names: Vec<&str> = p.tensors().iter().map(|t| t.name.as_str()).collect();
        assert!(names.contains(&"block1.proj.weight"));
        assert!(!names.contains(&"block2.proj.weight"));
        let (spec, w) = p.tensor("block2.conv1.weight").unwrap();
        assert_eq!(spec.shape, vec![180, 180, 3]);
        assert_eq!(w.len(), 180 * 180 * 3);
        assert_eq!(p.tensor("head.weight").unwrap().0.shape, vec![4, 180, 1]);
        assert!(p.tensor("block3.bn2.running_var").unwrap().1.iter().all(|&v| v == 1.0));
        let expected = (180 * 60 * 3 + 180)
            + (180 * 60 + 180)
            + 5 * (180 * 180 * 3 + 180)
            + 6 * 2 * 180
            + (4 * 180 + 4);
        assert_eq!(p.num_params(), expected);
    }

    #[test]
    fn init_bounds_and_checksum() {
        let arch = Arch { keypoints: 2, hidden: 4, ..Arch::default() };
        let a = TcnParams::<f32>::init(arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = TcnParams::<f32>::init(arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let c = TcnParams::<f32>::init(arch, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
        let bound = 1.0 / (18.0f32).sqrt();
        assert!(a.tensor("block1.conv1.weight").unwrap().1.iter().all(|v| v.abs() <= bound));
        assert_eq!(a.cast::<f64>().cast::<f32>(), a);
    }
}
