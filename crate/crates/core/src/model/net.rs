use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};

use super::params::{BnSlot, ConvSlot, TcnParams};
use super::tensor::{affine, col2im, im2col, slice_center, unslice_center};
use super::Real;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

/// Forward-pass behavior of batch normalization and dropout.
pub enum Mode<'a> {
    /// Running statistics, no dropout.
    Eval,
    /// Batch statistics and inverted dropout drawn from `rng`.
    Train {
        dropout: f64,
        rng: &'a mut dyn RngCore,
    },
}

/// Per-channel batch statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<F> {
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

struct LayerCache<F> {
    cols: Array2<F>,
    xhat: Array2<F>,
    inv_std: Array1<F>,
    /// Activations after ReLU, before dropout.
    relu: Array2<F>,
    drop: Option<Array2<F>>,
}

struct BlockCache<F> {
    t_in: usize,
    layers: Vec<LayerCache<F>>,
    /// Center-sliced block input feeding the residual path.
    residual: Array2<F>,
}

pub(crate) struct Cache<F> {
    batch: usize,
    train: bool,
    blocks: Vec<BlockCache<F>>,
    head_in: Array2<F>,
}

fn f<F: Real>(v: f64) -> F {
    F::from_f64(v).unwrap()
}

/// Run the network over `batch` sequences stored as `[3K, batch * T]`.
/// Returns `[4, batch * (T - s + 1)]`.
pub fn forward<F: Real>(
    params: &TcnParams<F>,
    x: ArrayView2<F>,
    batch: usize,
    mode: Mode<'_>,
) -> Result<Array2<F>> {
    forward_impl(params, x, batch, mode, false).map(|(y, _, _)| y)
}

pub(crate) fn check_input<F: Real>(params: &TcnParams<F>, x: &ArrayView2<F>, batch: usize) -> Result<usize> {
    let arch = params.arch();
    if x.nrows() != arch.in_channels() {
        return Err(Error::InvalidInput(format!(
            "input has {} feature channels, the model expects 3K = {}",
            x.nrows(),
            arch.in_channels()
        )));
    }
    if batch == 0 || x.ncols() % batch != 0 {
        return Err(Error::InvalidInput(format!(
            "{} columns do not split into {batch} sequences",
            x.ncols()
        )));
    }
    let t = x.ncols() / batch;
    let s = arch.receptive_field();
    if t < s {
        return Err(Error::SequenceTooShort { required: s, actual: t });
    }
    Ok(t)
}

#[allow(clippy::type_complexity)]
pub(crate) fn forward_impl<F: Real>(
    params: &TcnParams<F>,
    x: ArrayView2<F>,
    batch: usize,
    mut mode: Mode<'_>,
    keep: bool,
) -> Result<(Array2<F>, Option<Cache<F>>, Vec<BatchStats<F>>)> {
    let mut t = check_input(params, &x, batch)?;
    let width = params.arch().width;
    let v = &params.values;
    let train = matches!(mode, Mode::Train { .. });
    let mut stats = Vec::new();
    let mut blocks = Vec::new();
    let mut h = x.as_standard_layout().into_owned();

    for block in &params.layout.blocks {
        let d = block.dilation;
        let t_in = t;
        let mut layers = Vec::with_capacity(2);
        let mut a = h.clone();
        for j in 0..2 {
            let cols = im2col(a.view(), batch, width, d);
            let z = affine(block.convs[j].w(v), block.convs[j].b(v), &cols);
            let (y, xhat, inv_std) = match &block.bns[j] {
                Some(bn) => batch_norm(params, bn, z, train, &mut stats),
                None => {
                    let n = z.nrows();
                    (z.clone(), z, Array1::ones(n))
                }
            };
            let relu = y.mapv(|e| if e > F::zero() { e } else { F::zero() });
            let (out, drop) = match &mut mode {
                Mode::Train { dropout, rng } if *dropout > 0.0 => {
                    let p = *dropout;
                    let scale = f::<F>(1.0 / (1.0 - p));
                    let threshold = (p * 4_294_967_296.0).min(u32::MAX as f64) as u32;
                    let mask = Array2::from_shape_fn(relu.dim(), |_| {
                        if rng.next_u32() < threshold {
                            F::zero()
                        } else {
                            scale
                        }
                    });
                    (&relu * &mask, Some(mask))
                }
                _ => (relu.clone(), None),
            };
            t -= d * (width - 1);
            if keep {
                layers.push(LayerCache {
                    cols,
                    xhat,
                    inv_std,
                    relu,
                    drop,
                });
            }
            a = out;
        }
        let trim = d * (width - 1);
        let sliced = slice_center(h.view(), batch, trim);
        let residual = match &block.proj {
            Some(p) => affine(p.w(v), p.b(v), &sliced),
            None => sliced.clone(),
        };
        h = a + &residual;
        if keep {
            blocks.push(BlockCache {
                t_in,
                layers,
                residual: sliced,
            });
        }
    }
    let head = &params.layout.head;
    let y = affine(head.w(v), head.b(v), &h);
    let cache = keep.then(|| Cache {
        batch,
        train,
        blocks,
        head_in: h,
    });
    Ok((y, cache, stats))
}

#[allow(clippy::type_complexity)]
fn batch_norm<F: Real>(
    params: &TcnParams<F>,
    bn: &BnSlot,
    z: Array2<F>,
    train: bool,
    stats: &mut Vec<BatchStats<F>>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let c = bn.channels;
    let (mean, var) = if train {
        let mean = z.mean_axis(Axis(1)).unwrap();
        let centered = &z - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|e| e * e).mean_axis(Axis(1)).unwrap();
        stats.push(BatchStats {
            mean: mean.clone(),
            var: var.clone(),
        });
        (mean, var)
    } else {
        (
            Array1::from(params.buffers[bn.mean..bn.mean + c].to_vec()),
            Array1::from(params.buffers[bn.var..bn.var + c].to_vec()),
        )
    };
    let inv_std = var.mapv(|e| F::one() / (e + f::<F>(BN_EPS)).sqrt());
    let xhat = (z - &mean.insert_axis(Axis(1))) * &inv_std.view().insert_axis(Axis(1));
    let gamma = Array1::from(params.values[bn.gamma..bn.gamma + c].to_vec());
    let beta = Array1::from(params.values[bn.beta..bn.beta + c].to_vec());
    let y = &xhat * &gamma.insert_axis(Axis(1)) + &beta.insert_axis(Axis(1));
    (y, xhat, inv_std)
}

fn conv_grads<F: Real>(
    slot: &ConvSlot,
    params: &[F],
    dz: &Array2<F>,
    cols: &Array2<F>,
    grads: &mut [F],
) -> Array2<F> {
    let dw = dz.dot(&cols.t());
    for (g, d) in grads[slot.weight..slot.weight + slot.weight_len()]
        .iter_mut()
        .zip(dw.iter())
    {
        *g += *d;
    }
    for (g, d) in grads[slot.bias..slot.bias + slot.c_out]
        .iter_mut()
        .zip(dz.sum_axis(Axis(1)).iter())
    {
        *g += *d;
    }
    slot.w(params).t().dot(dz)
}

/// Gradient of all parameters given the gradient of the network output.
pub(crate) fn backward<F: Real>(
    params: &TcnParams<F>,
    cache: &Cache<F>,
    dy: &Array2<F>,
) -> Vec<F> {
    let v = &params.values;
    let width = params.arch().width;
    let batch = cache.batch;
    let mut grads = vec![F::zero(); v.len()];
    let head = &params.layout.head;
    let mut dh = conv_grads(head, v, dy, &cache.head_in, &mut grads);

    for (block, bc) in params.layout.blocks.iter().zip(&cache.blocks).rev() {
        let d = block.dilation;
        let trim = d * (width - 1);
        // Residual path.
        let dres = match &block.proj {
            Some(p) => conv_grads(p, v, &dh, &bc.residual, &mut grads),
            None => dh.clone(),
        };
        let mut dx = unslice_center(dres.view(), batch, trim);
        // Convolution branch, last layer first.
        let mut da = dh;
        let lens = [bc.t_in, bc.t_in - trim];
        for j in (0..2).rev() {
            let lc = &bc.layers[j];
            if let Some(mask) = &lc.drop {
                da *= mask;
            }
            da.zip_mut_with(&lc.relu, |g, &r| {
                if r <= F::zero() {
                    *g = F::zero();
                }
            });
            let dz = match &block.bns[j] {
                Some(bn) => bn_backward(bn, v, &da, lc, cache.train, &mut grads),
                None => da,
            };
            let dcols = conv_grads(&block.convs[j], v, &dz, &lc.cols, &mut grads);
            let c_in = block.convs[j].c_in;
            da = col2im(dcols.view(), c_in, batch, lens[j], width, d);
        }
        dx += &da;
        dh = dx;
    }
    grads
}

fn bn_backward<F: Real>(
    bn: &BnSlot,
    v: &[F],
    dy: &Array2<F>,
    lc: &LayerCache<F>,
    train: bool,
    grads: &mut [F],
) -> Array2<F> {
    let c = bn.channels;
    let sum_dy = dy.sum_axis(Axis(1));
    let sum_dy_xhat = (dy * &lc.xhat).sum_axis(Axis(1));
    for i in 0..c {
        grads[bn.gamma + i] += sum_dy_xhat[i];
        grads[bn.beta + i] += sum_dy[i];
    }
    let gamma = Array1::from(v[bn.gamma..bn.gamma + c].to_vec());
    let scale = &gamma * &lc.inv_std;
    if !train {
        return dy * &scale.insert_axis(Axis(1));
    }
    let n = f::<F>(dy.ncols() as f64);
    let mean_dy = (sum_dy / n).insert_axis(Axis(1));
    let mean_dy_xhat = (sum_dy_xhat / n).insert_axis(Axis(1));
    let mut dz = dy - &mean_dy - &(&lc.xhat * &mean_dy_xhat);
    dz *= &scale.insert_axis(Axis(1));
    dz
}

/// Smooth-L1 loss of one residual.
pub fn huber<F: Real>(e: F, delta: F) -> F {
    let a = e.abs();
    if a <= delta {
        f::<F>(0.5) * e * e
    } else {
        delta * (a - f::<F>(0.5) * delta)
    }
}

fn huber_grad<F: Real>(e: F, delta: F) -> F {
    if e.abs() <= delta {
        e
    } else {
        delta * e.signum()
    }
}

/// Loss, parameter gradients and batch-norm statistics of one batch.
pub struct Gradients<F> {
    pub loss: F,
    pub grads: Vec<F>,
    pub stats: Vec<BatchStats<F>>,
}

/// Mean Huber loss of the network outputs against `targets` (same shape as
/// the output) and its gradient.
pub fn loss_and_grads<F: Real>(
    params: &TcnParams<F>,
    x: ArrayView2<F>,
    batch: usize,
    targets: ArrayView2<F>,
    delta: F,
    mode: Mode<'_>,
) -> Result<Gradients<F>> {
    let (y, cache, stats) = forward_impl(params, x, batch, mode, true)?;
    if y.dim() != targets.dim() {
        return Err(Error::InvalidInput(format!(
            "targets have shape {:?}, network output {:?}",
            targets.dim(),
            y.dim()
        )));
    }
    let n = f::<F>(y.len() as f64);
    let err = &y - &targets;
    let loss = err.iter().fold(F::zero(), |acc, &e| acc + huber(e, delta)) / n;
    let dy = err.mapv(|e| huber_grad(e, delta) / n);
    let grads = backward(params, &cache.expect("cache kept"), &dy);
    Ok(Gradients { loss, grads, stats })
}

impl<F: Real> TcnParams<F> {
    /// Blend batch statistics into the running statistics.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<F>], momentum: f64) {
        let m = f::<F>(momentum);
        let slots: Vec<BnSlot> = self
            .layout
            .blocks
            .iter()
            .flat_map(|b| b.bns.iter().flatten().copied())
            .collect();
        for (bn, st) in slots.iter().zip(stats) {
            for i in 0..bn.channels {
                let rm = &mut self.buffers[bn.mean + i];
                *rm = (F::one() - m) * *rm + m * st.mean[i];
                let rv = &mut self.buffers[bn.var + i];
                *rv = (F::one() - m) * *rv + m * st.var[i];
            }
        }
    }
}

/// Set the running statistics to the batch statistics of `x`, so that eval
/// mode reproduces a dropout-free train-mode pass over the same batch.
pub fn calibrate_bn<F: Real>(params: &mut TcnParams<F>, x: ArrayView2<F>, batch: usize) -> Result<()> {
    // Dropout is off, so the generator is never consulted.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let (_, _, stats) = forward_impl(
        params,
        x,
        batch,
        Mode::Train {
            dropout: 0.0,
            rng: &mut rng,
        },
        false,
    )?;
    params.update_running_stats(&stats, 1.0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Arch;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> Arch {
        Arch {
            keypoints: 2,
            hidden: 4,
            ..Arch::default()
        }
    }

    fn random_params(seed: u64) -> TcnParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = TcnParams::<f64>::init(tiny_arch(), &mut rng).unwrap();
        for v in p.values.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        for (i, b) in p.buffers.iter_mut().enumerate() {
            *b = if (i / 4) % 2 == 0 {
                rng.random_range(-0.5..0.5)
            } else {
                rng.random_range(0.5..2.0)
            };
        }
        p
    }

    fn random_input(c: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((c, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn output_length() {
        let p = random_params(1);
        let x = random_input(6, 29, 2);
        let y = forward(&p, x.view(), 1, Mode::Eval).unwrap();
        assert_eq!(y.dim(), (4, 1));
        let x = random_input(6, 3 * 40, 2);
        let y = forward(&p, x.view(), 3, Mode::Eval).unwrap();
        assert_eq!(y.dim(), (4, 3 * 12));
        let short = random_input(6, 28, 2);
        assert!(matches!(
            forward(&p, short.view(), 1, Mode::Eval),
            Err(Error::SequenceTooShort { required: 29, actual: 28 })
        ));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut p = TcnParams::<f64>::zeros(tiny_arch()).unwrap();
        p.values.fill(0.0);
        let x = Array2::zeros((6, 29));
        let y = forward(&p, x.view(), 1, Mode::Eval).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn huber_regimes() {
        assert_eq!(huber(0.0, 1.0), 0.0);
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(2.0, 1.0), 1.5);
        assert_eq!(huber(-2.0, 1.0), 1.5);
    }

    #[test]
    fn eval_is_deterministic_and_dropout_free() {
        let p = random_params(3);
        let x = random_input(6, 2 * 35, 4);
        let a = forward(&p, x.view(), 2, Mode::Eval).unwrap();
        let b = forward(&p, x.view(), 2, Mode::Eval).unwrap();
        assert_eq!(a, b);
        // A train pass with dropout 0 after calibration reproduces eval mode,
        // a pass with dropout does not.
        let mut q = p.clone();
        calibrate_bn(&mut q, x.view(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dropped = forward(&q, x.view(), 2, Mode::Train { dropout: 0.5, rng: &mut rng }).unwrap();
        let evald = forward(&q, x.view(), 2, Mode::Eval).unwrap();
        assert!(dropped.iter().zip(evald.iter()).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn bn_train_eval_consistency() {
        let p = random_params(7);
        let x = random_input(6, 8 * 29, 8).mapv(|v| 40.0 * v + 3.0);
        let mut q = p.clone();
        calibrate_bn(&mut q, x.view(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let train = forward(&q, x.view(), 8, Mode::Train { dropout: 0.0, rng: &mut rng }).unwrap();
        let eval = forward(&q, x.view(), 8, Mode::Eval).unwrap();
        for (a, b) in train.iter().zip(eval.iter()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn locality() {
        let p = random_params(11);
        let t = 45;
        let x = random_input(6, t, 12);
        let base = forward(&p, x.view(), 1, Mode::Eval).unwrap();
        let t0 = 6;
        for u in 0..t {
            let mut x2 = x.clone();
            for c in 0..6 {
                x2[[c, u]] += 5.0;
            }
            let y = forward(&p, x2.view(), 1, Mode::Eval).unwrap();
            let changed = (0..4).any(|o| y[[o, t0]] != base[[o, t0]]);
            assert_eq!(changed, (t0..t0 + 29).contains(&u), "input frame {u}");
        }
    }

    pub(crate) fn max_relative_error(p: &TcnParams<f64>, seed: u64) -> (f64, Vec<(String, f64)>) {
        let batch = 3;
        let x = random_input(6, batch * 31, seed);
        // Targets far from the outputs exercise the linear Huber regime,
        // targets near them the quadratic one.
        let targets = Array2::from_shape_fn((4, batch * 3), |(o, c)| match (o + c) % 3 {
            0 => 4.0,
            1 => -3.5,
            _ => 0.0,
        });
        let run = |q: &TcnParams<f64>| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            loss_and_grads(q, x.view(), batch, targets.view(), 1.0, Mode::Train { dropout: 0.2, rng: &mut rng })
                .unwrap()
        };
        let g = run(p);
        let eps = 1e-6;
        let mut worst = 0.0f64;
        let mut per_tensor = Vec::new();
        for spec in p.tensors().iter().filter(|s| !s.buffer) {
            let mut tensor_worst = 0.0f64;
            for i in spec.offset..spec.offset + spec.len() {
                let mut plus = p.clone();
                plus.values[i] += eps;
                let mut minus = p.clone();
                minus.values[i] -= eps;
                let numeric = (run(&plus).loss - run(&minus).loss) / (2.0 * eps);
                let analytic = g.grads[i];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                tensor_worst = tensor_worst.max(err);
            }
            worst = worst.max(tensor_worst);
            per_tensor.push((spec.name.clone(), tensor_worst));
        }
        (worst, per_tensor)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = random_params(21);
        let (worst, per_tensor) = max_relative_error(&p, 22);
        assert!(worst < 1e-4, "{per_tensor:?}");
    }

    #[test]
    fn eval_mode_gradients() {
        let p = random_params(31);
        let x = random_input(6, 2 * 29, 32);
        let targets = Array2::from_shape_fn((4, 2), |(o, c)| (o as f64 - c as f64) * 0.7);
        let g = loss_and_grads(&p, x.view(), 2, targets.view(), 1.0, Mode::Eval).unwrap();
        let eps = 1e-6;
        for i in (0..p.values.len()).step_by(7) {
            let mut plus = p.clone();
            plus.values[i] += eps;
            let mut minus = p.clone();
            minus.values[i] -= eps;
            let lp = loss_and_grads(&plus, x.view(), 2, targets.view(), 1.0, Mode::Eval).unwrap().loss;
            let lm = loss_and_grads(&minus, x.view(), 2, targets.view(), 1.0, Mode::Eval).unwrap().loss;
            let numeric = (lp - lm) / (2.0 * eps);
            let err = (numeric - g.grads[i]).abs() / numeric.abs().max(g.grads[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: {numeric} vs {}", g.grads[i]);
        }
    }
}
