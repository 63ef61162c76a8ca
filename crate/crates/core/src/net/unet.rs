use super::ops::{
    concat_channels, conv3d, conv3d_backward, maxpool3d, maxpool3d_backward, pointwise, pointwise_backward,
    relu_backward_inplace, relu_inplace, sigmoid, split_channels, upconv3d, upconv3d_backward,
};
use super::scalar::FlushDenormals;
use super::{NetConfig, Params, Real, Tensor5};
use crate::error::{shape_err, Error, Result};

struct EncTape<T> {
    input: Tensor5<T>,
    a1: Tensor5<T>,
    a2: Tensor5<T>,
    argmax: Vec<u32>,
}

struct DecTape<T> {
    up_in: Tensor5<T>,
    cat: Tensor5<T>,
    d1: Tensor5<T>,
    d2: Tensor5<T>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct Tape<T> {
    enc: Vec<EncTape<T>>,
    bott_in: Tensor5<T>,
    b1: Tensor5<T>,
    b2: Tensor5<T>,
    /// Indexed by level, finest first.
    dec: Vec<DecTape<T>>,
    probs: Tensor5<T>,
}

impl<T: Real> Tape<T> {
    pub fn probs(&self) -> &Tensor5<T> {
        &self.probs
    }

    /// ReLU on/off pattern and max-pool winners; the loss is smooth while both stay fixed.
    pub fn activation_pattern(&self) -> (Vec<bool>, Vec<u32>) {
        let mut relu = Vec::new();
        let mut arg = Vec::new();
        let mut push = |t: &Tensor5<T>| relu.extend(t.data().iter().map(|&v| v > T::zero()));
        for e in &self.enc {
            push(&e.a1);
            push(&e.a2);
        }
        push(&self.b1);
        push(&self.b2);
        for d in &self.dec {
            push(&d.d1);
            push(&d.d2);
        }
        for e in &self.enc {
            arg.extend_from_slice(&e.argmax);
        }
        (relu, arg)
    }
}

/// A configured network and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet<T> {
    pub config: NetConfig,
    pub params: Params<T>,
}

fn conv_relu<T: Real>(x: &Tensor5<T>, params: &Params<T>, idx: usize) -> Result<Tensor5<T>> {
    let mut y = conv3d(x, &params.entries[idx].data, &params.entries[idx + 1].data)?;
    relu_inplace(&mut y);
    Ok(y)
}

fn pair_mut<T>(grads: &mut Params<T>, idx: usize) -> (&mut [T], &mut [T]) {
    let (a, b) = grads.entries.split_at_mut(idx + 1);
    (&mut a[idx].data, &mut b[0].data)
}

fn conv_relu_back<T: Real>(
    x: &Tensor5<T>,
    out: &Tensor5<T>,
    mut g: Tensor5<T>,
    params: &Params<T>,
    grads: &mut Params<T>,
    idx: usize,
    need_dx: bool,
) -> Result<Option<Tensor5<T>>> {
    relu_backward_inplace(out, &mut g);
    let (dw, db) = pair_mut(grads, idx);
    conv3d_backward(x, &params.entries[idx].data, &g, dw, db, need_dx)
}

impl<T: Real> UNet<T> {
    pub fn new(config: NetConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        params.check_against(&config).map_err(Error::Shape)?;
        Ok(Self { config, params })
    }

    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, seed);
        Ok(Self { config, params })
    }

    fn n_levels(&self) -> usize {
        self.config.levels.len()
    }

    fn enc_idx(&self, i: usize) -> usize {
        4 * i
    }

    fn bott_idx(&self) -> usize {
        4 * self.n_levels()
    }

    fn dec_idx(&self, i: usize) -> usize {
        4 * self.n_levels() + 4 + 6 * (self.n_levels() - 1 - i)
    }

    fn head_idx(&self) -> usize {
        10 * self.n_levels() + 4
    }

    pub fn forward(&self, x: &Tensor5<T>) -> Result<Tensor5<T>> {
        Ok(self.forward_tape(x)?.probs)
    }

    pub fn forward_tape(&self, x: &Tensor5<T>) -> Result<Tape<T>> {
        let _flush = FlushDenormals::new();
        if x.channels() != self.config.in_channels {
            return shape_err(format!(
                "net expects {} input channels, got {}",
                self.config.in_channels,
                x.channels()
            ));
        }
        self.config.check_edge(x.spatial())?;
        let p = &self.params;
        let mut enc = Vec::with_capacity(self.n_levels());
        let mut cur = x.clone();
        for i in 0..self.n_levels() {
            let a1 = conv_relu(&cur, p, self.enc_idx(i))?;
            let a2 = conv_relu(&a1, p, self.enc_idx(i) + 2)?;
            let (pooled, argmax) = maxpool3d(&a2)?;
            enc.push(EncTape {
                input: std::mem::replace(&mut cur, pooled),
                a1,
                a2,
                argmax,
            });
        }
        let b1 = conv_relu(&cur, p, self.bott_idx())?;
        let b2 = conv_relu(&b1, p, self.bott_idx() + 2)?;
        let mut up_in = b2.clone();
        let mut dec: Vec<DecTape<T>> = Vec::with_capacity(self.n_levels());
        for i in (0..self.n_levels()).rev() {
            let di = self.dec_idx(i);
            let up = upconv3d(&up_in, &p.entries[di].data, &p.entries[di + 1].data)?;
            let cat = concat_channels(&enc[i].a2, &up)?;
            let d1 = conv_relu(&cat, p, di + 2)?;
            let d2 = conv_relu(&d1, p, di + 4)?;
            let next = d2.clone();
            dec.push(DecTape {
                up_in: std::mem::replace(&mut up_in, next),
                cat,
                d1,
                d2,
            });
        }
        dec.reverse();
        let hi = self.head_idx();
        let logits = pointwise(&dec[0].d2, &p.entries[hi].data, &p.entries[hi + 1].data)?;
        let probs = logits.map(sigmoid);
        Ok(Tape {
            enc,
            bott_in: cur,
            b1,
            b2,
            dec,
            probs,
        })
    }

    /// Parameter gradients given `∂L/∂probs`.
    pub fn backward(&self, tape: &Tape<T>, dprobs: &Tensor5<T>) -> Result<Params<T>> {
        let _flush = FlushDenormals::new();
        if dprobs.shape() != tape.probs.shape() {
            return shape_err(format!(
                "output gradient {:?} does not match output {:?}",
                dprobs.shape(),
                tape.probs.shape()
            ));
        }
        let p = &self.params;
        let mut grads = Params::zeros(&self.config);

        let mut dlogit = dprobs.clone();
        for (g, &pr) in dlogit.data_mut().iter_mut().zip(tape.probs.data()) {
            *g = *g * pr * (T::one() - pr);
        }
        let hi = self.head_idx();
        let mut g = {
            let (dw, db) = pair_mut(&mut grads, hi);
            pointwise_backward(&tape.dec[0].d2, &p.entries[hi].data, &dlogit, dw, db)
        };

        let mut dskip = Vec::with_capacity(self.n_levels());
        for i in 0..self.n_levels() {
            let d = &tape.dec[i];
            let di = self.dec_idx(i);
            let g1 = conv_relu_back(&d.d1, &d.d2, g, p, &mut grads, di + 4, true)?.unwrap();
            let gcat = conv_relu_back(&d.cat, &d.d1, g1, p, &mut grads, di + 2, true)?.unwrap();
            let w = self.config.levels[i];
            let (gs, gu) = split_channels(&gcat, w);
            dskip.push(gs);
            let (dw, db) = pair_mut(&mut grads, di);
            g = upconv3d_backward(&d.up_in, &p.entries[di].data, &gu, dw, db);
        }

        let bi = self.bott_idx();
        let g1 = conv_relu_back(&tape.b1, &tape.b2, g, p, &mut grads, bi + 2, true)?.unwrap();
        g = conv_relu_back(&tape.bott_in, &tape.b1, g1, p, &mut grads, bi, true)?.unwrap();

        for i in (0..self.n_levels()).rev() {
            let e = &tape.enc[i];
            let mut ga2 = maxpool3d_backward(e.a2.shape(), &e.argmax, &g);
            for (a, &s) in ga2.data_mut().iter_mut().zip(dskip[i].data()) {
                *a = *a + s;
            }
            let ei = self.enc_idx(i);
            let g1 = conv_relu_back(&e.a1, &e.a2, ga2, p, &mut grads, ei + 2, true)?.unwrap();
            match conv_relu_back(&e.input, &e.a1, g1, p, &mut grads, ei, i > 0)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(grads)
    }
}

/// Probabilities for a batch of patches.
pub fn unet_forward<T: Real>(x: &Tensor5<T>, params: &Params<T>, config: &NetConfig) -> Result<Tensor5<T>> {
    config.validate()?;
    params.check_against(config).map_err(Error::Shape)?;
    let net = UNet {
        config: config.clone(),
        params: params.clone(),
    };
    net.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(shape: [usize; 5], seed: u64) -> Tensor5<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor5::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn default_output_shape_and_range() {
        let net = UNet::<f32>::init(NetConfig::default(), 0).unwrap();
        let x = random_input([1, 2, 32, 32, 32], 1);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), [1, 1, 32, 32, 32]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(y, net.forward(&x).unwrap());
        assert_eq!(y, unet_forward(&x, &net.params, &net.config).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = UNet::<f32>::init(NetConfig::tiny(), 0).unwrap();
        assert!(net.forward(&Tensor5::zeros([1, 2, 6, 8, 8])).is_err());
        assert!(net.forward(&Tensor5::zeros([1, 3, 8, 8, 8])).is_err());
    }

    #[test]
    fn batch_equivariance() {
        let net = UNet::<f32>::init(NetConfig::tiny(), 5).unwrap();
        let a = random_input([1, 2, 8, 8, 8], 2);
        let b = random_input([1, 2, 8, 8, 8], 3);
        let both = net.forward(&Tensor5::stack(&[a.clone(), b.clone()]).unwrap()).unwrap();
        assert_eq!(both.select(0), net.forward(&a).unwrap());
        assert_eq!(both.select(1), net.forward(&b).unwrap());
    }

    #[test]
    fn gradients_split_over_batch() {
        let net = UNet::<f64>::init(NetConfig::tiny(), 6).unwrap();
        let a = random_input([1, 2, 8, 8, 8], 4).cast::<f64>();
        let b = random_input([1, 2, 8, 8, 8], 5).cast::<f64>();
        let ones = Tensor5::from_vec([1, 1, 8, 8, 8], vec![1.0; 512]).unwrap();
        let ga = net.backward(&net.forward_tape(&a).unwrap(), &ones).unwrap();
        let gb = net.backward(&net.forward_tape(&b).unwrap(), &ones).unwrap();
        let both = Tensor5::stack(&[a, b]).unwrap();
        let ones2 = Tensor5::stack(&[ones.clone(), ones]).unwrap();
        let g = net.backward(&net.forward_tape(&both).unwrap(), &ones2).unwrap();
        for ((x, y), z) in g.entries.iter().zip(&ga.entries).zip(&gb.entries) {
            for i in 0..x.data.len() {
                assert!((x.data[i] - y.data[i] - z.data[i]).abs() < 1e-9, "{}", x.name);
            }
        }
    }
}
