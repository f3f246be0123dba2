//! Plain multi-head self-attention over joints.

use super::basic::Linear;
use super::context::{Ctx, Init};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Var;

#[derive(Debug, Clone)]
pub struct Mhsa {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Mhsa {
    pub fn new<T: Real>(init: &mut Init<T>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("channels {dim} not divisible by {heads} heads")));
        }
        Ok(Mhsa {
            q: Linear::new(init, &format!("{name}.q"), dim, dim, true)?,
            k: Linear::new(init, &format!("{name}.k"), dim, dim, true)?,
            v: Linear::new(init, &format!("{name}.v"), dim, dim, true)?,
            o: Linear::new(init, &format!("{name}.o"), dim, dim, true)?,
            heads,
            dim,
        })
    }

    /// `x` is `[..., N, D]`; attention runs over the `N` axis.
    pub fn forward<T: Real>(&self, cx: &Ctx<T>, x: Var) -> Result<Var> {
        let tape = cx.tape;
        let rank = tape.shape(x).len();
        if rank < 2 {
            return Err(Error::invalid("mhsa", "input needs a token and a feature axis"));
        }
        let last = rank - 1;
        let q = self.q.forward(cx, x)?;
        let k = self.k.forward(cx, x)?;
        let v = self.v.forward(cx, x)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for p in 0..self.heads {
            let qp = tape.slice(q, last, p * dh, dh)?;
            let kp = tape.slice(k, last, p * dh, dh)?;
            let vp = tape.slice(v, last, p * dh, dh)?;
            let scores = tape.scale(tape.matmul_nt(qp, kp)?, scale)?;
            let attn = tape.softmax(scores, last)?;
            outs.push(tape.matmul(attn, vp)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, last)? };
        self.o.forward(cx, cat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::context::ParamSet;
    use crate::rng::{stream, Stream};
    use crate::tensor::{grad_check, GradCheckOptions, Tape, Tensor};

    fn lin(w: &Tensor<f64>, b: &Tensor<f64>, x: &[f64], n: usize, d: usize) -> Vec<f64> {
        let mut y = vec![0.0; n * d];
        for i in 0..n {
            for o in 0..d {
                y[i * d + o] = b.data()[o] + (0..d).map(|c| w.data()[o * d + c] * x[i * d + c]).sum::<f64>();
            }
        }
        y
    }

    /// Scalar-loop multi-head attention.
    fn oracle(m: &Mhsa, p: &ParamSet<f64>, x: &[f64], n: usize, d: usize) -> Vec<f64> {
        let ap = |l: &Linear, x: &[f64]| lin(p.get(l.weight), p.get(l.bias.unwrap()), x, n, d);
        let (q, k, v) = (ap(&m.q, x), ap(&m.k, x), ap(&m.v, x));
        let dh = d / m.heads;
        let mut cat = vec![0.0; n * d];
        for h in 0..m.heads {
            for i in 0..n {
                let e: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..dh).map(|c| q[i * d + h * dh + c] * k[j * d + h * dh + c]).sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = e.iter().map(|x| (x - mx).exp()).collect();
                let tot: f64 = w.iter().sum();
                for j in 0..n {
                    for c in 0..dh {
                        cat[i * d + h * dh + c] += w[j] / tot * v[j * d + h * dh + c];
                    }
                }
            }
        }
        ap(&m.o, &cat)
    }

    #[test]
    fn matches_scalar_oracle() {
        let (n, d) = (16, 64);
        let mut init = Init::<f64>::new(11);
        let m = Mhsa::new(&mut init, "a", d, 4).unwrap();
        let params = init.finish();
        let x = Tensor::<f64>::uniform(&[n, d], -1.0, 1.0, &mut stream(5, Stream::Synth, 0));
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &params);
        let y = m.forward(&cx, tape.constant(x.clone())).unwrap();
        let want = oracle(&m, &params, x.data(), n, d);
        for (a, b) in tape.value(y).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn single_token_is_projected_value() {
        let d = 8;
        let mut init = Init::<f64>::new(2);
        let m = Mhsa::new(&mut init, "a", d, 2).unwrap();
        let params = init.finish();
        let x = Tensor::<f64>::uniform(&[1, d], -1.0, 1.0, &mut stream(1, Stream::Synth, 0));
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &params);
        let y = m.forward(&cx, tape.constant(x.clone())).unwrap();
        let v = lin(params.get(m.v.weight), params.get(m.v.bias.unwrap()), x.data(), 1, d);
        let want = lin(params.get(m.o.weight), params.get(m.o.bias.unwrap()), &v, 1, d);
        for (a, b) in tape.value(y).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut init = Init::<f64>::new(0);
        assert!(Mhsa::new(&mut init, "a", 10, 4).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (n, d) = (4, 8);
        let mut init = Init::<f64>::new(4);
        let m = Mhsa::new(&mut init, "a", d, 2).unwrap();
        let params = init.finish();
        let mut inputs = params.values().to_vec();
        inputs.push(Tensor::uniform(&[2, n, d], -1.0, 1.0, &mut stream(9, Stream::Synth, 0)));
        let report = grad_check(
            |tape, vars| {
                let (x, ps) = vars.split_last().unwrap();
                let cx = Ctx::from_vars(tape, ps.to_vec());
                let y = m.forward(&cx, *x)?;
                let y2 = tape.mul(y, y)?;
                tape.sum(y2)
            },
            &inputs,
            &GradCheckOptions {
                max_coords: 200,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
