//! Central finite-difference gradient checking.

use rand::seq::index::sample;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Upper bound on the number of checked coordinates; sampled uniformly
    /// without replacement when the inputs have more.
    pub max_coords: usize,
    pub seed: u64,
    /// Denominator floor of the relative error. Below it the comparison is
    /// effectively absolute, so round-off in vanishing gradients cannot fail
    /// the check.
    pub floor: f64,
    /// Multiply every analytic gradient by this factor before comparing.
    /// Exists to prove the harness catches a broken backward pass.
    pub corrupt_analytic: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            tolerance: 1e-5,
            max_coords: usize::MAX,
            seed: 0,
            floor: 1e-3,
            corrupt_analytic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub non_finite: bool,
    pub passed: bool,
}

/// Compare the tape's gradient of the scalar `f(inputs)` against central
/// differences, coordinate by coordinate.
///
/// The relative error is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::with_finite_checks(false);
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = tape.value(out).item()?;
        Ok(v)
    };

    let tape = Tape::with_finite_checks(false);
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::invalid("grad_check", "function must return a scalar"));
    }
    let failed = |non_finite| GradCheckReport {
        max_rel_error: f64::INFINITY,
        worst: None,
        checked: 0,
        non_finite,
        passed: false,
    };
    if !tape.value(out).is_finite() {
        return Ok(failed(true));
    }
    tape.backward(out)?;
    let scale = opts.corrupt_analytic.unwrap_or(1.0);
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match tape.grad(v) {
            Some(g) => g.data().iter().map(|x| x * scale).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    let chosen: Vec<(usize, usize)> = if coords.len() > opts.max_coords {
        let mut rng = stream(opts.seed, Stream::Sampling, 0);
        let mut picked: Vec<usize> = sample(&mut rng, coords.len(), opts.max_coords).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|k| coords[k]).collect()
    } else {
        coords
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for &(i, j) in &chosen {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + opts.step;
        let plus = eval(&work)?;
        work[i].data_mut()[j] = orig - opts.step;
        let minus = eval(&work)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic[i][j];
        if !numeric.is_finite() || !a.is_finite() {
            return Ok(GradCheckReport {
                worst: Some((i, j)),
                ..failed(true)
            });
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some((i, j));
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        checked: chosen.len(),
        non_finite: false,
        passed: max_rel <= opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::uniform(shape, -1.0, 1.0, &mut stream(seed, Stream::Init, 99))
    }

    #[test]
    fn identity_has_zero_error() {
        let x = random(&[5], 1);
        let r = grad_check(|t, v| t.sum(v[0]), &[x], &GradCheckOptions::default()).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn softmax_passes() {
        let x = random(&[5], 2);
        let w = random(&[5], 3);
        let r = grad_check(
            |t, v| {
                let s = t.softmax(v[0], 0)?;
                let p = t.mul(s, v[1])?;
                t.sum(p)
            },
            &[x, w],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn corrupted_gradients_fail() {
        let x = random(&[4], 4);
        let opts = GradCheckOptions {
            corrupt_analytic: Some(1.01),
            ..Default::default()
        };
        let r = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[x],
            &opts,
        )
        .unwrap();
        assert!(!r.passed);
        assert!(r.worst.is_some());
    }

    #[test]
    fn non_finite_is_reported_not_raised() {
        let x = Tensor::from_f64(&[2], &[1.0, f64::NAN]).unwrap();
        let r = grad_check(|t, v| t.sum(v[0]), &[x], &GradCheckOptions::default()).unwrap();
        assert!(!r.passed);
        assert!(r.non_finite);
    }

    #[test]
    fn coordinate_sampling_caps_work() {
        let x = random(&[50], 5);
        let opts = GradCheckOptions {
            max_coords: 7,
            ..Default::default()
        };
        let r = grad_check(|t, v| t.sum(v[0]), &[x], &opts).unwrap();
        assert_eq!(r.checked, 7);
    }
}
