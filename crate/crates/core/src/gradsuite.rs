//! Finite-difference checks of every layer's backward pass and of the
//! end-to-end training loss.
//!
//! Each check binds the layer's parameters and its inputs as leaves,
//! contracts the output with a fixed random weighting to get a scalar, and
//! compares the tape gradient against central differences in 64-bit.

use crate::error::Result;
use crate::layers::{
    gcn_layer, ha_attention, hop_gcn, Activation, ConvKind, Ctx, HaVariant, Hgf, HgfSpec, HopAggregate, HopGraphs,
    Ijr, Init, Mhsa, ParamSet, QkvProjection,
};
use crate::metrics::{pose_loss, LOSS_ALPHA, LOSS_BETA};
use crate::model::{HopFirConfig, HopFirModel, OutputHead};
use crate::rng::{stream, Stream};
use crate::skeleton::SkeletonGraph;
use crate::tensor::{grad_check, GradCheckOptions, GradCheckReport, Tape, Tensor, Var};

/// Batch size of the random inputs.
const BATCH: usize = 2;

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seeds: Vec<u64>,
    pub tolerance: f64,
    /// Coordinates sampled per check.
    pub coords: usize,
    /// Scale every analytic gradient, to prove the suite detects a broken
    /// backward pass.
    pub corrupt: Option<f64>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seeds: (0..5).collect(),
            tolerance: 1e-4,
            coords: 250,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub layer: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Names of the checks, in the order [`gradient_suite`] runs them.
pub fn suite_layers() -> Vec<String> {
    let mut names = vec!["gcn".to_string(), "hopgcn".to_string()];
    for v in [HaVariant::Hss, HaVariant::Sss, HaVariant::Shh] {
        names.push(format!("ha.{v}"));
        names.push(format!("ha.{v}+proj"));
    }
    names.extend(
        ["hop_reduce", "hop_aggregate", "hgf", "mhsa", "ijr", "head", "loss"]
            .iter()
            .map(|s| s.to_string()),
    );
    names
}

/// Run every check for every seed. Dropout is disabled.
pub fn gradient_suite(config: &HopFirConfig, skeleton: &SkeletonGraph, opts: &SuiteOptions) -> Result<Vec<LayerCheck>> {
    let mut config = config.clone();
    config.dropout = 0.0;
    config.validate()?;
    let mut out = Vec::new();
    for &seed in &opts.seeds {
        for layer in suite_layers() {
            let report = check_layer(&layer, &config, skeleton, seed, opts)?;
            out.push(LayerCheck { layer, seed, report });
        }
    }
    Ok(out)
}

fn random(shape: &[usize], seed: u64, index: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, &mut stream(seed, Stream::Sampling, index))
}

/// `Σ out ⊙ R` for a fixed random `R` of the output's shape.
fn contract(tape: &Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let r = tape.constant(random(&tape.shape(out), seed, u64::MAX));
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

fn run<F>(params: ParamSet<f64>, inputs: Vec<Tensor<f64>>, seed: u64, opts: &SuiteOptions, body: F) -> Result<GradCheckReport>
where
    F: Fn(&Ctx<f64>, &[Var]) -> Result<Var>,
{
    let np = params.len();
    let mut all = params.values().to_vec();
    all.extend(inputs);
    let f = |tape: &Tape<f64>, vars: &[Var]| {
        let cx = Ctx::from_vars(tape, vars[..np].to_vec());
        let out = body(&cx, &vars[np..])?;
        contract(tape, out, seed)
    };
    let gopts = GradCheckOptions {
        tolerance: opts.tolerance,
        max_coords: opts.coords,
        seed,
        corrupt_analytic: opts.corrupt,
        ..Default::default()
    };
    grad_check(f, &all, &gopts)
}

fn check_layer(
    layer: &str,
    config: &HopFirConfig,
    skeleton: &SkeletonGraph,
    seed: u64,
    opts: &SuiteOptions,
) -> Result<GradCheckReport> {
    let n = skeleton.num_joints();
    let d = config.channels;
    let features = |index| random(&[BATCH, n, d], seed, index);
    let mut init = Init::<f64>::new(seed);
    let bound = 1.0 / (d as f64).sqrt();
    match layer {
        "gcn" => {
            let graphs = HopGraphs::new(&mut init, "g", skeleton, ConvKind::Gcn, 1, config.learnable_graph)?;
            let w = init.uniform("w", &[d, d], bound)?;
            let act = Activation::new(&mut init, "act", config.activation)?;
            run(init.finish(), vec![features(0)], seed, opts, |cx, x| {
                gcn_layer(cx, x[0], graphs.matrix(cx, 0)?, cx.p(w), Some(&act))
            })
        }
        "hopgcn" => {
            let hops = config.hops.max(2);
            let graphs = HopGraphs::new(&mut init, "g", skeleton, ConvKind::Hop, hops, config.learnable_graph)?;
            let w = init.uniform("w", &[d, d], bound)?;
            run(init.finish(), vec![features(0)], seed, opts, |cx, x| {
                hop_gcn(cx.tape, x[0], graphs.matrix(cx, hops - 1)?, cx.p(w))
            })
        }
        "hop_reduce" | "hop_aggregate" => {
            let reduced = config.reduction.dims(d, config.hops)?;
            let agg = HopAggregate::new(&mut init, "agg", d, &reduced, config.activation)?;
            let inputs: Vec<Tensor<f64>> = (0..=config.hops as u64).map(features).collect();
            run(init.finish(), inputs, seed, opts, |cx, x| {
                if layer == "hop_reduce" {
                    agg.hop_reduce(cx, x[1], config.hops - 1)
                } else {
                    agg.forward(cx, x[0], &x[1..])
                }
            })
        }
        "hgf" => {
            let spec = HgfSpec {
                hops: config.hops,
                channels: d,
                global_dim: config.global_dim(),
                schedule: &config.reduction,
                variant: config.ha_variant,
                with_projection: config.with_projection,
                act: config.activation,
                learnable_graph: config.learnable_graph,
                dropout: 0.0,
            };
            let hgf = Hgf::new(&mut init, "hgf", skeleton, &spec)?;
            let x2d = random(&[BATCH, n, 2], seed, 1);
            run(init.finish(), vec![features(0), x2d], seed, opts, |cx, x| hgf.forward(cx, x[0], Some(x[1])))
        }
        "mhsa" => {
            let m = Mhsa::new(&mut init, "mhsa", d, config.heads)?;
            run(init.finish(), vec![features(0)], seed, opts, |cx, x| m.forward(cx, x[0]))
        }
        "ijr" => {
            let ijr = Ijr::new(&mut init, "ijr", d, config.heads, skeleton.limb_groups()?, n, 0.0)?;
            run(init.finish(), vec![features(0)], seed, opts, |cx, x| ijr.forward(cx, x[0]))
        }
        "head" => {
            let head = OutputHead::new(&mut init, config, skeleton)?;
            run(init.finish(), vec![features(0)], seed, opts, |cx, x| head.forward(cx, x[0]))
        }
        "loss" => {
            let mut c = config.clone();
            c.seed = seed;
            let model = HopFirModel::<f64>::build(&c, skeleton)?;
            let x2d = random(&[BATCH, n, 2], seed, 0);
            let target = random(&[BATCH, n, 3], seed, 1);
            let params = model.params.clone();
            let np = params.len();
            let mut all = params.values().to_vec();
            all.push(x2d);
            let f = |tape: &Tape<f64>, vars: &[Var]| {
                let cx = Ctx::from_vars(tape, vars[..np].to_vec());
                let pred = model.forward(&cx, vars[np])?;
                pose_loss(tape, pred, tape.constant(target.clone()), LOSS_ALPHA, LOSS_BETA)
            };
            let gopts = GradCheckOptions {
                tolerance: opts.tolerance,
                max_coords: opts.coords,
                seed,
                corrupt_analytic: opts.corrupt,
                ..Default::default()
            };
            grad_check(f, &all, &gopts)
        }
        ha => {
            let rest = ha.strip_prefix("ha.").unwrap_or(ha);
            let (variant, with_proj) = match rest.strip_suffix("+proj") {
                Some(v) => (v, true),
                None => (rest, false),
            };
            let variant: HaVariant = variant.parse()?;
            let proj = if with_proj {
                Some(QkvProjection::new(&mut init, "proj", d)?)
            } else {
                None
            };
            run(init.finish(), vec![features(0), features(1)], seed, opts, |cx, x| {
                Ok(ha_attention(cx, x[0], x[1], variant, proj.as_ref())?.0)
            })
        }
    }
}
