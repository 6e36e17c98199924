//! Central-difference checks of every differentiable op against the tape.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Conv, IRBlock, NodeId, ParamStore, SparseVar, Tape};
use crate::entropy::FactorizedPrior;
use crate::error::Result;
use crate::sparse::{ConvSpec, Coord, Coords};

const H: f64 = 1e-5;

/// Every op family the suite covers.
pub const CASES: &[&str] = &[
    "conv_k3",
    "conv_k1",
    "conv_down",
    "conv_transposed",
    "conv_on_target",
    "inception_residual_block",
    "bce_after_gather",
    "rate_and_weighted_sum",
];

/// Outcome of one case over several random instances.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub trials: usize,
    /// Largest relative error between analytic and numeric gradients.
    pub worst: f64,
    pub checked: usize,
    /// Coordinates left out because a ReLU kink lies inside the step.
    pub skipped: usize,
}

type Build<'a> = dyn Fn(&mut Tape, &ParamStore, &SparseVar) -> Result<NodeId> + 'a;
type Case = (Arc<Coords>, u32, Box<Build<'static>>);

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn random_coords(rng: &mut ChaCha8Rng, n: usize, side: i32) -> Arc<Coords> {
    Arc::new(
        (0..n)
            .map(|_| Coord::new(rng.random_range(0..side), rng.random_range(0..side), rng.random_range(0..side)))
            .collect(),
    )
}

/// Worst relative error over all parameters and input entries, skipping
/// coordinates whose step and half-step estimates disagree (a ReLU kink lies
/// inside the step). Returns `(worst, checked, skipped)`.
fn worst_error(params: &mut ParamStore, coords: Arc<Coords>, x: Array2<f64>, scale: u32, build: &Build, seed: u64) -> (f64, usize, usize) {
    let eval = |params: &ParamStore, x: &Array2<f64>, weights: Option<&Array2<f64>>| -> (f64, Array2<f64>, Tape, NodeId, NodeId) {
        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let var = SparseVar { node: xn, coords: coords.clone(), scale };
        let out = build(&mut tape, params, &var).unwrap();
        let v = tape.value(out).clone();
        let f = weights.map_or(v.sum(), |w| (&v * w).sum());
        (f, v, tape, xn, out)
    };
    let (_, v0, _, _, _) = eval(params, &x, None);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Array2::from_shape_fn(v0.dim(), |_| rng.random_range(-1.0..1.0));
    let weights = if v0.len() == 1 { Array2::ones((1, 1)) } else { weights };

    params.zero_grads();
    let (_, _, mut tape, xn, out) = eval(params, &x, Some(&weights));
    let grads = tape.backward(params, out, weights.clone()).unwrap();
    let gx = grads.get(xn).unwrap().clone();

    let f = |params: &ParamStore, x: &Array2<f64>| eval(params, x, Some(&weights)).0;
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0usize, 0usize);
    let mut judge = |analytic: f64, plus: [f64; 2], minus: [f64; 2]| {
        let full = (plus[0] - minus[0]) / (2.0 * H);
        let half = (plus[1] - minus[1]) / H;
        checked += 1;
        if rel_err(full, half) > 1e-4 {
            skipped += 1;
        } else {
            worst = worst.max(rel_err(analytic, full));
        }
    };

    let ids: Vec<_> = (0..params.len()).map(super::ParamId).collect();
    for id in ids {
        for i in 0..params.get(id).len() {
            let orig = params.get(id).value[i];
            let at = |d: f64, params: &mut ParamStore| {
                params.get_mut(id).value[i] = orig + d;
                let r = f(params, &x);
                params.get_mut(id).value[i] = orig;
                r
            };
            let plus = [at(H, params), at(H / 2.0, params)];
            let minus = [at(-H, params), at(-H / 2.0, params)];
            judge(params.get(id).grad[i], plus, minus);
        }
    }
    for idx in 0..x.len() {
        let at = |d: f64| {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += d;
            f(params, &xp)
        };
        judge(gx.as_slice().unwrap()[idx], [at(H), at(H / 2.0)], [at(-H), at(-H / 2.0)]);
    }
    (worst, checked, skipped)
}

/// Runs `trials` random instances of the named case.
pub fn run_case(name: &str, trials: usize) -> CaseReport {
    let name = *CASES.iter().find(|&&c| c == name).unwrap_or_else(|| panic!("unknown case {name}"));
    let mut report = CaseReport {
        name,
        trials,
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    for trial in 0..trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 * trial + name.len() as u64);
        let mut params = ParamStore::new();
        let (coords, scale, build) = make_case(name, &mut rng, &mut params);
        // Perturb biases away from zero so they participate.
        for p in params.iter_mut() {
            p.value.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
        let cin = input_channels(&params);
        let x = Array2::from_shape_fn((coords.len(), cin), |_| rng.random_range(-1.0..1.0));
        let (worst, checked, skipped) = worst_error(&mut params, coords, x, scale, &*build, trial);
        report.worst = report.worst.max(worst);
        report.checked += checked;
        report.skipped += skipped;
    }
    report
}

/// Every case in [`CASES`].
pub fn gradient_suite(trials: usize) -> Vec<CaseReport> {
    CASES.iter().map(|c| run_case(c, trials)).collect()
}

/// The builders know their input width only through their first layer,
/// which every case names `in.weight` with shape `[k, cin, cout]`.
fn input_channels(params: &ParamStore) -> usize {
    params
        .iter()
        .find(|p| p.name == "in.weight")
        .map(|p| p.shape[1])
        .expect("first layer named `in`")
}

fn conv_case(rng: &mut ChaCha8Rng, params: &mut ParamStore, spec_of: impl Fn(usize, usize) -> ConvSpec, scale: u32, side: i32) -> Case {
    let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
    let conv = Conv::new(params, "in", spec_of(cin, cout), rng).unwrap();
    let coords = random_coords(rng, 15, side);
    let build: Box<Build> = Box::new(move |tape, params, x| Ok(conv.forward(tape, params, x, None)?.node));
    (coords, scale, build)
}

fn make_case(name: &str, rng: &mut ChaCha8Rng, params: &mut ParamStore) -> Case {
    match name {
        "conv_k3" => conv_case(rng, params, |a, b| ConvSpec::same(a, b, 3), 0, 5),
        "conv_k1" => conv_case(rng, params, |a, b| ConvSpec::same(a, b, 1), 0, 5),
        "conv_down" => conv_case(rng, params, ConvSpec::down, 0, 6),
        "conv_transposed" => conv_case(rng, params, ConvSpec::up, 1, 4),
        "conv_on_target" => {
            let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
            let conv = Conv::new(params, "in", ConvSpec::same(cin, cout, 3), rng).unwrap();
            let coords = random_coords(rng, 15, 5);
            let target = random_coords(rng, 12, 5);
            let build: Box<Build> = Box::new(move |tape, params, x| Ok(conv.forward(tape, params, x, Some(target.clone()))?.node));
            (coords, 0, build)
        }
        "inception_residual_block" => {
            let width = [4, 8][rng.random_range(0..2)];
            let lift = Conv::new(params, "in", ConvSpec::same(2, width, 1), rng).unwrap();
            let block = IRBlock::new(params, "irb", width, rng).unwrap();
            let coords = random_coords(rng, 12, 4);
            let build: Box<Build> = Box::new(move |tape, params, x| {
                let h = lift.forward(tape, params, x, None)?;
                Ok(block.forward(tape, params, &h)?.node)
            });
            (coords, 0, build)
        }
        "bce_after_gather" => {
            let conv = Conv::new(params, "in", ConvSpec::same(2, 1, 3), rng).unwrap();
            let coords = random_coords(rng, 15, 5);
            let rows: Vec<usize> = (0..coords.len()).filter(|_| rng.random_bool(0.7)).collect();
            let targets: Vec<f64> = rows.iter().map(|_| f64::from(rng.random_bool(0.5))).collect();
            let (rows, targets) = (Arc::new(rows), Arc::new(targets));
            let build: Box<Build> = Box::new(move |tape, params, x| {
                let l = conv.forward(tape, params, x, None)?;
                let kept = tape.gather(l.node, rows.clone());
                tape.bce(kept, targets.clone())
            });
            (coords, 0, build)
        }
        "rate_and_weighted_sum" => {
            let channels = rng.random_range(1..3);
            let conv = Conv::new(params, "in", ConvSpec::same(2, channels, 1), rng).unwrap();
            let prior = FactorizedPrior::new(params, "prior", channels, 2.0, rng).unwrap();
            let aux = Conv::new(params, "aux", ConvSpec::same(2, 1, 1), rng).unwrap();
            let coords = random_coords(rng, 10, 4);
            let targets = Arc::new((0..coords.len()).map(|i| (i % 2) as f64).collect::<Vec<_>>());
            let build: Box<Build> = Box::new(move |tape, params, x| {
                let y = conv.forward(tape, params, x, None)?;
                let y3 = tape.add(y.node, y.node)?;
                let r = tape.rate(params, y3, &prior)?;
                let l = aux.forward(tape, params, x, None)?;
                let d = tape.bce(l.node, targets.clone())?;
                tape.weighted_sum(vec![(r, 0.1), (d, 3.0)])
            });
            (coords, 0, build)
        }
        _ => unreachable!(),
    }
}
