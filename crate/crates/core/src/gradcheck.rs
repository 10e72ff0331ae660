//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::params::{Graph, ParamId, ParamStore};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
        self.checked += 1;
    }
}

fn scalar_value<S: Scalar>(tape: &Tape<S>, v: Var) -> Result<f64> {
    if tape.value(v).len() != 1 {
        return Err(Error::Invalid("gradient check needs a scalar output".into()));
    }
    Ok(tape.value(v).item().as_f64())
}

/// Compares reverse-mode gradients of `f` against central differences in
/// every coordinate of every input.
pub fn check_inputs<S, F>(inputs: &[Tensor<S>], step: f64, f: F) -> Result<GradCheck>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<S>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_value(&tape, out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_value(&tape, out)?;
    let grads = tape.backward(out)?;
    let mut report = GradCheck { max_rel_error: 0.0, checked: 0 };
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for k in 0..inputs[i].len() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + S::lit(step);
            let plus = eval(&work)?;
            work[i].data_mut()[k] = orig - S::lit(step);
            let minus = eval(&work)?;
            work[i].data_mut()[k] = orig;
            report.record(analytic.data()[k].as_f64(), (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Checks `probes` randomly chosen parameter coordinates of a loss built on
/// a [`Graph`]. Each evaluation receives a clone of `rng`, so stochastic
/// losses see identical noise.
pub fn check_params<S, F>(store: &ParamStore<S>, probes: usize, step: f64, pick: &mut RngState, rng: &RngState, f: F) -> Result<GradCheck>
where
    S: Scalar,
    F: Fn(&mut Graph<'_, S>, &mut RngState) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    check_param_subset(store, &ids, probes, step, pick, rng, f)
}

/// [`check_params`] restricted to coordinates of `ids`.
pub fn check_param_subset<S, F>(
    store: &ParamStore<S>,
    ids: &[ParamId],
    probes: usize,
    step: f64,
    pick: &mut RngState,
    rng: &RngState,
    f: F,
) -> Result<GradCheck>
where
    S: Scalar,
    F: Fn(&mut Graph<'_, S>, &mut RngState) -> Result<Var>,
{
    if ids.is_empty() {
        return Err(Error::Invalid("no parameters to check".into()));
    }
    let eval = |s: &ParamStore<S>| -> Result<f64> {
        let mut g = Graph::training(s);
        let out = f(&mut g, &mut rng.clone())?;
        scalar_value(&g.tape, out)
    };
    let mut g = Graph::training(store);
    let out = f(&mut g, &mut rng.clone())?;
    scalar_value(&g.tape, out)?;
    let grads = g.tape.backward(out)?;
    let analytic = g.param_grads(&grads);
    let mut work = store.clone();
    let mut report = GradCheck { max_rel_error: 0.0, checked: 0 };
    for _ in 0..probes {
        let id = ids[pick.index(ids.len())];
        let k = pick.index(store.get(id).len());
        let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[k].as_f64());
        let orig = work.get(id).data()[k];
        work.values_mut(id)[k] = orig + S::lit(step);
        let plus = eval(&work)?;
        work.values_mut(id)[k] = orig - S::lit(step);
        let minus = eval(&work)?;
        work.values_mut(id)[k] = orig;
        report.record(a, (plus - minus) / (2.0 * step));
    }
    Ok(report)
}

/// One named differentiable operation with generated inputs.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>,
}

fn randn(rng: &mut RngState, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rng.normals(n)).expect("finite normals")
}

/// Values at least `margin` away from zero.
fn away_from_zero(rng: &mut RngState, shape: &[usize], margin: f64) -> Tensor<f64> {
    randn(rng, shape).map(|v| v.signum() * (margin + v.abs())).expect("finite")
}

/// Reduces `y` to a scalar through fixed random weights so every output
/// coordinate carries a distinct sensitivity.
fn project(tape: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.reshaped(tape.shape(y).to_vec())?);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

macro_rules! case {
    ($name:expr, $inputs:expr, $out_len:expr, $rng:expr, |$t:ident, $v:ident| $body:expr) => {{
        let weights = randn($rng, &[$out_len]);
        OpCase {
            name: $name,
            inputs: $inputs,
            build: Box::new(move |$t: &mut Tape<f64>, $v: &[Var]| {
                let y = $body?;
                project($t, y, &weights)
            }),
        }
    }};
}

/// Every tape operation, with inputs drawn from `seed`. Inputs of the
/// piecewise operations are kept away from their kinks.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = RngState::new(seed);
    let r = &mut rng;
    let (m, k, n) = (3, 4, 5);
    vec![
        case!("add", vec![randn(r, &[m, n]), randn(r, &[m, n])], m * n, r, |t, v| t.add(v[0], v[1])),
        case!("sub", vec![randn(r, &[m, n]), randn(r, &[m, n])], m * n, r, |t, v| t.sub(v[0], v[1])),
        case!("mul", vec![randn(r, &[m, n]), randn(r, &[m, n])], m * n, r, |t, v| t.mul(v[0], v[1])),
        case!("add_row", vec![randn(r, &[m, n]), randn(r, &[n])], m * n, r, |t, v| t.add_row(v[0], v[1])),
        case!("scale", vec![randn(r, &[m, n])], m * n, r, |t, v| t.scale(v[0], -1.7)),
        case!("add_scalar", vec![randn(r, &[m, n])], m * n, r, |t, v| t.add_scalar(v[0], 0.3)),
        case!("matmul", vec![randn(r, &[m, k]), randn(r, &[k, n])], m * n, r, |t, v| t.matmul(v[0], v[1])),
        case!("transpose", vec![randn(r, &[m, n])], m * n, r, |t, v| t.transpose(v[0])),
        case!("gelu", vec![randn(r, &[m, n]).map(|x| 2.0 * x).expect("finite")], m * n, r, |t, v| t.gelu(v[0])),
        case!("relu", vec![away_from_zero(r, &[m, n], 0.1)], m * n, r, |t, v| t.relu(v[0])),
        case!("exp", vec![randn(r, &[m, n])], m * n, r, |t, v| t.exp(v[0])),
        case!("square", vec![randn(r, &[m, n])], m * n, r, |t, v| t.square(v[0])),
        case!("softmax_rows", vec![randn(r, &[m, n]).map(|x| 2.0 * x).expect("finite")], m * n, r, |t, v| t.softmax(v[0], 1)),
        case!("softmax_cols", vec![randn(r, &[m, n]).map(|x| 2.0 * x).expect("finite")], m * n, r, |t, v| t.softmax(v[0], 0)),
        case!(
            "layer_norm",
            vec![randn(r, &[m, n]), randn(r, &[n]), randn(r, &[n])],
            m * n,
            r,
            |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)
        ),
        case!("clamp", vec![randn(r, &[m, n]).map(|x| if (x.abs() - 0.5).abs() < 0.02 { x * 1.1 } else { x }).expect("finite")], m * n, r, |t, v| {
            t.clamp(v[0], -0.5, 0.5)
        }),
        case!("reshape", vec![randn(r, &[m, n])], m * n, r, |t, v| t.reshape(v[0], vec![n, m])),
        case!("concat", vec![randn(r, &[m, 2]), randn(r, &[m, 3])], m * n, r, |t, v| t.concat(&[v[0], v[1]], 1)),
        case!("concat_rows", vec![randn(r, &[2, n]), randn(r, &[1, n])], m * n, r, |t, v| t.concat(&[v[0], v[1]], 0)),
        case!("slice", vec![randn(r, &[m, n + 2])], m * n, r, |t, v| t.slice(v[0], 1, 1, n)),
        case!("slice_rows", vec![randn(r, &[m + 1, n])], m * n, r, |t, v| t.slice(v[0], 0, 1, m)),
        case!("sum", vec![randn(r, &[m, n])], 1, r, |t, v| t.sum(v[0])),
        case!("mean", vec![randn(r, &[m, n])], 1, r, |t, v| t.mean(v[0])),
        case!("mse", vec![randn(r, &[m, n]), randn(r, &[m, n])], 1, r, |t, v| t.mse(v[0], v[1])),
        case!("kl_to_standard", vec![randn(r, &[m, n]), randn(r, &[m, n])], 1, r, |t, v| {
            crate::latent::kl_diag_gaussian_to_standard(t, v[0], v[1])
        }),
        case!(
            "kl_pair",
            vec![randn(r, &[m, n]), randn(r, &[m, n]), randn(r, &[m, n]), randn(r, &[m, n])],
            1,
            r,
            |t, v| {
                let p = crate::latent::GaussianLatent::new(t, v[0], v[1])?;
                let q = crate::latent::GaussianLatent::new(t, v[2], v[3])?;
                crate::latent::kl_diag_gaussian_pair(t, p, q)
            }
        ),
        {
            let noise = RngState::new(seed ^ 0x5eed);
            case!("gaussian_sample", vec![randn(r, &[m, n]), randn(r, &[m, n])], m * n, r, |t, v| {
                crate::latent::gaussian_sample(t, v[0], v[1], &mut noise.clone())
            })
        },
    ]
}
