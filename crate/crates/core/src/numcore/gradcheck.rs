//! Finite-difference gradient checks: a battery of randomized cases for
//! every tape op, and a sampled check for arbitrary scalar functions of a
//! parameter store.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Input shapes and graph of one randomized op instance.
pub type Instance = (Vec<Vec<usize>>, Box<Build>);

pub struct OpCase {
    pub name: &'static str,
    pub make: fn(&mut ChaCha8Rng) -> Instance,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Reduces an op output to a scalar with fixed random weights so that every
/// output element contributes a distinct gradient.
fn scalarize(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = tape.constant(random_tensor(&mut rng, &shape));
    let prod = tape.mul(out, weights)?;
    Ok(tape.sum(prod))
}

fn build_loss(tape: &mut Tape, ids: &[ParamId], build: &Build, seed: u64) -> Result<Var> {
    let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
    let out = build(tape, &vars)?;
    if tape.value(out).len() == 1 {
        Ok(out)
    } else {
        scalarize(tape, out, seed)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Result of comparing analytic and numeric partial derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CoordinateCheck {
    pub worst: f64,
    /// Coordinates that only agreed at a smaller step (a ReLU, max or
    /// maxout kink within the default step).
    pub refined: usize,
}

/// Compares the analytic gradient of `f` with central differences at the
/// given `(parameter, flat index)` coordinates. `store` exposes the
/// parameters inside `target` for perturbation.
pub fn check_coordinates<T>(
    target: &mut T,
    store: fn(&mut T) -> &mut ParamStore,
    coords: &[(ParamId, usize)],
    analytic: &Gradients,
    f: impl Fn(&T) -> f64,
) -> CoordinateCheck {
    let mut out = CoordinateCheck::default();
    for &(id, i) in coords {
        let exact = analytic.get(id).map_or(0.0, |g| g.data()[i]);
        let orig = store(target).value(id).data()[i];
        let mut err = f64::INFINITY;
        for (k, step) in [STEP, STEP / 10.0, STEP / 100.0].into_iter().enumerate() {
            store(target).get_mut(id).value.data_mut()[i] = orig + step;
            let up = f(target);
            store(target).get_mut(id).value.data_mut()[i] = orig - step;
            let down = f(target);
            store(target).get_mut(id).value.data_mut()[i] = orig;
            let e = relative_error(exact, (up - down) / (2.0 * step));
            err = if e.is_nan() { f64::INFINITY } else { e };
            if err < TOLERANCE {
                out.refined += usize::from(k > 0);
                break;
            }
        }
        out.worst = out.worst.max(err);
    }
    out
}

/// Checks one op instance on random inputs at every input entry.
pub fn check(shapes: &[Vec<usize>], build: &Build, seed: u64) -> Result<CoordinateCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut ids = Vec::new();
    for (i, s) in shapes.iter().enumerate() {
        ids.push(store.add_weight(format!("in{i}"), random_tensor(&mut rng, s))?);
    }
    let analytic = {
        let mut tape = Tape::new(&store);
        let loss = build_loss(&mut tape, &ids, build, seed ^ 0xabc)?;
        tape.backward(loss)?
    };
    let coords: Vec<(ParamId, usize)> = ids
        .iter()
        .flat_map(|&id| (0..store.value(id).len()).map(move |i| (id, i)))
        .collect();
    let ids2 = ids.clone();
    Ok(check_coordinates(&mut store, |s| s, &coords, &analytic, |s| {
        let mut tape = Tape::new(s);
        let loss = build_loss(&mut tape, &ids2, build, seed ^ 0xabc).expect("graph built once already");
        tape.value(loss).item().expect("scalar loss")
    }))
}

pub struct CaseReport {
    pub worst: f64,
    pub worst_trial: u64,
    pub refined: usize,
}

/// Runs `trials` random instances of a case.
pub fn run_case(case: &OpCase, trials: u64) -> Result<CaseReport> {
    let mut report = CaseReport {
        worst: 0.0,
        worst_trial: 0,
        refined: 0,
    };
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial * 7919 + 13);
        let (shapes, build) = (case.make)(&mut rng);
        let c = check(&shapes, build.as_ref(), trial)?;
        report.refined += c.refined;
        if c.worst > report.worst {
            report.worst = c.worst;
            report.worst_trial = trial;
        }
    }
    Ok(report)
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5))
}

/// Randomized instances covering every differentiable tape op.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            make: |rng| {
                let (m, k, n) = dims(rng);
                (vec![vec![m, k], vec![k, n]], Box::new(|t, v| t.matmul(v[0], v[1])))
            },
        },
        OpCase {
            name: "affine/add_row",
            make: |rng| {
                let (m, k, n) = dims(rng);
                (
                    vec![vec![m, k], vec![k, n], vec![1, n]],
                    Box::new(|t, v| {
                        let a = t.affine(v[0], v[1], v[2])?;
                        let p = t.matmul(v[0], v[1])?;
                        let b = t.add_row(p, v[2])?;
                        t.mul(a, b)
                    }),
                )
            },
        },
        OpCase {
            name: "add/sub/mul/one_minus/scale",
            make: |rng| {
                let (m, n, _) = dims(rng);
                (
                    vec![vec![m, n], vec![m, n], vec![m, n]],
                    Box::new(|t, v| {
                        let a = t.add(v[0], v[1])?;
                        let b = t.mul(a, v[2])?;
                        let c = t.sub(b, v[0])?;
                        let d = t.one_minus(c);
                        Ok(t.scale(d, 0.7))
                    }),
                )
            },
        },
        OpCase {
            name: "tanh/sigmoid/relu",
            make: |rng| {
                let (m, n, _) = dims(rng);
                (
                    vec![vec![m, n]],
                    Box::new(|t, v| {
                        let a = t.tanh(v[0]);
                        let b = t.sigmoid(v[0]);
                        let c = t.relu(v[0]);
                        let ab = t.add(a, b)?;
                        t.add(ab, c)
                    }),
                )
            },
        },
        OpCase {
            name: "maxout",
            make: |rng| {
                let (m, units, _) = dims(rng);
                let pieces = rng.random_range(1..4);
                (vec![vec![m, units * pieces]], Box::new(move |t, v| t.maxout(v[0], pieces)))
            },
        },
        OpCase {
            name: "dropout",
            make: |rng| {
                let (m, n, _) = dims(rng);
                let seed = rng.random::<u64>();
                (
                    vec![vec![m, n]],
                    Box::new(move |t, v| {
                        let mut r = ChaCha8Rng::seed_from_u64(seed);
                        t.dropout(v[0], 0.4, true, &mut r)
                    }),
                )
            },
        },
        OpCase {
            name: "concat/slice/reshape",
            make: |rng| {
                let (m, a, b) = dims(rng);
                (
                    vec![vec![m, a], vec![m, b], vec![1, a + b]],
                    Box::new(move |t, v| {
                        let c = t.concat_cols(&[v[0], v[1]])?;
                        let r = t.concat_rows(&[c, v[2]])?;
                        let s = t.slice_rows(r, 1, m)?;
                        let s = t.slice_cols(s, 1, a + b - 1)?;
                        t.reshape(s, &[(a + b - 1) * m, 1])
                    }),
                )
            },
        },
        OpCase {
            name: "gather_rows",
            make: |rng| {
                let (m, n, _) = dims(rng);
                let rows: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..m)).collect();
                (vec![vec![m, n]], Box::new(move |t, v| t.gather_rows(v[0], &rows)))
            },
        },
        OpCase {
            name: "pair_add",
            make: |rng| {
                let (m, p, d) = dims(rng);
                (
                    vec![vec![m, d], vec![p, d]],
                    Box::new(|t, v| {
                        let s = t.pair_add(v[0], v[1])?;
                        Ok(t.tanh(s))
                    }),
                )
            },
        },
        OpCase {
            name: "unfold/conv1d/max_pool_rows",
            make: |rng| {
                let len = rng.random_range(1..7);
                let width = rng.random_range(1..=len);
                let d = rng.random_range(1..4);
                let count = rng.random_range(1..4);
                (
                    vec![vec![len, d], vec![width * d, count]],
                    Box::new(move |t, v| {
                        let u = t.unfold(v[0], width)?;
                        let c = t.conv1d(v[0], v[1], width)?;
                        let p = t.max_pool_rows(c)?;
                        let q = t.max_pool_rows(u)?;
                        let s = t.sum(q);
                        let sp = t.sum(p);
                        t.add(s, sp)
                    }),
                )
            },
        },
        OpCase {
            name: "softmax_cross_entropy",
            make: |rng| {
                let (m, n, _) = dims(rng);
                let targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
                let reduction = if rng.random::<bool>() { Reduction::Mean } else { Reduction::Sum };
                (
                    vec![vec![m, n]],
                    Box::new(move |t, v| t.softmax_cross_entropy(v[0], &targets, reduction)),
                )
            },
        },
        OpCase {
            name: "log_softmax/mean",
            make: |rng| {
                let (m, n, _) = dims(rng);
                (
                    vec![vec![m, n]],
                    Box::new(|t, v| {
                        let l = t.log_softmax(v[0])?;
                        let w = t.tanh(l);
                        Ok(t.mean(w))
                    }),
                )
            },
        },
    ]
}
