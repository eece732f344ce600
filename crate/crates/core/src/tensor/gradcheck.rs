//! Central finite-difference gradient checking.

use super::array::NdArray;
use super::graph::{Graph, Mode, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input, flat coordinate) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Default denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(floor)
}

/// Compares the analytic gradient returned by `f` against central
/// differences on every coordinate of every input.
///
/// `f` maps inputs to `(scalar loss, gradient per input)`.
pub fn grad_check<F>(f: F, inputs: &[NdArray], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&[NdArray]) -> Result<(f64, Vec<NdArray>)>,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|x| (0..x.len()).collect()).collect();
    grad_check_coords(f, inputs, &coords, h)
}

/// Like [`grad_check`] but only probes the listed flat coordinates per input.
pub fn grad_check_coords<F>(
    f: F,
    inputs: &[NdArray],
    coords: &[Vec<usize>],
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[NdArray]) -> Result<(f64, Vec<NdArray>)>,
{
    grad_check_with(f, inputs, coords, CheckOptions::new(h))
}

/// Probing options beyond the step size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOptions {
    pub h: f64,
    /// Relative error is `|a - n| / max(|n|, floor)`. A floor near the
    /// finite-difference noise level keeps vanishing gradients from
    /// reporting rounding as error; mistakes above `tol * floor` still show.
    pub floor: f64,
    /// For piecewise-smooth functions (ReLU, trilinear sampling): a kink
    /// inside `(x - h, x + h)` spoils at most one side of the probe, so the
    /// better of the central and the two one-sided differences is scored.
    pub piecewise: bool,
}

impl CheckOptions {
    pub fn new(h: f64) -> Self {
        Self {
            h,
            floor: REL_FLOOR,
            piecewise: false,
        }
    }
}

pub fn grad_check_with<F>(
    f: F,
    inputs: &[NdArray],
    coords: &[Vec<usize>],
    opts: CheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&[NdArray]) -> Result<(f64, Vec<NdArray>)>,
{
    let h = opts.h;
    let (f0, analytic) = f(inputs)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (a, list) in coords.iter().enumerate() {
        for &c in list {
            let ga = analytic[a].data()[c];
            if !ga.is_finite() {
                return Err(Error::NonFiniteGradient { input: a, coord: c });
            }
            let orig = probe[a].data()[c];
            probe[a].data_mut()[c] = orig + h;
            let (fp, _) = f(&probe)?;
            probe[a].data_mut()[c] = orig - h;
            let (fm, _) = f(&probe)?;
            probe[a].data_mut()[c] = orig;
            let mut err = rel_error(ga, (fp - fm) / (2.0 * h), opts.floor);
            if opts.piecewise {
                err = err
                    .min(rel_error(ga, (fp - f0) / h, opts.floor))
                    .min(rel_error(ga, (f0 - fm) / h, opts.floor));
            }
            if err > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = err;
                report.worst = (a, c);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Runs `build` on a fresh eval-mode tape with every input as a gradient leaf
/// and returns `(loss, gradients)`; the adapter between graph code and
/// [`grad_check`].
pub fn eval_with_grads<B>(build: &B, inputs: &[NdArray]) -> Result<(f64, Vec<NdArray>)>
where
    B: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new(Mode::Eval, 0);
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let value = g.value(loss).data()[0];
    let grads = g.backward(loss);
    let out = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| grads.get(*v).cloned().unwrap_or_else(|| NdArray::zeros(x.shape())))
        .collect();
    Ok((value, out))
}

/// Gradient check of a graph-building closure over all input coordinates.
pub fn check_graph<B>(build: B, inputs: &[NdArray], h: f64) -> Result<GradCheckReport>
where
    B: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check(|x| eval_with_grads(&build, x), inputs, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial() {
        let f = |x: &[NdArray]| {
            let v = x[0].data().iter().map(|a| a * a).sum();
            Ok((v, vec![x[0].map(|a| 2.0 * a)]))
        };
        let (_, g) = f(&[NdArray::vector(&[1.0, 2.0])]).unwrap();
        assert_eq!(g[0].data(), &[2.0, 4.0]);
        let r = grad_check(f, &[NdArray::vector(&[1.0, 2.0])], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn wrong_backward_is_detected() {
        let f = |x: &[NdArray]| {
            let v = x[0].data().iter().map(|a| a * a).sum();
            Ok((v, vec![x[0].map(|a| 4.0 * a)]))
        };
        let r = grad_check(f, &[NdArray::vector(&[1.0, 2.0])], 1e-5).unwrap();
        assert!((r.max_rel_error - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_gradient_reports_coordinate() {
        let f = |x: &[NdArray]| Ok((0.0, vec![x[0].map(|a| if a > 1.5 { f64::NAN } else { a })]));
        match grad_check(f, &[NdArray::vector(&[1.0, 2.0])], 1e-5) {
            Err(Error::NonFiniteGradient { input: 0, coord: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn piecewise_mode_tolerates_one_sided_kink() {
        // |x - 0.3| probed at 0.3 + h/2: the central difference straddles the kink
        let h = 1e-3;
        let x = NdArray::vector(&[0.3 + h / 2.0]);
        let f = |v: &[NdArray]| -> Result<(f64, Vec<NdArray>)> {
            let t = v[0].data()[0] - 0.3;
            Ok((t.abs(), vec![NdArray::vector(&[t.signum()])]))
        };
        let plain = grad_check_with(f, std::slice::from_ref(&x), &[vec![0]], CheckOptions::new(h)).unwrap();
        assert!(plain.max_rel_error > 0.1);
        let opts = CheckOptions { piecewise: true, ..CheckOptions::new(h) };
        assert!(grad_check_with(f, std::slice::from_ref(&x), &[vec![0]], opts).unwrap().max_rel_error < 1e-9);
        let wrong = |v: &[NdArray]| f(v).map(|(y, g)| (y, vec![g[0].map(|d| -d)]));
        assert!(grad_check_with(wrong, &[x], &[vec![0]], opts).unwrap().max_rel_error > 1.0);
    }
}
