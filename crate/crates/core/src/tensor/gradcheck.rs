//! Central finite-difference gradient checking in `f64`.

use super::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Per input: ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6).
    pub rel_errors: Vec<f64>,
    pub checked: usize,
    /// Elements whose +-h stencil crossed a relu kink or changed a
    /// segment-max selection; finite differences are not valid there.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares the tape gradient of `f` against central differences with step
/// `h`. `f` receives the inputs as parameter leaves `0..inputs.len()`.
pub fn check_gradients<F, E>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<(Tape<f64>, Var, Vec<Var>), E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t))
            .collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape, loss, vars))
    };

    let (tape, loss, vars) = eval(inputs)?;
    let base_sig = tape.branch_signature();
    let analytic = tape.backward_vars(loss, &vars)?;
    drop(tape);

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut rel_errors = Vec::with_capacity(inputs.len());
    let (mut checked, mut skipped) = (0, 0);
    for (i, a) in analytic.iter().enumerate() {
        let (mut diff2, mut an2, mut nu2) = (0.0, 0.0, 0.0);
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            let mut side = |x: f64| -> Result<(f64, u64), E> {
                work[i].data_mut()[j] = x;
                let (tp, l, _) = eval(&work)?;
                Ok((tp.value(l).item(), tp.branch_signature()))
            };
            let (fp, sp) = side(x0 + h)?;
            let (fm, sm) = side(x0 - h)?;
            work[i].data_mut()[j] = x0;
            if sp != base_sig || sm != base_sig {
                skipped += 1;
                continue;
            }
            checked += 1;
            let numeric = (fp - fm) / (2.0 * h);
            let an = a.data()[j];
            diff2 += (an - numeric).powi(2);
            an2 += an * an;
            nu2 += numeric * numeric;
        }
        let denom = an2.sqrt().max(nu2.sqrt()).max(1e-6);
        rel_errors.push(diff2.sqrt() / denom);
    }
    Ok(GradCheckReport {
        rel_errors,
        checked,
        skipped,
    })
}
