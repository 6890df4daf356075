use crate::error::{Error, Result};

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of `|g_ad − g_fd| / max(1, |g_ad|, |g_fd|)`
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub checked: usize,
}

/// Compares an analytic gradient against central finite differences of
/// `value` at `theta`, over `coords` (all coordinates when `None`).
pub fn grad_check<F, G>(
    value: F,
    gradient: G,
    theta: &[f64],
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let g_ad = gradient(theta);
    if g_ad.len() != theta.len() {
        return Err(Error::shape(
            "grad_check",
            format!("gradient has {} entries, theta has {}", g_ad.len(), theta.len()),
        ));
    }
    if let Some(i) = g_ad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("analytic gradient at coordinate {i}")));
    }

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..theta.len()).collect();
            &all
        }
    };

    let mut probe = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coord: 0,
        checked: 0,
    };
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let up = value(&probe);
        probe[i] = orig - FD_STEP;
        let down = value(&probe);
        probe[i] = orig;
        let g_fd = (up - down) / (2.0 * FD_STEP);
        if !g_fd.is_finite() {
            return Err(Error::NonFinite(format!("finite difference at coordinate {i}")));
        }
        let denom = 1f64.max(g_ad[i].abs()).max(g_fd.abs());
        let rel = (g_ad[i] - g_fd).abs() / denom;
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst_coord = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix::{cross_entropy, softmax};
    use crate::numerics::{Matrix, Ops, Tape};

    #[test]
    fn sum_of_squares_is_exact() {
        let theta = [0.3, -1.2, 2.5, 0.0, 7.0];
        let report = grad_check(
            |t| t.iter().map(|x| x * x).sum(),
            |t| {
                let mut tape = Tape::new();
                let x = tape.leaf(Matrix::row_vector(t.to_vec()));
                let sq = tape.hadamard(x, x);
                let s = tape.sum(sq);
                tape.backward(s).wrt(x).into_data()
            },
            &theta,
            None,
        )
        .unwrap();
        assert_eq!(report.checked, 5);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn cross_entropy_of_softmax() {
        let theta = [0.7, -0.4, 1.9, 0.05];
        let label = 2;
        let report = grad_check(
            |t| cross_entropy(&softmax(t), label).unwrap(),
            |t| {
                let mut tape = Tape::new();
                let z = tape.leaf(Matrix::row_vector(t.to_vec()));
                let p = tape.masked_softmax(&z, &[true; 4]);
                let l = tape.cross_entropy(p, label);
                tape.backward(l).wrt(z).into_data()
            },
            &theta,
            None,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let err = grad_check(|_| 0.0, |_| vec![f64::NAN], &[1.0], None).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
