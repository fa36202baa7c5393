use crate::error::{Error, Result};

pub const CNN_WEIGHT: f64 = 4.0;
pub const RNN_WEIGHT: f64 = 1.0;

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-5 {
        return Err(Error::invalid(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Weighted average `(w_cnn·p_cnn + w_rnn·p_rnn) / (w_cnn + w_rnn)` of two
/// class-probability vectors.
///
/// Evaluated as `p_cnn + t·(p_rnn - p_cnn)` with `t = w_rnn / (w_cnn + w_rnn)`,
/// so fusing a vector with itself returns it bit for bit.
pub fn fuse_scores(p_cnn: &[f64], p_rnn: &[f64], w_cnn: f64, w_rnn: f64) -> Result<Vec<f64>> {
    if p_cnn.len() != p_rnn.len() || p_cnn.is_empty() {
        return Err(Error::invalid(format!(
            "cannot fuse {} and {} class scores",
            p_cnn.len(),
            p_rnn.len()
        )));
    }
    if !(w_cnn >= 0.0 && w_rnn >= 0.0 && w_cnn + w_rnn > 0.0) || !(w_cnn + w_rnn).is_finite() {
        return Err(Error::invalid(format!(
            "bad fusion weights {w_cnn}:{w_rnn}"
        )));
    }
    check_distribution("cnn scores", p_cnn)?;
    check_distribution("rnn scores", p_rnn)?;
    let t = w_rnn / (w_cnn + w_rnn);
    Ok(p_cnn
        .iter()
        .zip(p_rnn)
        .map(|(a, b)| a + t * (b - a))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_inputs_pass_through() {
        let p = [0.1, 0.7, 0.2];
        assert_eq!(fuse_scores(&p, &p, CNN_WEIGHT, RNN_WEIGHT).unwrap(), p);
    }

    #[test]
    fn rejects_mismatch() {
        assert!(fuse_scores(&[1.0], &[0.5, 0.5], 4.0, 1.0).is_err());
        assert!(fuse_scores(&[0.9, 0.3], &[0.5, 0.5], 4.0, 1.0).is_err());
        assert!(fuse_scores(&[0.5, 0.5], &[0.5, 0.5], -1.0, 1.0).is_err());
    }
}
