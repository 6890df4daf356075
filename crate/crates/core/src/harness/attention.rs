use std::io::Write;

use crate::error::Result;
use crate::model::{Model, TokenSequence};
use crate::numerics::Matrix;

/// Cumulative `[CLS]` attention: row `i` is the mean over layers `1..=i` of
/// the head-averaged attention from `[CLS]` to every position. The result
/// is `d × len` for the unpadded sequence.
pub fn export_attention_trace(model: &Model, x: &TokenSequence) -> Result<Matrix> {
    let x = x.unpadded();
    let pred = model.forward_with_attention(&x)?;
    let rows = pred.trace.cls_attention().expect("attention recorded on request");
    let n = x.len();
    let mut sum = vec![0.0; n];
    let mut out = Matrix::zeros(rows.len(), n);
    for (i, row) in rows.iter().enumerate() {
        let layers = (i + 1) as f64;
        for (j, v) in row.iter().enumerate() {
            sum[j] += v;
            out.set(i, j, sum[j] / layers);
        }
    }
    Ok(out)
}

/// Header row of token strings, then one row per layer.
pub fn write_attention_csv<W: Write>(out: W, tokens: &[String], trace: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(tokens)?;
    for i in 0..trace.rows() {
        w.write_record(trace.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model() -> Model {
        let cfg = ModelConfig {
            depth: 4,
            hidden: 16,
            heads: 2,
            ffn: 32,
            vocab: 20,
            max_seq_len: 8,
            classes: 3,
        };
        Model::init(cfg, 3).unwrap()
    }

    #[test]
    fn first_row_and_row_sums() {
        let m = model();
        let x = TokenSequence::with_cls(&[4, 5, 6]).padded_to(8);
        let trace = export_attention_trace(&m, &x).unwrap();
        assert_eq!(trace.shape(), (4, 4));
        let pred = m.forward_with_attention(&x.unpadded()).unwrap();
        assert_eq!(trace.row(0), pred.trace.cls_attention().unwrap()[0].as_slice());
        for i in 0..4 {
            let s: f64 = trace.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_token() {
        let m = model();
        let trace = export_attention_trace(&m, &TokenSequence::with_cls(&[])).unwrap();
        assert_eq!(trace.shape(), (4, 1));
        assert!(trace.data().iter().all(|&v| v == 1.0));
    }
}
