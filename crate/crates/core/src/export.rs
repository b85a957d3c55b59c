//! CSV dumps of latent representations and forecasts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::LatentBundle;
use crate::tensor::Tensor;

/// Index of the largest entry of each row of `[.., K]`; ties go to the
/// lower index.
pub fn hard_labels(assignment: &Tensor) -> Vec<usize> {
    let k = *assignment.shape().last().unwrap_or(&1);
    assignment
        .data()
        .chunks(k.max(1))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// One row per (sample, variable): the hard group label, then the `o`
/// entries of H and the `o` entries of Ĥ.
pub fn write_embeddings_csv(path: &Path, latents: &LatentBundle) -> Result<()> {
    let s = latents.hidden.shape();
    let (b, n, o) = (s[0], s[1], s[2]);
    let labels = hard_labels(&latents.assignment);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = vec!["sample".to_string(), "variable".into(), "group".into()];
    header.extend((0..o).map(|j| format!("h_{j}")));
    header.extend((0..o).map(|j| format!("h_hat_{j}")));
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    let (h, hh) = (latents.hidden.data(), latents.filtered.data());
    for bi in 0..b {
        for i in 0..n {
            let row = bi * n + i;
            let mut fields = vec![bi.to_string(), i.to_string(), labels[row].to_string()];
            fields.extend(h[row * o..(row + 1) * o].iter().map(|v| format!("{v:?}")));
            fields.extend(hh[row * o..(row + 1) * o].iter().map(|v| format!("{v:?}")));
            writeln!(out, "{}", fields.join(",")).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Long-format forecasts: `window,anchor,horizon,variable,target,prediction`.
pub fn write_predictions_csv(path: &Path, targets: &Tensor, predictions: &Tensor, anchors: &[usize]) -> Result<()> {
    if targets.shape() != predictions.shape() || targets.rank() != 3 || anchors.len() != targets.shape()[0] {
        return Err(Error::Shape(format!(
            "targets {:?}, predictions {:?}, {} anchors",
            targets.shape(),
            predictions.shape(),
            anchors.len()
        )));
    }
    let s = targets.shape();
    let (b, h, n) = (s[0], s[1], s[2]);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "window,anchor,horizon,variable,target,prediction").map_err(io)?;
    for bi in 0..b {
        for j in 0..h {
            for i in 0..n {
                writeln!(
                    out,
                    "{bi},{},{},{i},{:?},{:?}",
                    anchors[bi],
                    j + 1,
                    targets.get(&[bi, j, i]),
                    predictions.get(&[bi, j, i])
                )
                .map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}
