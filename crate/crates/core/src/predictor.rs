//! Prediction head: `H★ = H + Ĥ`, then a `(1, o)` convolution with `h`
//! output channels, i.e. one affine map `o → h` shared by all variables,
//! emitting every horizon in a single pass.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, ParamGroup, ParamStore};

#[derive(Debug, Clone)]
pub struct Predictor {
    pub conv: Linear,
    pub horizon: usize,
}

impl Predictor {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, hidden: usize, horizon: usize) -> Self {
        Predictor {
            conv: Linear::new(store, rng, "predictor", ParamGroup::Generator, hidden, horizon),
            horizon,
        }
    }

    /// `[B, N, o]` → `[B, h, N]`.
    pub fn predict<'t>(&self, p: &Bound<'t>, h_star: Var<'t>) -> Result<Var<'t>> {
        let shape = h_star.shape();
        if shape.len() != 3 || shape[2] != self.conv.in_dim {
            return Err(Error::Shape(format!(
                "predictor expects [B, N, {}], got {shape:?}",
                self.conv.in_dim
            )));
        }
        Ok(self.conv.forward(p, h_star).transpose_last2())
    }
}

/// Element-wise `H + Ĥ`.
pub fn combine<'t>(h: Var<'t>, h_hat: Var<'t>) -> Result<Var<'t>> {
    if h.shape() != h_hat.shape() {
        return Err(Error::Shape(format!("combine: {:?} vs {:?}", h.shape(), h_hat.shape())));
    }
    Ok(h.add(h_hat))
}

/// Mean over samples of `(1/N) Σ_i ‖Y_i − Ŷ_i‖²` across all horizons, for
/// `[B, h, N]` tensors.
pub fn forecasting_loss<'t>(y: Var<'t>, y_hat: Var<'t>) -> Result<Var<'t>> {
    let shape = y.shape();
    if shape != y_hat.shape() || shape.len() != 3 {
        return Err(Error::Shape(format!(
            "forecasting loss: {shape:?} vs {:?}",
            y_hat.shape()
        )));
    }
    let rows = (shape[0] * shape[2]) as f64;
    Ok(y.sub(y_hat).square().sum().scale(1.0 / rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(o: usize, h: usize) -> (ParamStore, Predictor) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Predictor::new(&mut store, &mut rng, o, h);
        (store, p)
    }

    #[test]
    fn combine_cases() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(&[1, 1, 2], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(&[1, 1, 2], vec![3.0, 4.0]).unwrap());
        assert_eq!(combine(a, b).unwrap().value().data(), &[4.0, 6.0]);
        let z = tape.constant(Tensor::zeros(&[1, 1, 2]));
        assert_eq!(*combine(a, z).unwrap().value(), *a.value());
        assert!(combine(a, a.scale(-1.0))
            .unwrap()
            .value()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let c = tape.constant(Tensor::zeros(&[1, 2, 1]));
        assert!(combine(a, c).is_err());
    }

    #[test]
    fn zero_kernel_broadcasts_bias() {
        let (mut store, pred) = setup(3, 2);
        pred.conv.set_constant_output(&mut store, &[0.5, -1.5]);
        let tape = Tape::new();
        let p = store.bind(&tape, |_| false);
        let h = tape.constant(Tensor::filled(&[2, 4, 3], 7.0));
        let y = pred.predict(&p, h).unwrap().value();
        assert_eq!(y.shape(), &[2, 2, 4]);
        for b in 0..2 {
            for i in 0..4 {
                assert_eq!(y.get(&[b, 0, i]), 0.5);
                assert_eq!(y.get(&[b, 1, i]), -1.5);
            }
        }
    }

    #[test]
    fn one_hot_kernel_selects_feature() {
        let (mut store, pred) = setup(3, 1);
        store.set(
            pred.conv.weight,
            Tensor::from_vec(&[3, 1], vec![1.0, 0.0, 0.0]).unwrap(),
        );
        store.set(pred.conv.bias, Tensor::zeros(&[1]));
        let tape = Tape::new();
        let p = store.bind(&tape, |_| false);
        let hv = Tensor::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = pred.predict(&p, tape.constant(hv)).unwrap().value();
        assert_eq!(y.data(), &[1.0, 4.0]);
    }

    #[test]
    fn small_affine_case() {
        let (mut store, pred) = setup(2, 2);
        // kernel_j is column j of the weight
        store.set(pred.conv.weight, Tensor::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.5]]));
        store.set(pred.conv.bias, Tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap());
        let tape = Tape::new();
        let p = store.bind(&tape, |_| false);
        let hv = Tensor::from_vec(&[1, 2, 2], vec![3.0, 1.0, -1.0, 2.0]).unwrap();
        let y = pred.predict(&p, tape.constant(hv)).unwrap().value();
        // var0 (3,1): h0 = 3+2+0.1 = 5.1, h1 = -3+0.5+0.2 = -2.3
        // var1 (-1,2): h0 = -1+4+0.1 = 3.1, h1 = 1+1+0.2 = 2.2
        let expected = [5.1, 3.1, -2.3, 2.2];
        for (a, e) in y.data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_cases() {
        let tape = Tape::new();
        let y = tape.constant(Tensor::filled(&[1, 1, 1], 3.0));
        let yh = tape.constant(Tensor::filled(&[1, 1, 1], 1.0));
        assert_eq!(forecasting_loss(y, yh).unwrap().value().item(), 4.0);
        assert_eq!(forecasting_loss(y, y).unwrap().value().item(), 0.0);
        // B=1, h=2, N=2: Y = [[1,2],[3,4]], Ŷ = [[0,2],[5,3]]
        let y = tape.constant(Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let yh = tape.constant(Tensor::from_vec(&[1, 2, 2], vec![0.0, 2.0, 5.0, 3.0]).unwrap());
        // var0: 1 + 4 = 5 ; var1: 0 + 1 = 1 ; mean over N = 3
        assert_eq!(forecasting_loss(y, yh).unwrap().value().item(), 3.0);
    }
}
