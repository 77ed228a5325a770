use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Tape, Var};

/// Layer widths `[D, hidden..., C]` and the initialization seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub init_seed: u64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, init_seed: u64) -> Result<Self> {
        let spec = Self { widths, init_seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::contract(format!(
                "an MLP needs at least input and output widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::contract(format!("zero layer width in {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    /// Weights plus biases of every layer.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weight: Matrix,
    /// `1 × fan_out`
    pub bias: Matrix,
}

/// Fully connected ReLU network; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Weights ~ U(-b, b) with `b = sqrt(6 / fan_in)` drawn from ChaCha8 seeded
/// with `spec.init_seed`, layer by layer in row-major order. Biases are zero.
pub fn init_mlp(spec: &MlpSpec) -> Result<Mlp> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let layers = spec
        .widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            Layer {
                weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized above"),
                bias: Matrix::zeros(1, fan_out),
            }
        })
        .collect();
    Ok(Mlp { layers })
}

impl Mlp {
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.weight.rows()).collect();
        if let Some(last) = self.layers.last() {
            w.push(last.weight.cols());
        }
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters in optimizer order: `W0, b0, W1, b1, ...`.
    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Logits for a batch of inputs.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = h.affine(&l.weight, &l.bias)?;
            if i < last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Records the forward pass with every parameter as a leaf. Returns the
    /// logits node and the parameter leaves in [`Mlp::params`] order.
    pub fn forward_on(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut leaves = Vec::with_capacity(2 * self.layers.len());
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let w = tape.leaf(l.weight.clone());
            let b = tape.leaf(l.bias.clone());
            leaves.push(w);
            leaves.push(b);
            h = tape.affine(h, w, b)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok((h, leaves))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let spec = MlpSpec::new(vec![4, 8, 3], 11).unwrap();
        assert_eq!(init_mlp(&spec).unwrap(), init_mlp(&spec).unwrap());
        let other = MlpSpec::new(vec![4, 8, 3], 12).unwrap();
        assert_ne!(init_mlp(&spec).unwrap(), init_mlp(&other).unwrap());
    }

    #[test]
    fn no_hidden_layer_is_one_affine_map() {
        let spec = MlpSpec::new(vec![5, 3], 0).unwrap();
        let m = init_mlp(&spec).unwrap();
        assert_eq!(m.layers.len(), 1);
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5, 0.0, 3.0]]).unwrap();
        let l = &m.layers[0];
        assert_eq!(m.forward(&x).unwrap(), x.affine(&l.weight, &l.bias).unwrap());
    }

    #[test]
    fn parameter_count() {
        let spec = MlpSpec::new(vec![4, 8, 3], 0).unwrap();
        assert_eq!(spec.param_count(), 67);
        assert_eq!(init_mlp(&spec).unwrap().param_count(), 67);
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let m = init_mlp(&MlpSpec::new(vec![6, 10, 2], 3).unwrap()).unwrap();
        let bound = 1.0;
        assert!(m.layers[0].weight.max_abs() < bound);
        assert!(m.layers.iter().all(|l| l.bias.as_slice().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn invalid_specs() {
        assert!(MlpSpec::new(vec![4], 0).is_err());
        assert!(MlpSpec::new(vec![4, 0, 2], 0).is_err());
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let m = init_mlp(&MlpSpec::new(vec![3, 5, 4, 2], 9).unwrap()).unwrap();
        let x = Matrix::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.2, -0.3]]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (out, leaves) = m.forward_on(&mut tape, xv).unwrap();
        assert_eq!(leaves.len(), 6);
        assert_eq!(tape.value(out), &m.forward(&x).unwrap());
    }
}
