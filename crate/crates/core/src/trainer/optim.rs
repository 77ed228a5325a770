use crate::numcore::Matrix;

/// SGD with Nesterov momentum and coupled L2 weight decay:
///
/// ```text
/// g = grad + wd * w
/// v = mu * v + g
/// w -= lr * (g + mu * v)
/// ```
#[derive(Debug, Clone)]
pub struct NesterovSgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Matrix>,
}

impl NesterovSgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut Matrix>, grads: &[Matrix], lr: f64) {
        let mu = self.momentum;
        let wd = self.weight_decay;
        for (i, (p, g)) in params.zip(grads).enumerate() {
            if self.velocity.len() <= i {
                self.velocity.push(Matrix::zeros(p.rows(), p.cols()));
            }
            let v = &mut self.velocity[i];
            for ((w, &gr), vel) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(v.as_mut_slice()) {
                let d = gr + wd * *w;
                *vel = mu * *vel + d;
                *w -= lr * (d + mu * *vel);
            }
        }
    }
}

/// Learning rate after step decay: `lr * rate^k`, `k` the number of decay
/// epochs `<= epoch` (epochs counted from 0).
pub fn decayed_lr(lr: f64, decay_epochs: &[usize], rate: f64, epoch: usize) -> f64 {
    let k = decay_epochs.iter().filter(|&&d| epoch >= d).count();
    lr * rate.powi(k as i32)
}
