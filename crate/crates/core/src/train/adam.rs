use crate::tensor::{Gradients, ParamId, ParamSet, Real};

/// Adam with bias correction. Parameters without a gradient are treated as
/// having a zero gradient.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamSet<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Adam { beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>, lr: f64) {
        self.t += 1;
        let c = |x: f64| T::from_f64_lossy(x);
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let step = c(lr * (1.0 - self.beta2.powi(self.t)).sqrt() / (1.0 - self.beta1.powi(self.t)));
        let eps = c(self.eps);
        for p in 0..params.len() {
            let Some(g) = grads.get(ParamId(p)) else { continue };
            let (m, v) = (&mut self.m[p], &mut self.v[p]);
            let data = params.get_mut(ParamId(p)).data_mut();
            for k in 0..data.len() {
                m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                data[k] = data[k] - step * m[k] / (v[k].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("x", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(&ps, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let grads = {
                let mut t = Tape::new(&ps);
                let x = t.param_named("x").unwrap();
                let sq = t.mul(x, x).unwrap();
                let s = t.sum(sq);
                t.backward(s).unwrap()
            };
            opt.step(&mut ps, &grads, 0.01);
        }
        assert!(ps.by_name("x").unwrap().data().iter().all(|v| v.abs() < 1e-3));
        assert_eq!(opt.steps(), 2000);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.insert("x", Tensor::new(vec![1], vec![1.0]).unwrap());
        let mut g = Gradients::new(1);
        g.add(id, &[0.25]);
        let mut opt = Adam::new(&ps, 0.9, 0.999, 0.0);
        opt.step(&mut ps, &g, 0.1);
        assert!((ps.get(id).data()[0] - 0.9).abs() < 1e-12);
    }
}
