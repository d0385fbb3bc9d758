use super::params::NetParams;
use super::real::Real;
use crate::error::{Error, Result};

/// Base learning rate used at 380x1030 with an unnormalized loss.
pub const FULL_RES_BASE_LR: f64 = 1e-8;
/// Base learning rate for the desk-scale networks in this crate.
pub const DESK_BASE_LR: f64 = 1e-2;
pub const DEFAULT_LR_POWER: f64 = 0.9;

/// `lr(iter) = base_lr * (1 - iter / max_iter)^power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyLrSchedule {
    pub base_lr: f64,
    pub power: f64,
    pub max_iter: usize,
}

impl PolyLrSchedule {
    pub fn new(base_lr: f64, power: f64, max_iter: usize) -> Result<Self> {
        if !(base_lr > 0.0) || max_iter == 0 || !power.is_finite() {
            return Err(Error::invalid(format!(
                "invalid schedule: base_lr {base_lr}, power {power}, max_iter {max_iter}"
            )));
        }
        Ok(Self {
            base_lr,
            power,
            max_iter,
        })
    }

    pub fn lr(&self, iter: usize) -> Result<f64> {
        if iter >= self.max_iter {
            return Err(Error::ScheduleExhausted {
                iter,
                max_iter: self.max_iter,
            });
        }
        Ok(self.base_lr * (1.0 - iter as f64 / self.max_iter as f64).powf(self.power))
    }
}

/// One plain SGD step: `params -= lr(iter) * grads`. Returns the rate used.
pub fn sgd_step<T: Real>(
    params: &mut NetParams<T>,
    grads: &NetParams<T>,
    schedule: &PolyLrSchedule,
    iter: usize,
) -> Result<f64> {
    let lr = schedule.lr(iter)?;
    if grads.convs().len() != params.convs().len() {
        return Err(Error::invalid("gradient and parameter layouts differ"));
    }
    let step = T::from_f64(lr);
    for (p, g) in params.convs_mut().iter_mut().zip(grads.convs()) {
        if p.weight.len() != g.weight.len() || p.bias.len() != g.bias.len() {
            return Err(Error::invalid(format!("gradient shape mismatch at {}", p.name)));
        }
        for (w, d) in p.weight.iter_mut().zip(&g.weight) {
            *w -= step * *d;
        }
        for (b, d) in p.bias.iter_mut().zip(&g.bias) {
            *b -= step * *d;
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints() {
        let s = PolyLrSchedule::new(0.1, 1.0, 10).unwrap();
        assert_eq!(s.lr(0).unwrap(), 0.1);
        assert!((s.lr(9).unwrap() - 0.1 / 10.0).abs() < 1e-15);
        assert!(matches!(s.lr(10), Err(Error::ScheduleExhausted { iter: 10, max_iter: 10 })));
        assert_eq!(FULL_RES_BASE_LR, 1e-8);
    }

    proptest! {
        #[test]
        fn non_increasing(power in 0.01f64..3.0, max_iter in 2usize..500) {
            let s = PolyLrSchedule::new(1.0, power, max_iter).unwrap();
            let mut prev = f64::INFINITY;
            for i in 0..max_iter {
                let lr = s.lr(i).unwrap();
                prop_assert!(lr <= prev);
                prev = lr;
            }
        }
    }
}
