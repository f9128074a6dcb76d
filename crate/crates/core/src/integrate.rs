//! Classical fixed-step fourth-order Runge–Kutta.

/// A state that supports `self + h * rate`, where `rate` has the same shape.
pub trait OdeState: Sized {
    fn add_scaled(&self, rate: &Self, h: f64) -> Self;
}

impl OdeState for Vec<f64> {
    fn add_scaled(&self, rate: &Self, h: f64) -> Self {
        self.iter().zip(rate).map(|(x, r)| x + h * r).collect()
    }
}

impl<S: OdeState> OdeState for Vec<S> {
    fn add_scaled(&self, rate: &Self, h: f64) -> Self {
        self.iter().zip(rate).map(|(x, r)| x.add_scaled(r, h)).collect()
    }
}

/// One RK4 step. `rhs(t, y, stage)` is called with stages 0..4 in order.
pub fn rk4_step<S, E, F>(y: &S, t: f64, h: f64, mut rhs: F) -> Result<S, E>
where
    S: OdeState,
    F: FnMut(f64, &S, usize) -> Result<S, E>,
{
    let k1 = rhs(t, y, 0)?;
    let k2 = rhs(t + 0.5 * h, &y.add_scaled(&k1, 0.5 * h), 1)?;
    let k3 = rhs(t + 0.5 * h, &y.add_scaled(&k2, 0.5 * h), 2)?;
    let k4 = rhs(t + h, &y.add_scaled(&k3, h), 3)?;
    Ok(y.add_scaled(&k1, h / 6.0)
        .add_scaled(&k2, h / 3.0)
        .add_scaled(&k3, h / 3.0)
        .add_scaled(&k4, h / 6.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn integrate(h: f64, t_end: f64) -> f64 {
        // y' = -2 t y, y(0) = 1  =>  y = exp(-t^2)
        let steps = (t_end / h).round() as usize;
        let mut y = vec![1.0];
        for k in 0..steps {
            y = rk4_step(&y, k as f64 * h, h, |t, y: &Vec<f64>, _| Ok::<_, Infallible>(vec![-2.0 * t * y[0]])).unwrap();
        }
        y[0]
    }

    #[test]
    fn fourth_order_convergence() {
        let exact = (-1.0f64).exp();
        let e1 = (integrate(0.1, 1.0) - exact).abs();
        let e2 = (integrate(0.05, 1.0) - exact).abs();
        let order = (e1 / e2).log2();
        assert!(order > 3.8 && order < 4.2, "order {order}");
    }

    #[test]
    fn stages_called_in_order() {
        let mut seen = Vec::new();
        let _ = rk4_step(&vec![0.0], 0.0, 1.0, |t, _y: &Vec<f64>, s| {
            seen.push((s, t));
            Ok::<_, Infallible>(vec![1.0])
        });
        assert_eq!(seen, vec![(0, 0.0), (1, 0.5), (2, 0.5), (3, 1.0)]);
    }
}
