use std::rc::Rc;

use crate::autograd::{record, Var};
use crate::tensor::Element;

impl<T: Element> Var<T> {
    pub fn relu(&self) -> Var<T> {
        self.leaky_relu(0.0)
    }

    /// `x` for `x > 0`, `slope * x` otherwise.
    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let slope = T::from_f64(slope);
        let value = self.value().map(|v| if v > T::zero() { v } else { v * slope });
        let x = Rc::clone(self.value_rc());
        record("leaky_relu", &[self], value, move |g| {
            Ok(vec![Some(g.zip_map(&x, "leaky_relu", |g, x| {
                if x > T::zero() {
                    g
                } else {
                    g * slope
                }
            })?)])
        })
        .expect("unary op on a single tape")
    }

    pub fn sigmoid(&self) -> Var<T> {
        let value = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        let y = Rc::new(value.clone());
        record("sigmoid", &[self], value, move |g| {
            Ok(vec![Some(g.zip_map(&y, "sigmoid", |g, y| g * y * (T::one() - y))?)])
        })
        .expect("unary op on a single tape")
    }
}
