/// One parameter block handed to a visitor: values, their gradient buffer
/// (absent for non-trainable state such as running statistics) and the shape
/// used when serializing.
pub struct ParamSlot<'a> {
    pub name: &'a str,
    pub shape: (usize, usize),
    pub values: &'a mut [f64],
    pub grads: Option<&'a mut [f64]>,
}

/// Anything that owns parameter blocks. Visiting order is fixed, so it doubles
/// as the serialization and optimizer-slot order.
pub trait Parameterized {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamSlot<'_>));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |slot| {
            if let Some(g) = slot.grads {
                g.fill(0.0);
            }
        });
    }

    /// Number of trainable scalars.
    fn trainable_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |slot| {
            if slot.grads.is_some() {
                n += slot.values.len();
            }
        });
        n
    }
}
